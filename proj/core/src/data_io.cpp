#include "epicalib/data_io.hpp"

#include "epicalib/errors.hpp"
#include "epicalib/optim.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <random>
#include <sstream>

namespace epicalib {
namespace {

constexpr std::uint64_t kNoiseStream = 0x401;

std::vector<std::string_view> split(std::string_view line, char sep) {
    std::vector<std::string_view> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find(sep, start);
        out.push_back(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.back() == '\r' || s.back() == ' ')) s.remove_suffix(1);
    while (!s.empty() && s.front() == ' ') s.remove_prefix(1);
    return s;
}

bool parse_int(std::string_view s, int& out) {
    const auto r = std::from_chars(s.data(), s.data() + s.size(), out);
    return r.ec == std::errc{} && r.ptr == s.data() + s.size();
}

}  // namespace

std::string_view to_string(GroundTruth gt) {
    switch (gt) {
        case GroundTruth::Linear: return "linear";
        case GroundTruth::NoisyLinear: return "noisy";
        case GroundTruth::NonlinearLambda: return "nonlinear";
    }
    return "?";
}

GroundTruth parse_ground_truth(std::string_view name) {
    for (auto gt : {GroundTruth::Linear, GroundTruth::NoisyLinear, GroundTruth::NonlinearLambda})
        if (to_string(gt) == name) return gt;
    throw ConfigError(fmt::format("unknown scenario '{}' (expected linear, noisy or nonlinear)", name));
}

ScenarioSpec ScenarioSpec::of(GroundTruth gt) {
    ScenarioSpec s;
    s.ground_truth = gt;
    if (gt == GroundTruth::NoisyLinear) s.noise_sd = 0.01;
    return s;
}

void ScenarioSpec::validate() const {
    if (!(noise_sd >= 0.0) || !std::isfinite(noise_sd)) throw ConfigError("noise_sd must be finite and nonnegative");
    if (every_days < 1) throw ConfigError("observation spacing must be at least one day");
    if (!(horizon > 0.0)) throw ConfigError("horizon must be positive");
    if (std::none_of(mask.begin(), mask.end(), [](bool b) { return b; })) throw EmptyMask("scenario mask is empty");
}

std::array<double, 4> ground_truth_parameters() { return {0.1, 0.9, 0.2, 0.2}; }

RateSpec ground_truth_rates(GroundTruth gt) {
    const auto p = ground_truth_parameters();
    if (gt == GroundTruth::NonlinearLambda) return RateSpec::log_nonlinear({0.3, 0.06, 0.12}, p[1], p[2], p[3]);
    return RateSpec::linear(p[0], p[1], p[2], p[3]);
}

Scenario make_scenario(const ScenarioSpec& spec) {
    spec.validate();
    Scenario sc;
    sc.spec = spec;
    const TimeGrid grid = TimeGrid::daily(spec.horizon, 0.05, spec.every_days);
    sc.truth_trajectory = simulate(ground_truth_rates(spec.ground_truth), kScenarioInit, grid);
    sc.truth = ObservationSet::from_trajectory(sc.truth_trajectory, spec.mask);
    sc.observations = sc.truth;
    if (spec.noise_sd > 0.0) {
        std::mt19937_64 rng(mix_seed(spec.seed, kNoiseStream));
        std::normal_distribution<double> noise(0.0, spec.noise_sd);
        for (auto& row : sc.observations.rows)
            for (auto& v : row)
                if (v) *v += noise(rng);
    }
    return sc;
}

Trajectory simulate_linear(const Eigen::VectorXd& x, const ScenarioSpec& spec) {
    if (x.size() != 4) throw DomainError("linear SIQR model takes four parameters");
    return simulate(RateSpec::linear(x(0), x(1), x(2), x(3)), kScenarioInit,
                    TimeGrid::daily(spec.horizon, 0.05, spec.every_days));
}

double eval_against_truth(const Trajectory& sim, const Scenario& scenario) {
    return std::log10(mse_from(objective(sim, scenario.truth)));
}

double eval_against_truth(const Eigen::VectorXd& x, const Scenario& scenario) {
    return eval_against_truth(simulate_linear(x, scenario.spec), scenario);
}

std::vector<double> lambda_series(const Trajectory& traj, const RateSpec& spec) {
    std::vector<double> out;
    out.reserve(traj.states.size());
    for (const auto& s : traj.states) {
        const double n = s.total();
        const CompartmentState f{s.s / n, s.i / n, s.q / n, s.r / n};
        out.push_back(eval_rates(f, spec).lambda);
    }
    return out;
}

long parse_iso_date(std::string_view text) {
    using namespace std::chrono;
    text = trim(text);
    const auto parts = split(text, '-');
    int y = 0, m = 0, d = 0;
    if (parts.size() != 3 || parts[0].size() != 4 || parts[1].size() != 2 || parts[2].size() != 2 ||
        !parse_int(parts[0], y) || !parse_int(parts[1], m) || !parse_int(parts[2], d))
        throw DomainError(fmt::format("'{}' is not an ISO date", text));
    const year_month_day ymd{year{y}, month{static_cast<unsigned>(m)}, day{static_cast<unsigned>(d)}};
    if (!ymd.ok()) throw DomainError(fmt::format("'{}' is not a valid calendar date", text));
    return sys_days{ymd}.time_since_epoch().count();
}

std::string format_iso_date(long days) {
    using namespace std::chrono;
    const year_month_day ymd{sys_days{std::chrono::days{days}}};
    return fmt::format("{:04}-{:02}-{:02}", static_cast<int>(ymd.year()), static_cast<unsigned>(ymd.month()),
                       static_cast<unsigned>(ymd.day()));
}

RealSeries read_covid_csv(std::istream& in, const std::string& country, std::string_view start, int days) {
    if (days < 1) throw DomainError("series length must be positive");
    const long first = parse_iso_date(start);
    std::string line;
    long lineno = 0;
    if (!std::getline(in, line)) throw MalformedRow("empty file, expected header date,country,infectious", 1);
    ++lineno;
    if (trim(line) != "date,country,infectious")
        throw MalformedRow(fmt::format("unexpected header '{}'", trim(line)), lineno);

    std::map<std::pair<std::string, long>, long> seen;  // (country, day) -> line
    std::map<long, double> rows;
    bool country_seen = false;
    while (std::getline(in, line)) {
        ++lineno;
        const std::string_view body = trim(line);
        if (body.empty()) continue;
        const auto fields = split(body, ',');
        if (fields.size() != 3) throw MalformedRow(fmt::format("line {}: expected 3 fields", lineno), lineno);
        long day = 0;
        try {
            day = parse_iso_date(fields[0]);
        } catch (const DomainError& e) {
            throw MalformedRow(fmt::format("line {}: {}", lineno, e.what()), lineno);
        }
        const std::string name(trim(fields[1]));
        if (name.empty()) throw MalformedRow(fmt::format("line {}: empty country", lineno), lineno);
        double value = 0.0;
        const auto vtext = trim(fields[2]);
        const auto r = std::from_chars(vtext.data(), vtext.data() + vtext.size(), value);
        if (r.ec != std::errc{} || r.ptr != vtext.data() + vtext.size() || !std::isfinite(value) || value < 0.0)
            throw MalformedRow(fmt::format("line {}: bad infectious count '{}'", lineno, vtext), lineno);
        const auto [it, inserted] = seen.emplace(std::make_pair(name, day), lineno);
        if (!inserted)
            throw MalformedRow(fmt::format("line {}: duplicate row for {} on {} (first at line {})", lineno, name,
                                           format_iso_date(day), it->second),
                               lineno);
        if (name != country) continue;
        country_seen = true;
        if (day >= first && day < first + days) rows[day] = value;
    }
    if (!country_seen) throw MissingCountry(fmt::format("no rows for country '{}'", country));

    std::vector<std::string> missing;
    for (long d = first; d < first + days; ++d)
        if (!rows.count(d)) missing.push_back(format_iso_date(d));
    if (!missing.empty())
        throw GapInSeries(fmt::format("{} is missing {} day(s) starting with {}", country, missing.size(),
                                      missing.front()),
                          missing);

    RealSeries s;
    s.country = country;
    for (const auto& [d, v] : rows) {
        s.dates.push_back(format_iso_date(d));
        s.infectious.push_back(v);
    }
    return s;
}

RealSeries load_covid_csv(const std::string& path, const std::string& country, std::string_view start, int days) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open data file '{}'", path));
    return read_covid_csv(in, country, start, days);
}

void write_covid_csv(std::ostream& out, const RealSeries& series) {
    out << "date,country,infectious\n";
    for (std::size_t i = 0; i < series.size(); ++i)
        out << series.dates[i] << ',' << series.country << ',' << fmt::format("{:.17g}", series.infectious[i]) << '\n';
}

}  // namespace epicalib
