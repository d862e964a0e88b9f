#include "config.hpp"

#include "epicalib/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

namespace epicalib::cli {
namespace {

using nlohmann::json;

// Typed access to one JSON object; unknown keys are rejected by finish().
class Fields {
public:
    Fields(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
        if (!obj_.is_object()) throw ConfigError(fmt::format("field '{}': expected an object", path_));
    }

    std::string name(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

    const json* find(const std::string& key) {
        seen_.insert(key);
        const auto it = obj_.find(key);
        return it == obj_.end() ? nullptr : &*it;
    }

    template <class T>
    std::optional<T> get(const std::string& key) {
        const json* j = find(key);
        if (!j) return std::nullopt;
        return convert<T>(*j, name(key));
    }

    template <class T>
    void read(const std::string& key, T& into) {
        if (auto v = get<T>(key)) into = *v;
    }

    void finish() const {
        for (const auto& [k, v] : obj_.items())
            if (!seen_.count(k)) throw ConfigError(fmt::format("field '{}': unknown key", name(k)));
    }

    template <class T>
    static T convert(const json& j, const std::string& field) {
        if constexpr (std::is_same_v<T, bool>) {
            if (!j.is_boolean()) throw ConfigError(fmt::format("field '{}': expected true or false", field));
            return j.get<bool>();
        } else if constexpr (std::is_same_v<T, std::uint64_t>) {
            if (!j.is_number_integer() || (!j.is_number_unsigned() && j.get<std::int64_t>() < 0))
                throw ConfigError(fmt::format("field '{}': expected a nonnegative integer", field));
            return j.get<std::uint64_t>();
        } else if constexpr (std::is_integral_v<T>) {
            if (!j.is_number_integer()) throw ConfigError(fmt::format("field '{}': expected an integer", field));
            return j.get<T>();
        } else if constexpr (std::is_floating_point_v<T>) {
            if (!j.is_number()) throw ConfigError(fmt::format("field '{}': expected a number", field));
            return j.get<T>();
        } else {
            if (!j.is_string()) throw ConfigError(fmt::format("field '{}': expected a string", field));
            return j.get<std::string>();
        }
    }

private:
    const json& obj_;
    std::string path_;
    std::set<std::string> seen_;
};

int compartment_index(const std::string& name, const std::string& field) {
    for (int c = 0; c < kCompartmentCount; ++c)
        if (compartment_name(c) == name) return c;
    throw ConfigError(fmt::format("field '{}': unknown compartment '{}'", field, name));
}

template <class Fn>
auto with_field(const std::string& field, Fn&& fn) {
    try {
        return fn();
    } catch (const ConfigError&) {
        throw;
    } catch (const Error& e) {
        throw ConfigError(fmt::format("field '{}': {}", field, e.what()));
    }
}

ScenarioSpec parse_scenario(const json& j, bool& every_days_set) {
    Fields f(j, "scenario");
    const std::string gt_name = f.get<std::string>("ground_truth").value_or("linear");
    const GroundTruth gt = with_field(f.name("ground_truth"), [&] { return parse_ground_truth(gt_name); });
    ScenarioSpec s = ScenarioSpec::of(gt);
    f.read("noise_sd", s.noise_sd);
    f.read("horizon", s.horizon);
    if (auto e = f.get<int>("every_days")) {
        s.every_days = *e;
        every_days_set = true;
    }
    if (const json* hidden = f.find("hidden")) {
        if (!hidden->is_array()) throw ConfigError(fmt::format("field '{}': expected a list", f.name("hidden")));
        for (const auto& h : *hidden) {
            const auto c = compartment_index(Fields::convert<std::string>(h, f.name("hidden")), f.name("hidden"));
            s.mask[static_cast<std::size_t>(c)] = false;
        }
    }
    f.finish();
    with_field("scenario", [&] { s.validate(); });
    return s;
}

DataSource parse_data(const json& j) {
    Fields f(j, "data");
    DataSource d;
    const auto path = f.get<std::string>("path");
    const auto country = f.get<std::string>("country");
    if (!path) throw ConfigError("field 'data.path': required");
    if (!country) throw ConfigError("field 'data.country': required");
    d.path = *path;
    d.country = *country;
    f.read("start", d.start);
    f.read("days", d.days);
    f.finish();
    if (d.days < 2) throw ConfigError("field 'data.days': need at least two days");
    if (!std::ifstream(d.path)) throw ConfigError(fmt::format("field 'data.path': cannot open '{}'", d.path));
    return d;
}

SyntheticTarget parse_synthetic(const json& j) {
    Fields f(j, "synthetic");
    SyntheticTarget s;
    f.read("seed", s.seed);
    f.read("days", s.days);
    f.read("population", s.population);
    f.read("initial_infectious", s.initial_infectious);
    f.read("beta", s.beta);
    f.read("delta", s.delta);
    f.read("gamma", s.gamma);
    f.finish();
    if (s.days < 2) throw ConfigError("field 'synthetic.days': need at least two days");
    if (!(s.initial_infectious > 0.0 && s.population > s.initial_infectious))
        throw ConfigError("field 'synthetic.population': must exceed initial_infectious > 0");
    if (!(s.beta >= 0.0 && s.delta >= 0.0 && s.gamma >= 0.0))
        throw ConfigError("field 'synthetic': rates must be nonnegative");
    return s;
}

std::vector<std::uint64_t> parse_seeds(const json& j) {
    if (!j.is_array() || j.empty()) throw ConfigError("field 'seeds': expected a nonempty list");
    std::vector<std::uint64_t> out;
    for (const auto& s : j) out.push_back(Fields::convert<std::uint64_t>(s, "seeds"));
    return out;
}

void check_acquisition_keys(const json& overrides, const std::string& field) {
    AcquisitionSpec probe;
    apply_acquisition_overrides(probe, overrides, field);
}

}  // namespace

RealSeries DataSource::load() const { return load_covid_csv(path, country, start, days); }

RealSeries SyntheticTarget::generate() const {
    const auto net = std::make_shared<const RateNetwork>(RateNetwork::random(network_seed()));
    const Trajectory tr = simulate(RateSpec::neural(net, beta, delta, gamma),
                                   {population - initial_infectious, initial_infectious, 0.0, 0.0},
                                   TimeGrid::daily(days - 1));
    RealSeries s;
    s.country = "synthetic";
    const long first = parse_iso_date("2020-06-01");
    for (int t = 0; t < days; ++t) {
        s.dates.push_back(format_iso_date(first + t));
        s.infectious.push_back(tr.states[static_cast<std::size_t>(t)].i);
    }
    return s;
}

void apply_acquisition_overrides(AcquisitionSpec& spec, const json& overrides, const std::string& field) {
    Fields f(overrides, field);
    f.read("K", spec.K);
    f.read("L", spec.L);
    f.read("restarts", spec.restarts);
    f.read("raw_candidates", spec.raw_candidates);
    f.read("inner_restarts", spec.inner_restarts);
    f.read("inner_max_iter", spec.inner_max_iter);
    f.read("outer_max_iter", spec.outer_max_iter);
    f.read("outer_pattern_evals", spec.outer_pattern_evals);
    f.read("full_z_enumeration", spec.full_z_enumeration);
    if (const json* zs = f.find("z_subsets")) {
        if (!zs->is_array()) throw ConfigError(fmt::format("field '{}': expected a list", f.name("z_subsets")));
        spec.z_subsets.clear();
        for (const auto& z : *zs) {
            const auto text = Fields::convert<std::string>(z, f.name("z_subsets"));
            if (text.size() != 4 || text.find_first_not_of("01") != std::string::npos)
                throw ConfigError(fmt::format("field '{}': '{}' is not a 4-digit 0/1 mask", f.name("z_subsets"), text));
            spec.z_subsets.push_back({text[0] == '1', text[1] == '1', text[2] == '1', text[3] == '1'});
        }
    }
    f.finish();
    with_field(field, [&] { spec.validate(); });
}

std::vector<AcquisitionKind> parse_method_list(const std::string& text) {
    std::vector<AcquisitionKind> out;
    std::stringstream in(text);
    std::string item;
    while (std::getline(in, item, ','))
        if (!item.empty()) out.push_back(parse_acquisition_kind(item));
    if (out.empty()) throw ConfigError("at least one method is required");
    return out;
}

AcquisitionSpec RunConfig::acquisition_for(AcquisitionKind kind) const {
    AcquisitionSpec s = AcquisitionSpec::preset(kind, profile);
    apply_acquisition_overrides(s, acquisition);
    return s;
}

BOConfig RunConfig::bo_config(AcquisitionKind kind, std::uint64_t seed) const {
    BOConfig c;
    c.acquisition = acquisition_for(kind);
    c.iterations = iterations;
    c.seed = seed;
    c.gp_restarts = gp_restarts;
    c.gp_max_iter = gp_max_iter;
    c.record_wall_time = record_wall_time;
    return c;
}

ScenarioSpec RunConfig::scenario_for(std::uint64_t seed) const {
    ScenarioSpec s = *scenario;
    if (profile == BudgetProfile::Fast && !every_days_set) s.every_days = 3;
    s.seed = seed;
    return s;
}

json read_json_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError(fmt::format("cannot open config file '{}'", path));
    try {
        return json::parse(in);
    } catch (const json::parse_error& e) {
        throw ConfigError(fmt::format("{}: {}", path, e.what()));
    }
}

RunConfig parse_run_config(const json& doc, const Overrides& ov) {
    Fields f(doc, "");
    RunConfig c;
    if (const json* s = f.find("scenario")) c.scenario = parse_scenario(*s, c.every_days_set);
    if (const json* d = f.find("data")) c.data = parse_data(*d);
    if (c.scenario.has_value() == c.data.has_value())
        throw ConfigError("field 'scenario': give exactly one of 'scenario' and 'data'");
    if (const json* m = f.find("methods")) {
        if (!m->is_array()) throw ConfigError("field 'methods': expected a list");
        for (const auto& name : *m)
            c.methods.push_back(with_field("methods", [&] {
                return parse_acquisition_kind(Fields::convert<std::string>(name, "methods"));
            }));
    }
    f.read("iterations", c.iterations);
    if (const json* s = f.find("seeds")) c.seeds = parse_seeds(*s);
    if (auto p = f.get<std::string>("profile")) c.profile = with_field("profile", [&] { return parse_budget_profile(*p); });
    if (const json* a = f.find("acquisition")) c.acquisition = *a;
    f.read("gp_restarts", c.gp_restarts);
    f.read("gp_max_iter", c.gp_max_iter);
    f.read("record_wall_time", c.record_wall_time);
    f.read("out", c.out);
    f.finish();

    if (ov.methods) c.methods = with_field("--method", [&] { return parse_method_list(*ov.methods); });
    if (ov.iterations) c.iterations = *ov.iterations;
    if (ov.seed) c.seeds = {*ov.seed};
    if (ov.profile) c.profile = with_field("--profile", [&] { return parse_budget_profile(*ov.profile); });
    if (ov.out) c.out = *ov.out;

    if (c.methods.empty()) throw ConfigError("field 'methods': at least one method is required");
    if (c.iterations < 0) throw ConfigError("field 'iterations': must be nonnegative");
    if (c.gp_restarts < 0 || c.gp_max_iter < 1) throw ConfigError("field 'gp_restarts': invalid GP fit budget");
    std::set<std::uint64_t> unique(c.seeds.begin(), c.seeds.end());
    if (unique.size() != c.seeds.size()) throw ConfigError("field 'seeds': duplicate seed");
    check_acquisition_keys(c.acquisition, "acquisition");
    if (c.out.empty()) throw ConfigError("field 'out': empty output directory");
    return c;
}

TwoStageRunConfig parse_twostage_config(const json& doc, const Overrides& ov) {
    Fields f(doc, "");
    TwoStageRunConfig c;
    auto& ts = c.two_stage;
    ts.stage1.iterations = 50;
    if (const json* d = f.find("data")) c.data = parse_data(*d);
    if (const json* s = f.find("synthetic")) c.synthetic = parse_synthetic(*s);
    if (c.data.has_value() == c.synthetic.has_value())
        throw ConfigError("field 'data': give exactly one of 'data' and 'synthetic'");
    if (auto p = f.get<std::string>("profile")) c.profile = with_field("profile", [&] { return parse_budget_profile(*p); });
    if (const json* s1 = f.find("stage1")) {
        Fields g(*s1, "stage1");
        if (auto m = g.get<std::string>("method"))
            c.method = with_field("stage1.method", [&] { return parse_acquisition_kind(*m); });
        g.read("iterations", ts.stage1.iterations);
        g.read("seed", ts.stage1.seed);
        g.read("gp_restarts", ts.stage1.gp_restarts);
        g.read("gp_max_iter", ts.stage1.gp_max_iter);
        if (const json* a = g.find("acquisition")) c.acquisition = *a;
        g.finish();
    }
    if (const json* s2 = f.find("stage2")) {
        Fields g(*s2, "stage2");
        g.read("window", ts.stage2.window);
        g.read("iterations", ts.stage2.iterations);
        g.read("learning_rate", ts.stage2.learning_rate);
        g.read("seed", ts.stage2.seed);
        g.read("eval_stride", ts.stage2.eval_stride);
        g.finish();
    }
    f.read("nn_init_seed", ts.nn_init_seed);
    f.read("out", c.out);
    f.finish();

    if (ov.methods) {
        const auto ms = with_field("--method", [&] { return parse_method_list(*ov.methods); });
        if (ms.size() != 1) throw ConfigError("field '--method': stage 1 takes a single method");
        c.method = ms.front();
    }
    if (ov.iterations) ts.stage1.iterations = *ov.iterations;
    if (ov.seed) {
        ts.stage1.seed = *ov.seed;
        ts.stage2.seed = *ov.seed;
        ts.nn_init_seed = *ov.seed;
    }
    if (ov.profile) c.profile = with_field("--profile", [&] { return parse_budget_profile(*ov.profile); });
    if (ov.out) c.out = *ov.out;

    if (ts.stage1.iterations < 0) throw ConfigError("field 'stage1.iterations': must be nonnegative");
    ts.stage1.acquisition = AcquisitionSpec::preset(c.method, c.profile);
    apply_acquisition_overrides(ts.stage1.acquisition, c.acquisition, "stage1.acquisition");
    const int days = c.data ? c.data->days : c.synthetic->days;
    with_field("stage2", [&] { ts.stage2.validate(static_cast<std::size_t>(days)); });
    if (c.out.empty()) throw ConfigError("field 'out': empty output directory");
    return c;
}

}  // namespace epicalib::cli
