#include "commands.hpp"

#include "epicalib/errors.hpp"

#include <fmt/format.h>
#include <fmt/ostream.h>

#include <atomic>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <map>
#include <mutex>
#include <sstream>
#include <thread>

namespace epicalib::cli {
namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void write_file(const fs::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(fmt::format("cannot write '{}'", path.string()));
    out << text;
    if (!out) throw Error(fmt::format("write to '{}' failed", path.string()));
}

std::string read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw Error(fmt::format("cannot read '{}'", path.string()));
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

double json_number(const json& j) { return j.is_null() ? std::nan("") : j.get<double>(); }

std::pair<double, double> mean_sd(const std::vector<double>& v) {
    double sum = 0.0;
    for (double x : v) sum += x;
    const double mean = sum / static_cast<double>(v.size());
    if (v.size() < 2) return {mean, 0.0};
    double ss = 0.0;
    for (double x : v) ss += (x - mean) * (x - mean);
    return {mean, std::sqrt(ss / static_cast<double>(v.size() - 1))};
}

// Runs grouped by method in order of first appearance.
std::vector<std::pair<std::string, std::vector<const RunRecord*>>> by_method(const std::vector<RunRecord>& runs) {
    std::vector<std::pair<std::string, std::vector<const RunRecord*>>> groups;
    for (const auto& r : runs) {
        auto it = std::find_if(groups.begin(), groups.end(), [&](const auto& g) { return g.first == r.method; });
        if (it == groups.end()) {
            groups.push_back({r.method, {}});
            it = std::prev(groups.end());
        }
        it->second.push_back(&r);
    }
    return groups;
}

std::vector<std::string> split_csv_line(const std::string& line) {
    std::vector<std::string> out;
    std::stringstream in(line);
    std::string cell;
    while (std::getline(in, cell, ',')) out.push_back(cell);
    if (!line.empty() && line.back() == ',') out.emplace_back();
    return out;
}

double parse_number(const std::string& s) { return s.empty() ? std::nan("") : std::stod(s); }

std::vector<std::string> parameter_names(const ParameterSpace& space) {
    std::vector<std::string> names;
    for (const auto& d : space.dimensions()) names.push_back(d.name);
    return names;
}

// Calibration problem shared by all runs of one config.
struct Problem {
    ParameterSpace space;
    std::optional<RealSeries> series;

    Simulator simulator(const ScenarioSpec* spec) const {
        if (spec) {
            const ScenarioSpec s = *spec;
            return [s](const Eigen::VectorXd& x) { return simulate_linear(x, s); };
        }
        const int days = static_cast<int>(series->size());
        const double unit = series->initial();
        return [days, unit](const Eigen::VectorXd& x) { return simulate_real(x, days, unit); };
    }
};

}  // namespace

std::string number(double v) {
    if (std::isnan(v)) return "";
    return fmt::format("{:.17g}", v);
}

RunRecord make_record(const std::string& method, std::uint64_t seed, const BORunState& state, double final_logmse) {
    RunRecord r;
    r.method = method;
    r.seed = seed;
    for (const auto& row : state.log) {
        if (static_cast<std::size_t>(row.iter) >= r.best_logmse.size())
            r.best_logmse.resize(static_cast<std::size_t>(row.iter) + 1);
        r.best_logmse[static_cast<std::size_t>(row.iter)] = row.best_logmse;
        r.wall_ms += row.wall_ms;
    }
    const auto& rec = state.recommendation;
    r.x_best.assign(rec.x.data(), rec.x.data() + rec.x.size());
    r.expected_metric = rec.value;
    r.final_logmse = final_logmse;
    r.surrogate_failed = rec.surrogate_failed;
    return r;
}

RunRecord read_record(const fs::path& dir, const std::string& method, std::uint64_t seed) {
    RunRecord r;
    r.method = method;
    r.seed = seed;
    std::istringstream csv(read_file(dir / "run.csv"));
    std::string line;
    if (!std::getline(csv, line)) throw Error(fmt::format("'{}' is empty", (dir / "run.csv").string()));
    const auto header = split_csv_line(line);
    const auto col = [&](const std::string& name) {
        const auto it = std::find(header.begin(), header.end(), name);
        if (it == header.end()) throw Error(fmt::format("'{}' has no column '{}'", (dir / "run.csv").string(), name));
        return static_cast<std::size_t>(it - header.begin());
    };
    const std::size_t c_best = col("best_logmse"), c_wall = col("wall_ms");
    while (std::getline(csv, line)) {
        const auto cells = split_csv_line(line);
        if (cells.size() != header.size()) throw Error(fmt::format("'{}': ragged row", (dir / "run.csv").string()));
        const auto iter = static_cast<std::size_t>(std::stoi(cells[0]));
        if (iter >= r.best_logmse.size()) r.best_logmse.resize(iter + 1);
        r.best_logmse[iter] = parse_number(cells[c_best]);
        r.wall_ms += parse_number(cells[c_wall]);
    }
    const json summary = json::parse(read_file(dir / "summary.json"));
    r.x_best = summary.at("x_best").get<std::vector<double>>();
    r.expected_metric = json_number(summary.at("expected_metric"));
    r.final_logmse = json_number(summary.at("final_logmse"));
    r.surrogate_failed = summary.at("surrogate_failed").get<bool>();
    return r;
}

std::string aggregate_csv(const std::vector<RunRecord>& runs) {
    std::string out = "method,iter,runs,mean_logmse,sd_logmse\n";
    for (const auto& [method, group] : by_method(runs)) {
        std::size_t iters = 0;
        for (const auto* r : group) iters = std::max(iters, r->best_logmse.size());
        for (std::size_t it = 0; it < iters; ++it) {
            std::vector<double> v;
            for (const auto* r : group)
                if (it < r->best_logmse.size()) v.push_back(r->best_logmse[it]);
            const auto [m, s] = mean_sd(v);
            out += fmt::format("{},{},{},{},{}\n", method, it, v.size(), number(m), number(s));
        }
    }
    return out;
}

std::string recommendations_csv(const std::vector<RunRecord>& runs, const std::vector<std::string>& names) {
    std::string out = "method,seed";
    for (const auto& n : names) out += "," + n;
    out += ",expected_metric,final_logmse,surrogate_failed\n";
    for (const auto& r : runs) {
        out += fmt::format("{},{}", r.method, r.seed);
        for (double x : r.x_best) out += "," + number(x);
        out += fmt::format(",{},{},{}\n", number(r.expected_metric), number(r.final_logmse), r.surrogate_failed ? 1 : 0);
    }
    return out;
}

std::string timing_csv(const std::vector<RunRecord>& runs) {
    std::string out = "method,runs,mean_wall_ms,sd_wall_ms\n";
    for (const auto& [method, group] : by_method(runs)) {
        std::vector<double> v;
        for (const auto* r : group) v.push_back(r->wall_ms);
        const auto [m, s] = mean_sd(v);
        out += fmt::format("{},{},{},{}\n", method, v.size(), number(m), number(s));
    }
    return out;
}

fs::path run_directory(const fs::path& out, const std::string& method, std::uint64_t seed) {
    return out / "runs" / method / fmt::format("seed_{}", seed);
}

int worker_count() {
    if (const char* env = std::getenv("EPICALIB_THREADS")) {
        char* end = nullptr;
        const long n = std::strtol(env, &end, 10);
        if (end == env || *end != '\0' || n < 1) throw ConfigError(fmt::format("EPICALIB_THREADS='{}' is not a positive integer", env));
        return static_cast<int>(n);
    }
    return static_cast<int>(std::max(1u, std::thread::hardware_concurrency()));
}

int cmd_run(const RunConfig& config, std::ostream& log, int threads) {
    Problem problem;
    if (config.data) {
        problem.series = config.data->load();
        problem.space = real_data_space(problem.series->initial());
    } else {
        problem.space = ParameterSpace::unit(4);
    }
    const std::optional<ObservationSet> real_obs =
        problem.series ? std::optional<ObservationSet>(infectious_observations(*problem.series)) : std::nullopt;

    struct Job {
        AcquisitionKind kind;
        std::uint64_t seed;
    };
    std::vector<Job> jobs;
    for (auto kind : config.methods)
        for (auto seed : config.seeds) jobs.push_back({kind, seed});

    const fs::path out = config.out;
    fs::create_directories(out);
    std::vector<std::optional<RunRecord>> records(jobs.size());
    std::mutex log_mutex;
    std::atomic<std::size_t> next{0};

    auto work = [&] {
        for (std::size_t j = next++; j < jobs.size(); j = next++) {
            const auto& job = jobs[j];
            const std::string method(to_string(job.kind));
            const fs::path dir = run_directory(out, method, job.seed);
            try {
                fs::create_directories(dir);
                std::optional<Scenario> scenario;
                if (config.scenario) scenario = make_scenario(config.scenario_for(job.seed));
                const ObservationSet& obs = scenario ? scenario->observations : *real_obs;
                const Simulator sim = problem.simulator(scenario ? &scenario->spec : nullptr);
                const BORunState state = run_bo(sim, obs, problem.space, config.bo_config(job.kind, job.seed));
                const double final_logmse = scenario ? eval_against_truth(state.recommendation.x, *scenario)
                                                     : log_mse(objective(sim(state.recommendation.x), obs).value);
                std::ostringstream csv;
                write_run_csv(csv, state);
                write_file(dir / "run.csv", csv.str());
                json summary = run_summary(state);
                summary["method"] = method;
                summary["seed"] = job.seed;
                summary["final_logmse"] = final_logmse;
                write_file(dir / "summary.json", dump(summary));
                records[j] = make_record(method, job.seed, state, final_logmse);
                std::lock_guard lock(log_mutex);
                fmt::print(log, "[{} seed {}] {} simulator calls, final log10 MSE {:.4f}\n", method, job.seed,
                           state.simulator_calls, final_logmse);
            } catch (const std::exception& e) {
                std::lock_guard lock(log_mutex);
                fmt::print(log, "[{} seed {}] failed: {}\n", method, job.seed, e.what());
                std::ofstream(dir / "error.txt") << e.what() << '\n';
            }
        }
    };
    const int workers = std::max(1, std::min<int>(threads, static_cast<int>(jobs.size())));
    std::vector<std::thread> pool;
    for (int w = 1; w < workers; ++w) pool.emplace_back(work);
    work();
    for (auto& t : pool) t.join();

    std::vector<RunRecord> done;
    for (auto& r : records)
        if (r) done.push_back(std::move(*r));
    if (done.size() != jobs.size()) {
        fmt::print(log, "{} of {} runs failed; aggregates not written\n", jobs.size() - done.size(), jobs.size());
        return 1;
    }
    const auto names = parameter_names(problem.space);
    json manifest = {{"seeds", config.seeds},
                     {"iterations", config.iterations},
                     {"profile", to_string(config.profile)},
                     {"parameters", names},
                     {"source", config.scenario ? "scenario" : "data"}};
    manifest["methods"] = json::array();
    for (auto k : config.methods) manifest["methods"].push_back(to_string(k));
    write_file(out / "manifest.json", dump(manifest));
    write_file(out / "aggregate.csv", aggregate_csv(done));
    write_file(out / "recommendations.csv", recommendations_csv(done, names));
    write_file(out / "timing.csv", timing_csv(done));
    fmt::print(log, "wrote {} runs to {}\n", done.size(), out.string());
    return 0;
}

int cmd_verify(const fs::path& out, std::ostream& log) {
    const json manifest = json::parse(read_file(out / "manifest.json"));
    const auto names = manifest.at("parameters").get<std::vector<std::string>>();
    std::vector<RunRecord> runs;
    for (const auto& m : manifest.at("methods"))
        for (const auto& s : manifest.at("seeds")) {
            const auto method = m.get<std::string>();
            const auto seed = s.get<std::uint64_t>();
            runs.push_back(read_record(run_directory(out, method, seed), method, seed));
        }
    const std::map<std::string, std::string> expected{{"aggregate.csv", aggregate_csv(runs)},
                                                      {"recommendations.csv", recommendations_csv(runs, names)},
                                                      {"timing.csv", timing_csv(runs)}};
    int status = 0;
    for (const auto& [file, text] : expected) {
        const bool ok = read_file(out / file) == text;
        fmt::print(log, "{}: {}\n", file, ok ? "ok" : "MISMATCH");
        if (!ok) status = 1;
    }
    return status;
}

void cmd_simulate(const SimulateOptions& o, std::ostream& out) {
    const RateSpec spec = o.rates ? RateSpec::linear((*o.rates)[0], (*o.rates)[1], (*o.rates)[2], (*o.rates)[3])
                                  : ground_truth_rates(parse_ground_truth(o.ground_truth));
    const CompartmentState init{o.init[0], o.init[1], o.init[2], o.init[3]};
    const Trajectory traj = simulate(spec, init, TimeGrid::daily(o.horizon));
    const std::vector<double> lambda = o.emit_lambda ? lambda_series(traj, spec) : std::vector<double>{};
    out << (o.emit_lambda ? "t,S,I,Q,R,lambda\n" : "t,S,I,Q,R\n");
    const auto times = traj.times();
    for (std::size_t p = 0; p < traj.states.size(); ++p) {
        const auto& x = traj.states[p];
        out << number(times[p]) << ',' << number(x.s) << ',' << number(x.i) << ',' << number(x.q) << ','
            << number(x.r);
        if (o.emit_lambda) out << ',' << number(lambda[p]);
        out << '\n';
    }
}

int cmd_twostage(const TwoStageRunConfig& config, std::ostream& log) {
    const RealSeries series = config.data ? config.data->load() : config.synthetic->generate();
    const TwoStageResult res = run_two_stage(config.two_stage, series);
    const fs::path out = config.out;
    fs::create_directories(out);

    std::ostringstream s1;
    write_run_csv(s1, res.stage1);
    write_file(out / "stage1_run.csv", s1.str());
    write_file(out / "stage1_summary.json", dump(run_summary(res.stage1)));

    std::string loss = "step,window_start,loss\n";
    if (res.stage2)
        for (std::size_t k = 0; k < res.stage2->step_loss.size(); ++k)
            loss += fmt::format("{},{},{}\n", k + 1, res.stage2->step_window[k], number(res.stage2->step_loss[k]));
    write_file(out / "stage2_loss.csv", loss);

    const int days = static_cast<int>(series.size());
    const Trajectory stage1 = simulate_real(res.x_first, days, 1.0);
    std::string traj = "day,date,observed,stage1,fitted\n";
    double mse1 = 0.0, mse2 = 0.0;
    for (int t = 0; t < days; ++t) {
        const auto i = static_cast<std::size_t>(t);
        const double obs = series.infectious[i];
        traj += fmt::format("{},{},{},{},{}\n", t, series.dates[i], number(obs), number(stage1.states[i].i),
                            number(res.fitted_infectious[i]));
        mse1 += (stage1.states[i].i - obs) * (stage1.states[i].i - obs) / days;
        mse2 += (res.fitted_infectious[i] - obs) * (res.fitted_infectious[i] - obs) / days;
    }
    write_file(out / "trajectory.csv", traj);

    json summary = {{"source", config.data ? "data" : "synthetic"},
                    {"stage1_method", to_string(config.method)},
                    {"x_first", std::vector<double>(res.x_first.data(), res.x_first.data() + res.x_first.size())},
                    {"beta", res.params.beta},
                    {"delta", res.params.delta},
                    {"gamma", res.params.gamma},
                    {"stage2_completed", res.stage2.has_value()},
                    {"warning", res.warning},
                    {"stage1_trajectory_mse", mse1},
                    {"fitted_trajectory_mse", mse2}};
    if (res.stage2) {
        summary["stage2_initial_eval"] = res.stage2->initial_eval;
        summary["stage2_final_eval"] = res.stage2->final_eval;
    }
    write_file(out / "summary.json", dump(summary));
    if (!res.warning.empty()) fmt::print(log, "warning: {}\n", res.warning);
    fmt::print(log, "trajectory MSE: stage 1 {:.6g}, fitted {:.6g}; wrote {}\n", mse1, mse2, out.string());
    return 0;
}

}  // namespace epicalib::cli
