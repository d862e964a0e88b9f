#pragma once

#include "config.hpp"

#include <array>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace epicalib::cli {

/// What the aggregate step needs from one finished run.
struct RunRecord {
    std::string method;
    std::uint64_t seed = 0;
    std::vector<double> best_logmse;  // after the initial design (index 0) and each iteration
    std::vector<double> x_best;
    double expected_metric = 0.0;
    double final_logmse = 0.0;        // recommendation scored against the truth or the data
    bool surrogate_failed = false;
    double wall_ms = 0.0;             // total over the run
};

RunRecord make_record(const std::string& method, std::uint64_t seed, const BORunState& state, double final_logmse);
/// Rebuilds the record from `run.csv` and `summary.json` in `dir`.
RunRecord read_record(const std::filesystem::path& dir, const std::string& method, std::uint64_t seed);

/// `method,iter,runs,mean_logmse,sd_logmse`; sd is the sample deviation (0 for one run).
std::string aggregate_csv(const std::vector<RunRecord>& runs);
/// `method,seed,<parameter names>,expected_metric,final_logmse,surrogate_failed`
std::string recommendations_csv(const std::vector<RunRecord>& runs, const std::vector<std::string>& names);
/// `method,runs,mean_wall_ms,sd_wall_ms`
std::string timing_csv(const std::vector<RunRecord>& runs);

std::filesystem::path run_directory(const std::filesystem::path& out, const std::string& method, std::uint64_t seed);

/// Worker count from EPICALIB_THREADS, else the hardware concurrency.
int worker_count();

/// Executes every (method, seed) run and writes the per-run and aggregate
/// artifacts. Returns 0, or 1 when a run failed.
int cmd_run(const RunConfig& config, std::ostream& log, int threads);
/// Recomputes the aggregates of an output directory; 0 when they match byte for byte.
int cmd_verify(const std::filesystem::path& out, std::ostream& log);

struct SimulateOptions {
    std::string ground_truth = "linear";
    std::optional<std::array<double, 4>> rates;  // linear x1..x4; replaces the ground truth
    std::array<double, 4> init{0.99, 0.01, 0.0, 0.0};
    double horizon = 30.0;
    bool emit_lambda = false;
};

/// `t,S,I,Q,R[,lambda]`, one row per day.
void cmd_simulate(const SimulateOptions& options, std::ostream& out);

/// Runs both stages and writes the stage-1 log, the stage-2 losses and the
/// fitted trajectory. Returns 0.
int cmd_twostage(const TwoStageRunConfig& config, std::ostream& log);

/// Formats with round-trip precision; NaN becomes an empty field.
std::string number(double v);

}  // namespace epicalib::cli
