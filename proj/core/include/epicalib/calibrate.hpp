#pragma once

#include "epicalib/acquisition.hpp"
#include "epicalib/gp.hpp"
#include "epicalib/metrics.hpp"
#include "epicalib/network.hpp"
#include "epicalib/ode.hpp"
#include "epicalib/surrogate.hpp"

#include <Eigen/Core>
#include <nlohmann/json.hpp>

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <string>
#include <vector>

namespace epicalib {

/// Box of calibration parameters. The optimizer works in the unit cube; each
/// dimension maps linearly or log-linearly onto [lower, upper].
class ParameterSpace {
public:
    struct Dimension {
        std::string name;
        double lower = 0.0;
        double upper = 1.0;
        bool log_scale = false;
    };

    ParameterSpace() = default;
    explicit ParameterSpace(std::vector<Dimension> dims);
    static ParameterSpace unit(int dim);

    Eigen::Index dim() const { return static_cast<Eigen::Index>(dims_.size()); }
    const std::vector<Dimension>& dimensions() const { return dims_; }

    Eigen::VectorXd to_model(const Eigen::VectorXd& unit) const;
    Eigen::VectorXd to_unit(const Eigen::VectorXd& model) const;

private:
    std::vector<Dimension> dims_;
};

/// Simulator closure in model units.
using Simulator = std::function<Trajectory(const Eigen::VectorXd&)>;

/// 2D+1 uniform points in unit coordinates.
std::vector<Eigen::VectorXd> init_design(Eigen::Index dim, std::uint64_t seed);

struct BOConfig {
    AcquisitionSpec acquisition;
    int iterations = 50;
    std::uint64_t seed = 0;
    int gp_restarts = 3;
    int gp_max_iter = 60;
    bool record_wall_time = false;
    FunctionNetwork network = FunctionNetwork::siqr();
};

struct IterationRecord {
    int iter = 0;                // 0 for the initial design rows
    Eigen::VectorXd x;           // model units
    ZVector z = kAllCompartments;
    double acq = 0.0;            // NaN for initial design rows
    double objective = 0.0;      // g at the queried point
    double best_logmse = 0.0;    // log10(-max objective so far)
    double wall_ms = 0.0;
    bool fallback = false;
};

struct Recommendation {
    Eigen::VectorXd x;       // model units
    Eigen::VectorXd x_unit;
    double value = 0.0;      // u_N(x_unit); the best observed objective when the surrogate failed
    std::vector<double> history_values;  // u_N at each history point
    bool surrogate_failed = false;
};

struct BORunState {
    ParameterSpace space;
    BOConfig config;
    std::vector<HistoryEntry> history;  // unit coordinates
    std::vector<double> objectives;
    std::vector<IterationRecord> log;
    int iteration = 0;
    long simulator_calls = 0;
    Recommendation recommendation;
};

/// Bayesian-optimization calibration loop. Each iteration fits the surrogate
/// matching the acquisition kind, maximizes the acquisition and queries the
/// simulator once. A failed maximization falls back to a seeded random point.
BORunState run_bo(const Simulator& simulator, const ObservationSet& obs, const ParameterSpace& space,
                  const BOConfig& config);

/// Surrogate expected metric u_N fitted on the final history, in unit
/// coordinates. DG-CF runs use the composite model of KG-CF.
std::function<double(const Eigen::VectorXd&)> final_expected_metric(const BORunState& state,
                                                                    const ObservationSet& obs);

/// Maximizer of the surrogate expected metric over the final history; ties
/// go to the earliest history point. Falls back to the best observed point
/// when the surrogate cannot be fitted.
Recommendation recommend(const BORunState& state, const ObservationSet& obs);

/// `iter,x1..xD,z,acq,objective,best_logmse,wall_ms`
void write_run_csv(std::ostream& out, const BORunState& state);

nlohmann::json to_json(const AcquisitionSpec& spec);

/// Config echo, recommendation and final metrics of a run. Wall times are
/// left out so that reruns produce identical documents.
nlohmann::json run_summary(const BORunState& state);

/// log10 of the mean squared error -g.
double log_mse(double objective);

}  // namespace epicalib
