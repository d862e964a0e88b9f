#pragma once

#include "epicalib/gp.hpp"
#include "epicalib/metrics.hpp"
#include "epicalib/network.hpp"

#include <Eigen/Core>

#include <array>
#include <optional>
#include <vector>

namespace epicalib {

/// The metric g restricted to observed time points: row k of `data` and
/// `weight` belongs to grid point points[k]; weight is 1/T where observed.
struct MetricTarget {
    std::vector<long> points;
    Eigen::MatrixXd data;    // T x 4
    Eigen::MatrixXd weight;  // T x 4

    static MetricTarget from(const ObservationSet& obs);
    Eigen::Index size() const { return static_cast<Eigen::Index>(points.size()); }
    CompartmentMask observed() const;
    /// g at a T x 4 matrix of compartment values.
    double evaluate(const Eigen::MatrixXd& values) const;
    /// T x 4 values of `traj` at the target points.
    Eigen::MatrixXd extract(const Trajectory& traj) const;
};

/// One simulator query: calibration point in unit coordinates and its output.
struct HistoryEntry {
    Eigen::VectorXd x;
    Trajectory trajectory;
};

enum class SurrogateMode { CompositeOnly, FullNetwork };

/// Surrogates of one compartment across the observed time points.
///
/// Without parents there is a single GP over x with one output per time
/// point. With parents, time point k has its own GP over (x, parent values
/// at k); all of them share the normalized hyperparameters of one pooled fit.
struct CompartmentModel {
    int compartment = 0;
    std::vector<int> parents;
    std::vector<gp::GaussianProcess> gps;
    Eigen::VectorXd log_lengthscales;  // normalized, reused as a warm start

    bool has_parents() const { return !parents.empty(); }
    const gp::GaussianProcess& at(Eigen::Index k) const {
        return has_parents() ? gps[static_cast<std::size_t>(k)] : gps.front();
    }
    Eigen::Index output(Eigen::Index k) const { return has_parents() ? 0 : k; }
};

struct NetworkFitOptions {
    gp::FitOptions gp;
    std::array<std::optional<Eigen::VectorXd>, 4> warm_start;
};

class NetworkSurrogate {
public:
    /// Pooled per-compartment fits. CompositeOnly models the compartments
    /// feeding g with x-only inputs; FullNetwork models every ancestor of g
    /// with its parents' same-time values appended to the input.
    static NetworkSurrogate fit(const std::vector<HistoryEntry>& history, const FunctionNetwork& net,
                                SurrogateMode mode, const MetricTarget& target, const NetworkFitOptions& opts = {});

    SurrogateMode mode() const { return mode_; }
    const FunctionNetwork& network() const { return net_; }
    Eigen::Index dim() const { return dim_; }
    Eigen::Index time_points() const { return static_cast<Eigen::Index>(points_.size()); }
    /// Modeled compartments in topological order.
    const std::vector<CompartmentModel>& models() const { return models_; }
    const CompartmentModel* model_of(int compartment) const;
    std::array<std::optional<Eigen::VectorXd>, 4> warm_starts() const;

    /// Reparametrized joint sample. `epsilon` is T x 4 (one draw per
    /// compartment and time point). Unmodeled compartments come back as NaN.
    Eigen::MatrixXd sample(const Eigen::VectorXd& x, const Eigen::MatrixXd& epsilon) const;

    /// Monte-Carlo estimate of E[g(y(x))] over the given epsilon blocks.
    double expected_metric(const MetricTarget& target, const Eigen::VectorXd& x,
                           const std::vector<Eigen::MatrixXd>& epsilon_blocks) const;

private:
    SurrogateMode mode_ = SurrogateMode::CompositeOnly;
    FunctionNetwork net_;
    Eigen::Index dim_ = 0;
    std::vector<long> points_;
    std::vector<CompartmentModel> models_;
};

}  // namespace epicalib
