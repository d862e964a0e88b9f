#pragma once

#include "epicalib/ode.hpp"

#include <array>
#include <optional>
#include <span>
#include <vector>

namespace epicalib {

using ObservationRow = std::array<std::optional<double>, 4>;
using CompartmentMask = std::array<bool, 4>;

inline constexpr CompartmentMask kFullMask{true, true, true, true};

/// Observed populations on a time grid; a missing value means the
/// (compartment, time) entry is not observed.
struct ObservationSet {
    TimeGrid grid;
    std::vector<ObservationRow> rows;  // one per grid point

    /// Copies `traj` at every grid point except, optionally, the initial one.
    static ObservationSet from_trajectory(const Trajectory& traj, const CompartmentMask& mask,
                                          bool include_initial = false);

    void validate() const;

    bool observed(long point, int compartment) const {
        return rows[static_cast<std::size_t>(point)][static_cast<std::size_t>(compartment)].has_value();
    }
    double value(long point, int compartment) const {
        return *rows[static_cast<std::size_t>(point)][static_cast<std::size_t>(compartment)];
    }

    /// Grid points with at least one observed compartment.
    std::vector<long> observed_points() const;
    /// T in the 1/T normalizer.
    long observed_point_count() const;
    /// Compartments observed at any point.
    CompartmentMask compartment_mask() const;
};

struct MetricValue {
    double value = 0.0;            // sum of per_point, always <= 0
    std::vector<double> per_point;  // f^t per grid point (0 where unobserved)
};

/// -(1/T) * sum over observed compartments of (d_i - y_i)^2.
double neg_se_at_t(const std::array<double, 4>& sim, const ObservationRow& obs, long T);

MetricValue objective(const Trajectory& traj, const ObservationSet& obs);

/// Same metric for simulated values aligned with the grid points of `obs`.
MetricValue objective(std::span<const std::array<double, 4>> sim, const ObservationSet& obs);

/// Mean square error -sum_t f^t, the quantity reported on a log10 scale.
inline double mse_from(const MetricValue& m) { return -m.value; }

}  // namespace epicalib
