#include "epicalib/metrics.hpp"

#include "epicalib/errors.hpp"

#include <fmt/format.h>

namespace epicalib {

ObservationSet ObservationSet::from_trajectory(const Trajectory& traj, const CompartmentMask& mask,
                                               bool include_initial) {
    ObservationSet obs;
    obs.grid = traj.grid;
    obs.rows.resize(traj.states.size());
    for (std::size_t t = 0; t < traj.states.size(); ++t) {
        if (t == 0 && !include_initial) continue;
        for (int c = 0; c < kCompartmentCount; ++c)
            if (mask[static_cast<std::size_t>(c)]) obs.rows[t][static_cast<std::size_t>(c)] = traj.states[t][c];
    }
    obs.validate();
    return obs;
}

void ObservationSet::validate() const {
    grid.validate();
    if (static_cast<long>(rows.size()) != grid.points())
        throw GridMismatch(fmt::format("observation set has {} rows for a grid of {} points", rows.size(),
                                       grid.points()));
    if (observed_point_count() == 0) throw EmptyMask("observation set has no observed entries");
}

std::vector<long> ObservationSet::observed_points() const {
    std::vector<long> out;
    for (std::size_t t = 0; t < rows.size(); ++t) {
        for (const auto& v : rows[t]) {
            if (v) {
                out.push_back(static_cast<long>(t));
                break;
            }
        }
    }
    return out;
}

long ObservationSet::observed_point_count() const { return static_cast<long>(observed_points().size()); }

CompartmentMask ObservationSet::compartment_mask() const {
    CompartmentMask mask{};
    for (const auto& row : rows)
        for (std::size_t c = 0; c < 4; ++c)
            if (row[c]) mask[c] = true;
    return mask;
}

double neg_se_at_t(const std::array<double, 4>& sim, const ObservationRow& obs, long T) {
    if (T < 1) throw DomainError("T must be >= 1");
    double se = 0.0;
    bool any = false;
    for (std::size_t c = 0; c < 4; ++c) {
        if (!obs[c]) continue;
        const double r = *obs[c] - sim[c];
        se += r * r;
        any = true;
    }
    if (!any) throw EmptyMask("no compartment observed at this time point");
    return -se / static_cast<double>(T);
}

MetricValue objective(std::span<const std::array<double, 4>> sim, const ObservationSet& obs) {
    if (static_cast<long>(sim.size()) != obs.grid.points() || sim.size() != obs.rows.size())
        throw GridMismatch(fmt::format("{} simulated points against {} observed rows", sim.size(), obs.rows.size()));
    const auto points = obs.observed_points();
    const long T = static_cast<long>(points.size());
    if (T == 0) throw EmptyMask("observation set has no observed entries");
    MetricValue m;
    m.per_point.assign(sim.size(), 0.0);
    for (long t : points) {
        const double f = neg_se_at_t(sim[static_cast<std::size_t>(t)], obs.rows[static_cast<std::size_t>(t)], T);
        m.per_point[static_cast<std::size_t>(t)] = f;
        m.value += f;
    }
    return m;
}

MetricValue objective(const Trajectory& traj, const ObservationSet& obs) {
    if (!(traj.grid == obs.grid)) throw GridMismatch("trajectory and observations use different time grids");
    std::vector<std::array<double, 4>> sim;
    sim.reserve(traj.states.size());
    for (const auto& s : traj.states) sim.push_back(s.values());
    return objective(std::span<const std::array<double, 4>>(sim), obs);
}

}  // namespace epicalib
