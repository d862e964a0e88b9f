#pragma once

#include "epicalib/metrics.hpp"
#include "epicalib/ode.hpp"

#include <cstdint>
#include <iosfwd>
#include <string>
#include <string_view>
#include <vector>

namespace epicalib {

enum class GroundTruth { Linear, NoisyLinear, NonlinearLambda };

std::string_view to_string(GroundTruth gt);
GroundTruth parse_ground_truth(std::string_view name);

/// Synthetic calibration problem. Populations are fractions (N = 1).
struct ScenarioSpec {
    GroundTruth ground_truth = GroundTruth::Linear;
    double noise_sd = 0.0;
    CompartmentMask mask = kFullMask;
    double horizon = 30.0;
    int every_days = 1;  // observation spacing; 3 gives ten points over 30 days
    std::uint64_t seed = 0;

    /// Noisy scenarios default to sd 0.01 when constructed through this helper.
    static ScenarioSpec of(GroundTruth gt);
    void validate() const;
};

/// Rates that generate the ground truth.
RateSpec ground_truth_rates(GroundTruth gt);
/// Linear-model parameters (x1..x4) of the ground truth, when it has them.
std::array<double, 4> ground_truth_parameters();

inline constexpr CompartmentState kScenarioInit{0.99, 0.01, 0.0, 0.0};

struct Scenario {
    ScenarioSpec spec;
    ObservationSet observations;  // noisy and masked; what calibration sees
    ObservationSet truth;         // noiseless and masked; used for evaluation only
    Trajectory truth_trajectory;
};

Scenario make_scenario(const ScenarioSpec& spec);

/// Linear SIQR simulator on the scenario grid, x = (x1, x2, x3, x4).
Trajectory simulate_linear(const Eigen::VectorXd& x, const ScenarioSpec& spec);

/// log10 of the mean squared error of `sim` against the noiseless masked truth.
double eval_against_truth(const Trajectory& sim, const Scenario& scenario);
/// Same for the linear model at parameters x.
double eval_against_truth(const Eigen::VectorXd& x, const Scenario& scenario);

/// Infection rate lambda(t) along a trajectory (per capita, fractions).
std::vector<double> lambda_series(const Trajectory& traj, const RateSpec& spec);

struct RealSeries {
    std::string country;
    std::vector<std::string> dates;  // ISO-8601, consecutive days
    std::vector<double> infectious;

    double initial() const { return infectious.front(); }
    std::size_t size() const { return infectious.size(); }
    friend bool operator==(const RealSeries&, const RealSeries&) = default;
};

/// Reads a `date,country,infectious` file and returns `days` consecutive rows
/// for `country` starting at `start`.
RealSeries load_covid_csv(const std::string& path, const std::string& country, std::string_view start = "2020-06-01",
                          int days = 365);
RealSeries read_covid_csv(std::istream& in, const std::string& country, std::string_view start = "2020-06-01",
                          int days = 365);
void write_covid_csv(std::ostream& out, const RealSeries& series);

/// Days since 1970-01-01 of an ISO date; throws DomainError when malformed.
long parse_iso_date(std::string_view text);
std::string format_iso_date(long days);

}  // namespace epicalib
