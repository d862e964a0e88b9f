#pragma once

#include "epicalib/calibrate.hpp"
#include "epicalib/data_io.hpp"
#include "epicalib/neural_rate.hpp"
#include "epicalib/ode.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace epicalib {

/// Daily series used by the second stage. Any population unit works; the
/// two-stage driver uses the largest infectious observation.
struct Stage2Data {
    std::vector<double> infectious;              // observed I, one per day
    std::vector<CompartmentState> simulated;     // stage-1 trajectory; S, Q, R are used
};

/// Variables optimized in stage 2: the rate network and x2..x4.
struct Stage2Params {
    RateNetwork network;
    double beta = 0.0;   // x2
    double delta = 0.0;  // x3
    double gamma = 0.0;  // x4

    Eigen::Index size() const { return network.parameter_count() + 3; }
    /// Network parameters followed by x2, x3, x4.
    Eigen::VectorXd pack() const;
    void unpack(const Eigen::VectorXd& v);
};

struct Stage2Config {
    int window = 30;          // days per window, both ends included
    int iterations = 2000;
    double learning_rate = 5e-4;
    double dt = 0.05;
    std::uint64_t seed = 0;   // window sampling
    int eval_stride = 5;      // spacing of window starts in the evaluation loss

    void validate(std::size_t series_length) const;
};

/// Infectious trajectory of one window started at day t0 from
/// (I_obs(t0), S(t0), Q(t0), R(t0)); `window` values, the first equal to I_obs(t0).
std::vector<double> simulate_window(const Stage2Data& data, const Stage2Params& params, int t0, int window,
                                    double dt);

/// Mean squared error of the window against the observations. When `grad` is
/// given it receives the gradient in the packed parameter layout, computed by
/// reverse-mode differentiation through the RK4 steps.
double window_loss(const Stage2Data& data, const Stage2Params& params, int t0, const Stage2Config& config,
                   Eigen::VectorXd* grad = nullptr);

/// Mean window loss over starts 0, eval_stride, 2 eval_stride, ...
double evaluation_loss(const Stage2Data& data, const Stage2Params& params, const Stage2Config& config);

struct Stage2Result {
    Stage2Params params;
    std::vector<double> step_loss;  // loss of the sampled window at each step
    std::vector<int> step_window;   // sampled window start
    double initial_eval = 0.0;
    double final_eval = 0.0;
};

/// Plain SGD on the sampled window losses; x2..x4 are kept nonnegative.
/// Throws DivergenceError with the step index when a loss or gradient stops
/// being finite.
Stage2Result run_stage2(const Stage2Data& data, Stage2Params init, const Stage2Config& config);

struct TwoStageConfig {
    BOConfig stage1;
    Stage2Config stage2;
    std::uint64_t nn_init_seed = 0;
};

/// Six-dimensional space of the real-data model: x1..x4 in [0, 1], x5 = I(0)
/// in [0.1, 10] I_obs(0) and x6 = N in [10, 1000] I_obs(0), both log-scaled.
ParameterSpace real_data_space(double first_observation);

/// Simulates the linear model with parameters x (six entries, persons) over
/// `days` daily points, in units of `unit` persons.
Trajectory simulate_real(const Eigen::VectorXd& x, int days, double unit);

/// Infectious-only observations in units of the first value; day 0 included.
ObservationSet infectious_observations(const RealSeries& series);

struct TwoStageResult {
    BORunState stage1;
    Eigen::VectorXd x_first;                  // six entries, persons
    Stage2Data data;
    std::optional<Stage2Result> stage2;       // empty when stage 2 diverged
    std::string warning;
    Stage2Params params;                      // stage-2 result, or the stage-1 rates with the initial network
    std::vector<double> fitted_infectious;    // persons, full series simulated with the returned model
};

TwoStageResult run_two_stage(const TwoStageConfig& config, const RealSeries& series);

/// Full-series infectious trajectory of the neural model from the stage-1
/// initial state; persons.
std::vector<double> simulate_neural_series(const Stage2Params& params, const Eigen::VectorXd& x_first, int days,
                                           double dt = 0.05);

}  // namespace epicalib
