#pragma once

#include "epicalib/neural_rate.hpp"

#include <array>
#include <memory>
#include <string_view>
#include <vector>

namespace epicalib {

enum class Compartment : int { S = 0, I = 1, Q = 2, R = 3 };

inline constexpr int kCompartmentCount = 4;

std::string_view compartment_name(int index);

/// Populations of the four SIQR compartments, in the unit of the total N.
struct CompartmentState {
    double s = 0.0;
    double i = 0.0;
    double q = 0.0;
    double r = 0.0;

    double total() const { return s + i + q + r; }
    double operator[](int index) const;
    std::array<double, 4> values() const { return {s, i, q, r}; }

    friend bool operator==(const CompartmentState&, const CompartmentState&) = default;
};

enum class RateVariant { Linear, LogNonlinear, NeuralNet };

/// Parameterization of the transition rates.
///
/// Linear:       lambda = x1 I, beta = x2 I, delta = x3, gamma = x4
/// LogNonlinear: lambda = log([I,S,R].[l1,l2,l3] + 1) I, rest as Linear
/// NeuralNet:    lambda = f_NN([I,S,R]) I, rest as Linear
///
/// I, S, R are fractions of the total population.
struct RateSpec {
    RateVariant variant = RateVariant::Linear;
    std::array<double, 3> lambda{};  // Linear uses lambda[0]
    double beta = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
    std::shared_ptr<const RateNetwork> network;

    static RateSpec linear(double x1, double x2, double x3, double x4);
    static RateSpec log_nonlinear(std::array<double, 3> lambda_coefs, double x2, double x3,
                                  double x4);
    static RateSpec neural(std::shared_ptr<const RateNetwork> net, double x2, double x3,
                           double x4);

    /// Throws DomainError for negative or non-finite coefficients.
    void validate() const;
};

struct Rates {
    double beta = 0.0;
    double lambda = 0.0;
    double delta = 0.0;
    double gamma = 0.0;
};

/// Rates at a state given in population fractions.
Rates eval_rates(const CompartmentState& fractions, const RateSpec& spec);

/// Fixed integration grid. Observations are taken every `stride` steps,
/// starting at t0 (inclusive) and ending at t0 + horizon.
struct TimeGrid {
    double t0 = 0.0;
    double horizon = 30.0;
    double dt = 0.05;
    int stride = 20;

    /// Grid with one observation every `every_days` days.
    static TimeGrid daily(double horizon_days, double dt = 0.05, int every_days = 1);

    void validate() const;
    long steps() const;
    long points() const;
    double time(long point) const;

    friend bool operator==(const TimeGrid&, const TimeGrid&) = default;
};

struct Trajectory {
    TimeGrid grid;
    std::vector<CompartmentState> states;  // one per observation point

    std::vector<double> times() const;
};

/// Integrates the SIQR system with classical RK4 at step grid.dt.
///
/// The system is solved in fractions of N = init.total(); results are scaled
/// back to the unit of `init`. Components that undershoot zero by less than
/// 1e-12 N are clamped; anything worse raises NumericalFailure.
Trajectory simulate(const RateSpec& spec, const CompartmentState& init, const TimeGrid& grid);

/// SIQR right-hand side in fractions.
CompartmentState siqr_derivative(const CompartmentState& fractions, const RateSpec& spec);

}  // namespace epicalib
