#include "epicalib/ode.hpp"

#include "epicalib/errors.hpp"

#include <fmt/format.h>

#include <cmath>

namespace epicalib {
namespace {

constexpr double kClampTolerance = 1e-12;
constexpr double kConservationTolerance = 1e-9;

bool finite_nonneg(double v) { return std::isfinite(v) && v >= 0.0; }

CompartmentState axpy(const CompartmentState& y, double h, const CompartmentState& k) {
    return {y.s + h * k.s, y.i + h * k.i, y.q + h * k.q, y.r + h * k.r};
}

}  // namespace

std::string_view compartment_name(int index) {
    static constexpr std::array<std::string_view, 4> names{"S", "I", "Q", "R"};
    if (index < 0 || index >= kCompartmentCount) throw DomainError("compartment index out of range");
    return names[static_cast<std::size_t>(index)];
}

double CompartmentState::operator[](int index) const {
    switch (index) {
        case 0: return s;
        case 1: return i;
        case 2: return q;
        case 3: return r;
        default: throw DomainError("compartment index out of range");
    }
}

RateSpec RateSpec::linear(double x1, double x2, double x3, double x4) {
    RateSpec spec;
    spec.variant = RateVariant::Linear;
    spec.lambda = {x1, 0.0, 0.0};
    spec.beta = x2;
    spec.delta = x3;
    spec.gamma = x4;
    spec.validate();
    return spec;
}

RateSpec RateSpec::log_nonlinear(std::array<double, 3> lambda_coefs, double x2, double x3,
                                 double x4) {
    RateSpec spec;
    spec.variant = RateVariant::LogNonlinear;
    spec.lambda = lambda_coefs;
    spec.beta = x2;
    spec.delta = x3;
    spec.gamma = x4;
    spec.validate();
    return spec;
}

RateSpec RateSpec::neural(std::shared_ptr<const RateNetwork> net, double x2, double x3, double x4) {
    RateSpec spec;
    spec.variant = RateVariant::NeuralNet;
    spec.network = std::move(net);
    spec.beta = x2;
    spec.delta = x3;
    spec.gamma = x4;
    spec.validate();
    return spec;
}

void RateSpec::validate() const {
    if (!finite_nonneg(beta) || !finite_nonneg(delta) || !finite_nonneg(gamma))
        throw DomainError(fmt::format("rate coefficients must be finite and >= 0 (beta={}, delta={}, gamma={})",
                                      beta, delta, gamma));
    switch (variant) {
        case RateVariant::Linear:
            if (!finite_nonneg(lambda[0])) throw DomainError("lambda coefficient must be finite and >= 0");
            break;
        case RateVariant::LogNonlinear:
            for (double c : lambda)
                if (!finite_nonneg(c)) throw DomainError("lambda coefficients must be finite and >= 0");
            break;
        case RateVariant::NeuralNet:
            if (!network) throw DomainError("neural rate spec without a network");
            break;
    }
}

Rates eval_rates(const CompartmentState& x, const RateSpec& spec) {
    Rates rates;
    rates.beta = spec.beta * x.i;
    rates.delta = spec.delta;
    rates.gamma = spec.gamma;
    switch (spec.variant) {
        case RateVariant::Linear:
            rates.lambda = spec.lambda[0] * x.i;
            break;
        case RateVariant::LogNonlinear: {
            const double arg = x.i * spec.lambda[0] + x.s * spec.lambda[1] + x.r * spec.lambda[2] + 1.0;
            if (!(arg > 0.0)) {
                if (std::isnan(arg)) throw NumericalFailure("NaN in nonlinear lambda argument");
                throw DomainError(fmt::format("nonpositive log argument {} in nonlinear lambda", arg));
            }
            rates.lambda = std::log(arg) * x.i;
            break;
        }
        case RateVariant::NeuralNet:
            rates.lambda = spec.network->forward(Eigen::Vector3d(x.i, x.s, x.r)) * x.i;
            break;
    }
    for (double v : {rates.beta, rates.lambda, rates.delta, rates.gamma}) {
        if (!std::isfinite(v)) throw NumericalFailure("non-finite transition rate");
        if (v < 0.0) throw DomainError(fmt::format("negative transition rate {}", v));
    }
    return rates;
}

CompartmentState siqr_derivative(const CompartmentState& x, const RateSpec& spec) {
    const Rates k = eval_rates(x, spec);
    CompartmentState d;
    d.s = -k.beta * x.s;
    d.i = k.beta * x.s - k.lambda * x.i - k.gamma * x.i;
    d.r = k.gamma * x.i + k.delta * x.q;
    d.q = k.lambda * x.i - k.delta * x.q;
    return d;
}

TimeGrid TimeGrid::daily(double horizon_days, double dt, int every_days) {
    TimeGrid grid;
    grid.t0 = 0.0;
    grid.horizon = horizon_days;
    grid.dt = dt;
    const double per_day = 1.0 / dt;
    grid.stride = static_cast<int>(std::lround(per_day)) * every_days;
    grid.validate();
    return grid;
}

void TimeGrid::validate() const {
    if (!(dt > 0.0) || !std::isfinite(dt)) throw DomainError("time grid needs dt > 0");
    if (!(horizon > 0.0) || !std::isfinite(horizon)) throw DomainError("time grid needs horizon > 0");
    if (stride < 1) throw DomainError("observation stride must be >= 1");
    const double ratio = horizon / dt;
    const double n = std::round(ratio);
    if (std::abs(ratio - n) > 1e-9 * std::max(1.0, ratio))
        throw DomainError(fmt::format("horizon {} is not a whole number of steps of {}", horizon, dt));
    if (static_cast<long>(n) % stride != 0)
        throw DomainError(fmt::format("stride {} does not divide the {} integration steps", stride,
                                      static_cast<long>(n)));
}

long TimeGrid::steps() const { return std::lround(horizon / dt); }

long TimeGrid::points() const { return steps() / stride + 1; }

double TimeGrid::time(long point) const { return t0 + static_cast<double>(point * stride) * dt; }

std::vector<double> Trajectory::times() const {
    std::vector<double> out;
    out.reserve(states.size());
    for (std::size_t k = 0; k < states.size(); ++k) out.push_back(grid.time(static_cast<long>(k)));
    return out;
}

Trajectory simulate(const RateSpec& spec, const CompartmentState& init, const TimeGrid& grid) {
    grid.validate();
    spec.validate();
    const double total = init.total();
    for (double v : init.values())
        if (!finite_nonneg(v)) throw DomainError("initial state must be finite and nonnegative");
    if (!(total > 0.0)) throw DomainError("initial state has zero total population");

    CompartmentState y{init.s / total, init.i / total, init.q / total, init.r / total};
    const double h = grid.dt;
    const long steps = grid.steps();

    Trajectory traj;
    traj.grid = grid;
    traj.states.reserve(static_cast<std::size_t>(grid.points()));
    auto emit = [&](const CompartmentState& u) {
        CompartmentState out{u.s * total, u.i * total, u.q * total, u.r * total};
        if (std::abs(out.total() - total) > kConservationTolerance * total)
            throw NumericalFailure(fmt::format("population not conserved: {} vs {}", out.total(), total));
        traj.states.push_back(out);
    };
    emit(y);

    for (long n = 1; n <= steps; ++n) {
        const CompartmentState k1 = siqr_derivative(y, spec);
        const CompartmentState k2 = siqr_derivative(axpy(y, 0.5 * h, k1), spec);
        const CompartmentState k3 = siqr_derivative(axpy(y, 0.5 * h, k2), spec);
        const CompartmentState k4 = siqr_derivative(axpy(y, h, k3), spec);
        y.s += h / 6.0 * (k1.s + 2.0 * k2.s + 2.0 * k3.s + k4.s);
        y.i += h / 6.0 * (k1.i + 2.0 * k2.i + 2.0 * k3.i + k4.i);
        y.q += h / 6.0 * (k1.q + 2.0 * k2.q + 2.0 * k3.q + k4.q);
        y.r += h / 6.0 * (k1.r + 2.0 * k2.r + 2.0 * k3.r + k4.r);
        for (double* v : {&y.s, &y.i, &y.q, &y.r}) {
            if (std::isnan(*v) || *v < -kClampTolerance)
                throw NumericalFailure(fmt::format("state component {} at t={}", *v, grid.t0 + n * h));
            if (*v < 0.0) *v = 0.0;
        }
        if (n % grid.stride == 0) emit(y);
    }
    return traj;
}

}  // namespace epicalib
