#include "epicalib/twostage.hpp"

#include "epicalib/errors.hpp"
#include "epicalib/optim.hpp"

#include <fmt/format.h>

#include <Eigen/Core>

#include <algorithm>
#include <cmath>
#include <memory>
#include <random>

namespace epicalib {
namespace {

constexpr std::uint64_t kWindowStream = 0x5D;

using State = Eigen::Vector4d;  // s, i, q, r as fractions of the window total

struct Rhs {
    const RateNetwork& net;
    double beta, delta, gamma;

    State operator()(const State& u) const {
        const double phi = net.forward(Eigen::Vector3d(u(1), u(0), u(3)));
        const double inf = beta * u(1) * u(0);
        const double quar = phi * u(1) * u(1);
        return {-inf, inf - quar - gamma * u(1), quar - delta * u(2), gamma * u(1) + delta * u(2)};
    }

    // Adds abar^T d f/d u into ubar and abar^T d f/d params into pgrad.
    void vjp(const State& u, const State& abar, State& ubar, Eigen::Ref<Eigen::VectorXd> pgrad) const {
        const Eigen::Index P = net.parameter_count();
        const Eigen::Vector3d in(u(1), u(0), u(3));
        const double phi = net.forward(in);
        const double si = abar(1) - abar(0);
        const double qi = abar(2) - abar(1);
        const double phibar = u(1) * u(1) * qi;
        const Eigen::Vector3d gin = net.backward(in, phibar, pgrad.head(P));
        ubar(0) += beta * u(1) * si + gin(1);
        ubar(1) += beta * u(0) * si + 2.0 * phi * u(1) * qi + gamma * (abar(3) - abar(1)) + gin(0);
        ubar(2) += delta * (abar(3) - abar(2));
        ubar(3) += gin(2);
        pgrad(P) += u(1) * u(0) * si;
        pgrad(P + 1) += u(2) * (abar(3) - abar(2));
        pgrad(P + 2) += u(1) * (abar(3) - abar(1));
    }
};

int steps_per_day(double dt) {
    const double spd = 1.0 / dt;
    const long n = std::lround(spd);
    if (n < 1 || std::abs(spd - static_cast<double>(n)) > 1e-9 * spd)
        throw DomainError(fmt::format("step {} does not divide a day", dt));
    return static_cast<int>(n);
}

void check_window(const Stage2Data& data, int t0, int window) {
    if (data.simulated.size() != data.infectious.size())
        throw DomainError("stage-2 observations and simulated states differ in length");
    if (window < 2) throw DomainError("stage-2 window needs at least two days");
    if (t0 < 0 || static_cast<std::size_t>(t0 + window) > data.infectious.size())
        throw DomainError(fmt::format("window [{}, {}) leaves the series", t0, t0 + window));
}

CompartmentState window_init(const Stage2Data& data, int t0) {
    const auto& sim = data.simulated[static_cast<std::size_t>(t0)];
    return {sim.s, data.infectious[static_cast<std::size_t>(t0)], sim.q, sim.r};
}

}  // namespace

Eigen::VectorXd Stage2Params::pack() const {
    Eigen::VectorXd v(size());
    const Eigen::Index P = network.parameter_count();
    v.head(P) = network.parameters();
    v(P) = beta;
    v(P + 1) = delta;
    v(P + 2) = gamma;
    return v;
}

void Stage2Params::unpack(const Eigen::VectorXd& v) {
    if (v.size() != size()) throw DomainError("packed stage-2 parameter vector has the wrong length");
    const Eigen::Index P = network.parameter_count();
    network.set_parameters(v.head(P));
    beta = v(P);
    delta = v(P + 1);
    gamma = v(P + 2);
}

void Stage2Config::validate(std::size_t series_length) const {
    if (window < 2) throw ConfigError("stage-2 window needs at least two days");
    if (static_cast<std::size_t>(window) > series_length)
        throw ConfigError(fmt::format("stage-2 window of {} days exceeds the {}-day series", window, series_length));
    if (iterations < 0) throw ConfigError("stage-2 iteration count must be nonnegative");
    if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate))
        throw ConfigError("stage-2 learning rate must be finite and nonnegative");
    if (eval_stride < 1) throw ConfigError("evaluation stride must be positive");
    steps_per_day(dt);
}

std::vector<double> simulate_window(const Stage2Data& data, const Stage2Params& params, int t0, int window,
                                    double dt) {
    check_window(data, t0, window);
    const auto net = std::make_shared<const RateNetwork>(params.network);
    const auto spec = RateSpec::neural(net, params.beta, params.delta, params.gamma);
    const Trajectory traj = simulate(spec, window_init(data, t0), TimeGrid::daily(window - 1, dt));
    std::vector<double> out;
    for (const auto& s : traj.states) out.push_back(s.i);
    return out;
}

double window_loss(const Stage2Data& data, const Stage2Params& params, int t0, const Stage2Config& config,
                   Eigen::VectorXd* grad) {
    const int W = config.window;
    check_window(data, t0, W);
    const double h = config.dt;
    const int spd = steps_per_day(h);
    const long steps = static_cast<long>(W - 1) * spd;
    const CompartmentState init = window_init(data, t0);
    const double total = init.total();
    if (!(total > 0.0)) throw DomainError("window starts from an empty population");
    const Rhs f{params.network, params.beta, params.delta, params.gamma};

    std::vector<State> ys;
    ys.reserve(static_cast<std::size_t>(steps + 1));
    ys.emplace_back(init.s / total, init.i / total, init.q / total, init.r / total);
    std::vector<double> resid(static_cast<std::size_t>(W), 0.0);
    double loss = 0.0;
    for (long n = 1; n <= steps; ++n) {
        const State& y = ys.back();
        const State k1 = f(y);
        const State k2 = f(y + 0.5 * h * k1);
        const State k3 = f(y + 0.5 * h * k2);
        const State k4 = f(y + h * k3);
        const State next = y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        ys.push_back(next);
        if (n % spd == 0) {
            const auto day = static_cast<std::size_t>(n / spd);
            const double r = total * ys.back()(1) - data.infectious[static_cast<std::size_t>(t0) + day];
            resid[day] = r;
            loss += r * r;
        }
    }
    loss /= W;
    if (!grad) return loss;

    const Eigen::Index P = params.network.parameter_count();
    grad->setZero(P + 3);
    State ybar = State::Zero();
    for (long n = steps; n-- > 0;) {
        const long out = n + 1;
        if (out % spd == 0) ybar(1) += 2.0 * total * resid[static_cast<std::size_t>(out / spd)] / W;
        const State& y = ys[static_cast<std::size_t>(n)];
        const State k1 = f(y);
        const State u2 = y + 0.5 * h * k1;
        const State k2 = f(u2);
        const State u3 = y + 0.5 * h * k2;
        const State k3 = f(u3);
        const State u4 = y + h * k3;
        State k1bar = h / 6.0 * ybar;
        State k2bar = h / 3.0 * ybar;
        State k3bar = h / 3.0 * ybar;
        const State k4bar = h / 6.0 * ybar;
        State prev = ybar;
        State ubar = State::Zero();
        f.vjp(u4, k4bar, ubar, *grad);
        prev += ubar;
        k3bar += h * ubar;
        ubar.setZero();
        f.vjp(u3, k3bar, ubar, *grad);
        prev += ubar;
        k2bar += 0.5 * h * ubar;
        ubar.setZero();
        f.vjp(u2, k2bar, ubar, *grad);
        prev += ubar;
        k1bar += 0.5 * h * ubar;
        ubar.setZero();
        f.vjp(y, k1bar, ubar, *grad);
        ybar = prev + ubar;
    }
    return loss;
}

double evaluation_loss(const Stage2Data& data, const Stage2Params& params, const Stage2Config& config) {
    const int last = static_cast<int>(data.infectious.size()) - config.window;
    double sum = 0.0;
    int count = 0;
    for (int t0 = 0; t0 <= last; t0 += config.eval_stride) {
        sum += window_loss(data, params, t0, config);
        ++count;
    }
    return sum / count;
}

Stage2Result run_stage2(const Stage2Data& data, Stage2Params init, const Stage2Config& config) {
    config.validate(data.infectious.size());
    Stage2Result res;
    res.params = std::move(init);
    res.initial_eval = evaluation_loss(data, res.params, config);
    std::mt19937_64 rng(mix_seed(config.seed, kWindowStream));
    std::uniform_int_distribution<int> start(0, static_cast<int>(data.infectious.size()) - config.window);
    Eigen::VectorXd theta = res.params.pack();
    Eigen::VectorXd grad;
    const Eigen::Index P = res.params.network.parameter_count();
    for (int step = 0; step < config.iterations; ++step) {
        const int t0 = start(rng);
        const double loss = window_loss(data, res.params, t0, config, &grad);
        if (!std::isfinite(loss) || !grad.allFinite())
            throw DivergenceError(fmt::format("stage-2 loss became non-finite at step {}", step), step);
        res.step_loss.push_back(loss);
        res.step_window.push_back(t0);
        theta -= config.learning_rate * grad;
        for (Eigen::Index j = P; j < P + 3; ++j) theta(j) = std::max(theta(j), 0.0);
        res.params.unpack(theta);
    }
    res.final_eval = evaluation_loss(data, res.params, config);
    if (!std::isfinite(res.final_eval))
        throw DivergenceError("stage-2 evaluation loss is not finite", config.iterations);
    return res;
}

ParameterSpace real_data_space(double first_observation) {
    if (!(first_observation > 0.0)) throw DomainError("first infectious observation must be positive");
    const double i0 = first_observation;
    return ParameterSpace({{"x1", 0.0, 1.0, false},
                           {"x2", 0.0, 1.0, false},
                           {"x3", 0.0, 1.0, false},
                           {"x4", 0.0, 1.0, false},
                           {"x5", 0.1 * i0, 10.0 * i0, true},
                           {"x6", 10.0 * i0, 1000.0 * i0, true}});
}

Trajectory simulate_real(const Eigen::VectorXd& x, int days, double unit) {
    if (x.size() != 6) throw DomainError("real-data model takes six parameters");
    if (days < 2) throw DomainError("real-data series needs at least two days");
    const CompartmentState init{(x(5) - x(4)) / unit, x(4) / unit, 0.0, 0.0};
    return simulate(RateSpec::linear(x(0), x(1), x(2), x(3)), init, TimeGrid::daily(days - 1));
}

ObservationSet infectious_observations(const RealSeries& series) {
    if (series.size() < 2) throw DomainError("real-data series needs at least two days");
    const double unit = series.initial();
    if (!(unit > 0.0)) throw DomainError("first infectious observation must be positive");
    ObservationSet obs;
    obs.grid = TimeGrid::daily(static_cast<double>(series.size() - 1));
    obs.rows.resize(series.size());
    for (std::size_t t = 0; t < series.size(); ++t) obs.rows[t][1] = series.infectious[t] / unit;
    obs.validate();
    return obs;
}

std::vector<double> simulate_neural_series(const Stage2Params& params, const Eigen::VectorXd& x_first, int days,
                                           double dt) {
    if (x_first.size() != 6) throw DomainError("real-data model takes six parameters");
    const auto net = std::make_shared<const RateNetwork>(params.network);
    const CompartmentState init{x_first(5) - x_first(4), x_first(4), 0.0, 0.0};
    const Trajectory traj = simulate(RateSpec::neural(net, params.beta, params.delta, params.gamma), init,
                                     TimeGrid::daily(days - 1, dt));
    std::vector<double> out;
    for (const auto& s : traj.states) out.push_back(s.i);
    return out;
}

TwoStageResult run_two_stage(const TwoStageConfig& config, const RealSeries& series) {
    config.stage2.validate(series.size());
    const int days = static_cast<int>(series.size());
    const ObservationSet obs = infectious_observations(series);
    const double unit = series.initial();
    const ParameterSpace space = real_data_space(unit);

    TwoStageResult res;
    res.stage1 = run_bo([&](const Eigen::VectorXd& x) { return simulate_real(x, days, unit); }, obs, space,
                        config.stage1);
    res.x_first = res.stage1.recommendation.x;
    const Trajectory traj = simulate_real(res.x_first, days, unit);
    // Stage 2 works on populations in units of the largest observation.
    const double peak = *std::max_element(series.infectious.begin(), series.infectious.end());
    const double to_peak = unit / peak;
    for (std::size_t t = 0; t < series.size(); ++t) res.data.infectious.push_back(series.infectious[t] / peak);
    for (const auto& s : traj.states)
        res.data.simulated.push_back({s.s * to_peak, s.i * to_peak, s.q * to_peak, s.r * to_peak});

    Stage2Params init;
    init.network = RateNetwork::random(config.nn_init_seed);
    init.beta = res.x_first(1);
    init.delta = res.x_first(2);
    init.gamma = res.x_first(3);
    try {
        res.stage2 = run_stage2(res.data, init, config.stage2);
        res.params = res.stage2->params;
        res.fitted_infectious = simulate_neural_series(res.params, res.x_first, days, config.stage2.dt);
    } catch (const DivergenceError& e) {
        res.warning = fmt::format("{}; keeping the stage-1 result", e.what());
    } catch (const NumericalFailure& e) {
        res.warning = fmt::format("stage-2 model cannot be simulated ({}); keeping the stage-1 result", e.what());
    }
    if (!res.warning.empty()) {
        res.stage2.reset();
        res.params = init;
        res.fitted_infectious.clear();
        for (const auto& s : traj.states) res.fitted_infectious.push_back(s.i * unit);
    }
    return res;
}

}  // namespace epicalib
