#include "epicalib/acquisition.hpp"
#include "epicalib/calibrate.hpp"
#include "epicalib/data_io.hpp"
#include "epicalib/twostage.hpp"

#include <benchmark/benchmark.h>

#include <memory>
#include <random>

namespace {

using namespace epicalib;

Scenario fast_scenario() {
    ScenarioSpec s;
    s.every_days = 3;
    return make_scenario(s);
}

std::vector<HistoryEntry> history(const ScenarioSpec& spec, int n) {
    std::vector<HistoryEntry> h;
    std::mt19937_64 rng(7);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    for (int i = 0; i < n; ++i) {
        Eigen::VectorXd x(4);
        for (int d = 0; d < 4; ++d) x(d) = u(rng);
        h.push_back({x, simulate_linear(x, spec)});
    }
    return h;
}

NetworkSurrogate surrogate(const Scenario& sc, SurrogateMode mode, int n) {
    NetworkFitOptions o;
    o.gp.restarts = 1;
    o.gp.max_iter = 40;
    return NetworkSurrogate::fit(history(sc.spec, n), FunctionNetwork::siqr(), mode,
                                 MetricTarget::from(sc.observations), o);
}

void BM_Simulate(benchmark::State& state) {
    const RateSpec spec = ground_truth_rates(GroundTruth::Linear);
    const TimeGrid grid = TimeGrid::daily(30.0);
    for (auto _ : state) benchmark::DoNotOptimize(simulate(spec, kScenarioInit, grid));
}
BENCHMARK(BM_Simulate);

void BM_SimulateNeural(benchmark::State& state) {
    const auto net = std::make_shared<const RateNetwork>(RateNetwork::random(1));
    const RateSpec spec = RateSpec::neural(net, 0.3, 0.1, 0.1);
    const TimeGrid grid = TimeGrid::daily(30.0);
    for (auto _ : state) benchmark::DoNotOptimize(simulate(spec, kScenarioInit, grid));
}
BENCHMARK(BM_SimulateNeural);

void BM_GpFit(benchmark::State& state) {
    const auto n = state.range(0);
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Eigen::MatrixXd X(n, 4);
    Eigen::MatrixXd Y(n, 1);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (int d = 0; d < 4; ++d) X(i, d) = u(rng);
        Y(i, 0) = std::sin(3.0 * X(i, 0)) + X(i, 1) * X(i, 2);
    }
    gp::FitOptions o;
    o.restarts = 2;
    for (auto _ : state) benchmark::DoNotOptimize(gp::GaussianProcess::fit(X, Y, o));
}
BENCHMARK(BM_GpFit)->Arg(10)->Arg(30)->Arg(60)->Unit(benchmark::kMillisecond);

void BM_ExpectedMetric(benchmark::State& state) {
    const Scenario sc = fast_scenario();
    const auto mode = state.range(0) == 0 ? SurrogateMode::CompositeOnly : SurrogateMode::FullNetwork;
    const NetworkSurrogate s = surrogate(sc, mode, static_cast<int>(state.range(1)));
    AcquisitionSpec spec = AcquisitionSpec::preset(
        mode == SurrogateMode::CompositeOnly ? AcquisitionKind::KG_CF : AcquisitionKind::KG_FN, BudgetProfile::Fast);
    const AcquisitionContext ctx(s, MetricTarget::from(sc.observations), spec,
                                 SampleBank::generate(spec, s.time_points(), 4, 1));
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(4, 0.4);
    Eigen::VectorXd g;
    for (auto _ : state) benchmark::DoNotOptimize(ctx.expected(x, &g));
}
BENCHMARK(BM_ExpectedMetric)->Args({0, 20})->Args({1, 20})->Args({1, 50})->Unit(benchmark::kMicrosecond);

void BM_AcquisitionValue(benchmark::State& state) {
    const Scenario sc = fast_scenario();
    const auto kind = static_cast<AcquisitionKind>(state.range(0));
    const auto mode = kind == AcquisitionKind::KG_FN ? SurrogateMode::FullNetwork : SurrogateMode::CompositeOnly;
    const NetworkSurrogate s = surrogate(sc, mode, 20);
    const AcquisitionSpec spec = AcquisitionSpec::preset(kind, BudgetProfile::Fast);
    AcquisitionContext ctx(s, MetricTarget::from(sc.observations), spec,
                           SampleBank::generate(spec, s.time_points(), 4, 1));
    ctx.prepare();
    const Eigen::VectorXd x = Eigen::VectorXd::Constant(4, 0.3);
    const ZVector z = kind == AcquisitionKind::DG_CF ? ZVector{false, true, false, false} : kAllCompartments;
    for (auto _ : state) benchmark::DoNotOptimize(ctx.value(x, z));
}
BENCHMARK(BM_AcquisitionValue)
    ->Arg(static_cast<int>(AcquisitionKind::KG_CF))
    ->Arg(static_cast<int>(AcquisitionKind::DG_CF))
    ->Arg(static_cast<int>(AcquisitionKind::KG_FN))
    ->Unit(benchmark::kMillisecond);

void BM_Stage2WindowGradient(benchmark::State& state) {
    RealSeries series;
    for (int t = 0; t < 60; ++t) series.infectious.push_back(1.0 + t);
    Eigen::VectorXd x(6);
    x << 0.1, 0.4, 0.1, 0.1, 1.0, 100.0;
    const Trajectory tr = simulate_real(x, 60, 60.0);
    Stage2Data data;
    for (int t = 0; t < 60; ++t) data.infectious.push_back(tr.states[static_cast<std::size_t>(t)].i);
    data.simulated = tr.states;
    Stage2Params p;
    p.network = RateNetwork::random(2);
    p.beta = 0.4;
    p.delta = 0.1;
    p.gamma = 0.1;
    const Stage2Config c;
    Eigen::VectorXd g;
    for (auto _ : state) benchmark::DoNotOptimize(window_loss(data, p, 10, c, &g));
}
BENCHMARK(BM_Stage2WindowGradient)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
