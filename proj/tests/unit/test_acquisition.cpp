#include "epicalib/acquisition.hpp"
#include "epicalib/errors.hpp"

#include "acquisition_toy.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <functional>
#include <random>

namespace epicalib {
namespace {

using namespace toy;

TEST(ExpectedImprovement, ClosedFormExamples) {
    EXPECT_NEAR(expected_improvement(0.0, 1.0, 0.0), 0.3989422804014327, 1e-15);
    EXPECT_DOUBLE_EQ(expected_improvement(-0.2, 0.0, 0.0), 0.0);
    EXPECT_DOUBLE_EQ(expected_improvement(0.7, 0.0, 0.5), 0.7 - 0.5);
    EXPECT_DOUBLE_EQ(expected_improvement(0.5, 1e-12, 0.5, 1e-10), 0.0);
    EXPECT_GT(expected_improvement(-3.0, 1.0, 0.0), 0.0);
}

TEST(AcquisitionSpec, DefaultsAndSubsets) {
    AcquisitionSpec s;
    EXPECT_EQ(s.K, 8);
    EXPECT_EQ(s.L, 128);
    const auto z = s.subsets();
    ASSERT_EQ(z.size(), 5u);
    EXPECT_EQ(z[0], (ZVector{true, false, false, false}));
    EXPECT_EQ(z[4], kAllCompartments);
    s.full_z_enumeration = true;
    EXPECT_EQ(s.subsets().size(), 15u);
    s.z_subsets = {ZVector{}};
    EXPECT_THROW(s.validate(), ZeroZ);
    AcquisitionSpec bad;
    bad.K = 0;
    EXPECT_THROW(bad.validate(), ConfigError);
}

TEST(AcquisitionSpec, ParseKind) {
    EXPECT_EQ(parse_acquisition_kind("kg-cf"), AcquisitionKind::KG_CF);
    EXPECT_EQ(parse_acquisition_kind("DG_CF"), AcquisitionKind::DG_CF);
    EXPECT_EQ(parse_acquisition_kind("EI"), AcquisitionKind::EI);
    EXPECT_EQ(to_string(AcquisitionKind::KG_FN), "KG-FN");
    EXPECT_THROW(parse_acquisition_kind("UCB"), ConfigError);
}

TEST(SampleBank, ShapesAndDeterminism) {
    const AcquisitionSpec spec = spec_of(AcquisitionKind::KG_CF, 8, 128);
    const auto a = SampleBank::generate(spec, 5, 3, 42);
    const auto b = SampleBank::generate(spec, 5, 3, 42);
    const auto c = SampleBank::generate(spec, 5, 3, 43);
    EXPECT_EQ(a.outer.rows(), 8);
    EXPECT_EQ(a.outer.cols(), 20);
    EXPECT_EQ(a.inner.rows(), 128);
    EXPECT_EQ(a.candidates.rows(), spec.raw_candidates);
    EXPECT_EQ(a.inner_starts.rows(), spec.inner_restarts);
    EXPECT_EQ(a.outer, b.outer);
    EXPECT_EQ(a.inner, b.inner);
    EXPECT_NE(a.inner, c.inner);
    EXPECT_TRUE(a.inner.allFinite());
    EXPECT_EQ(a.outer_block(3, 5)(2, 1), a.outer(3, 2 * 4 + 1));
    // Randomized QMC normals: first two moments close to the standard normal.
    EXPECT_NEAR(a.inner.col(7).mean(), 0.0, 0.05);
    EXPECT_NEAR(a.inner.col(7).squaredNorm() / 128.0, 1.0, 0.1);
}

TEST(Acquisition, GraphModeMismatchRejected) {
    const auto s = toy_surrogate(false);
    const auto spec = spec_of(AcquisitionKind::KG_FN, 4, 4);
    EXPECT_THROW(AcquisitionContext(s, toy_target(false), spec, SampleBank::generate(spec, 1, 1, 0)), ConfigError);
}

TEST(Acquisition, DeterministicSurrogateKgIsZeroAndTieRule) {
    std::vector<HistoryEntry> h;
    for (double u : {0.1, 0.5, 0.9}) h.push_back({vec1(u), single_point({0.4, 0.3, 0.2, 0.1})});
    const auto s = NetworkSurrogate::fit(h, FunctionNetwork::siqr(), SurrogateMode::CompositeOnly, toy_target(true));
    auto spec = spec_of(AcquisitionKind::KG_CF, 8, 32);
    spec.raw_candidates = 8;
    const auto bank = SampleBank::generate(spec, 1, 1, 5);
    AcquisitionContext ctx(s, toy_target(true), spec, bank);
    ctx.prepare();
    for (double u : {0.0, 0.33, 0.8}) EXPECT_NEAR(ctx.kg(vec1(u)), 0.0, 1e-4);
    const Decision d = ctx.maximize();
    EXPECT_NEAR(d.acq_value, 0.0, 1e-4);
    EXPECT_EQ(d.x, bank.candidates.row(0).transpose());
}

TEST(Acquisition, DeterministicCompartmentDgIsZero) {
    // I is constant across the history, so conditioning on it changes nothing.
    std::vector<HistoryEntry> h;
    for (double u : {0.05, 0.3, 0.62, 0.95}) h.push_back({vec1(u), single_point({toy_s(u), 0.25, 0.0, 0.0})});
    const auto s = NetworkSurrogate::fit(h, FunctionNetwork::siqr(), SurrogateMode::CompositeOnly, toy_target(true));
    const auto spec = spec_of(AcquisitionKind::DG_CF, 16, 64);
    AcquisitionContext ctx(s, toy_target(true), spec, SampleBank::generate(spec, 1, 1, 2));
    ctx.prepare();
    EXPECT_NEAR(ctx.dg(vec1(0.5), {false, true, false, false}), 0.0, 1e-4);
    EXPECT_GT(ctx.dg(vec1(0.5), {true, false, false, false}), 1e-4);
    EXPECT_THROW(ctx.dg(vec1(0.5), ZVector{}), ZeroZ);
}

TEST(Acquisition, KgAtQueriedPointVanishes) {
    const auto s = toy_surrogate(true);
    const auto spec = spec_of(AcquisitionKind::KG_CF, 256, 256);
    AcquisitionContext ctx(s, toy_target(true), spec, SampleBank::generate(spec, 1, 1, 8));
    ctx.set_discrete_domain(toy_domain());
    ctx.prepare();
    KgDetail det;
    const double v = ctx.kg(vec1(0.3), nullptr, &det);
    EXPECT_NEAR(v, 0.0, std::max(1e-6, 3.0 * det.std_error));
}

TEST(Acquisition, SingleNodeKgMatchesQuadratureOracle) {
    const auto s = toy_surrogate(false);
    const auto spec = spec_of(AcquisitionKind::KG_CF, 4096, 4096);
    AcquisitionContext ctx(s, toy_target(false), spec, SampleBank::generate(spec, 1, 1, 13));
    ctx.set_discrete_domain(toy_domain());
    ctx.prepare();
    const auto& gs = s.model_of(0)->gps.front();
    for (double x : {0.5, 0.2}) {
        KgDetail det;
        const double est = ctx.kg(vec1(x), nullptr, &det);
        const double oracle = quadrature_oracle(gs, nullptr, x, true, false, 1.0);
        EXPECT_GT(oracle, 1e-4);
        EXPECT_NEAR(est, oracle, 3.0 * det.std_error) << "x=" << x;
    }
}

TEST(Acquisition, TwoCompartmentDgMatchesQuadratureOracle) {
    const auto s = toy_surrogate(true);
    const auto spec = spec_of(AcquisitionKind::DG_CF, 4096, 4096);
    AcquisitionContext ctx(s, toy_target(true), spec, SampleBank::generate(spec, 1, 1, 21));
    ctx.set_discrete_domain(toy_domain());
    ctx.prepare();
    const auto& gs = s.model_of(0)->gps.front();
    const auto& gi = s.model_of(1)->gps.front();
    const double x = 0.5;
    KgDetail d1, dall;
    const double e1 = ctx.dg(vec1(x), {true, false, false, false}, nullptr, &d1);
    const double eall = ctx.dg(vec1(x), kAllCompartments, nullptr, &dall);
    EXPECT_NEAR(e1, quadrature_oracle(gs, &gi, x, true, false, 4.0), 3.0 * d1.std_error);
    EXPECT_NEAR(eall, quadrature_oracle(gs, &gi, x, true, true, 1.0), 3.0 * dall.std_error);
}

TEST(Acquisition, DgWithAllOnesIsBitIdenticalToKg) {
    for (auto kind : {AcquisitionKind::KG_CF, AcquisitionKind::DG_CF, AcquisitionKind::KG_FN}) {
        const auto mode = kind == AcquisitionKind::KG_FN ? SurrogateMode::FullNetwork : SurrogateMode::CompositeOnly;
        const auto s = toy_surrogate(true, mode);
        const auto spec = spec_of(kind, 6, 16);
        AcquisitionContext ctx(s, toy_target(true), spec, SampleBank::generate(spec, 1, 1, 4));
        ctx.prepare();
        for (double x : {0.11, 0.52, 0.93}) {
            KgDetail a, b;
            const double kg = ctx.kg(vec1(x), nullptr, &a);
            const double dg = ctx.dg(vec1(x), kAllCompartments, nullptr, &b);
            EXPECT_EQ(kg, dg);
            EXPECT_EQ(a.fantasy_optima, b.fantasy_optima);
        }
    }
}

TEST(Acquisition, NetworkAndCompositeAgreeOnSingleRootNode) {
    // With only S observed the network reduces to one parentless node.
    const auto cf = toy_surrogate(false, SurrogateMode::CompositeOnly);
    const auto fn = toy_surrogate(false, SurrogateMode::FullNetwork);
    ASSERT_EQ(fn.models().size(), 1u);
    const auto scf = spec_of(AcquisitionKind::KG_CF, 32, 64);
    const auto sfn = spec_of(AcquisitionKind::KG_FN, 32, 64);
    AcquisitionContext a(cf, toy_target(false), scf, SampleBank::generate(scf, 1, 1, 6));
    AcquisitionContext b(fn, toy_target(false), sfn, SampleBank::generate(sfn, 1, 1, 6));
    a.set_discrete_domain(toy_domain());
    b.set_discrete_domain(toy_domain());
    EXPECT_NEAR(a.prepare(), b.prepare(), 1e-12);
    for (double x : {0.2, 0.5, 0.77}) EXPECT_NEAR(a.kg(vec1(x)), b.kg(vec1(x)), 1e-10);
}

TEST(Acquisition, DecoupledValueIsNonnegative) {
    const auto s = toy_surrogate(true);
    const auto spec = spec_of(AcquisitionKind::DG_CF, 4096, 4096);
    AcquisitionContext ctx(s, toy_target(true), spec, SampleBank::generate(spec, 1, 1, 77));
    ctx.set_discrete_domain(toy_domain());
    ctx.prepare();
    std::mt19937_64 rng(3);
    std::uniform_real_distribution<double> unif;
    for (int i = 0; i < 5; ++i) {
        const double x = unif(rng);
        for (const auto& z : spec.subsets()) {
            KgDetail det;
            const double v = ctx.dg(vec1(x), z, nullptr, &det);
            EXPECT_GE(v, -3.0 * det.std_error - 1e-12) << "x=" << x;
        }
    }
}

TEST(Acquisition, EstimatorMeanStableAcrossSampleSizes) {
    const auto s = toy_surrogate(true);
    std::vector<KgDetail> det(2);
    std::vector<double> vals(2);
    for (int i = 0; i < 2; ++i) {
        const int K = 512 << i;
        const auto spec = spec_of(AcquisitionKind::KG_CF, K, K);
        AcquisitionContext ctx(s, toy_target(true), spec, SampleBank::generate(spec, 1, 1, 100 + i));
        ctx.set_discrete_domain(toy_domain());
        ctx.prepare();
        vals[i] = ctx.kg(vec1(0.5), nullptr, &det[i]);
    }
    EXPECT_NEAR(vals[0], vals[1], 3.0 * std::hypot(det[0].std_error, det[1].std_error));
    EXPECT_NEAR(det[1].std_error / det[0].std_error, 1.0 / std::sqrt(2.0), 0.15);
}

// Simulator-backed history in two dimensions for gradient checks.
struct SiqrToy {
    std::vector<HistoryEntry> history;
    MetricTarget target;
};

SiqrToy siqr_toy() {
    const TimeGrid grid = TimeGrid::daily(30.0, 0.05, 10);
    auto rates = [](const Eigen::VectorXd& u) {
        return RateSpec::linear(0.05 + 0.2 * u(0), 0.9, 0.2, 0.1 + 0.2 * u(1));
    };
    SiqrToy t;
    const Eigen::MatrixXd pts = sobol_points(2, 9, 12);
    for (Eigen::Index i = 0; i < pts.rows(); ++i) {
        const Eigen::VectorXd x = pts.row(i).transpose();
        t.history.push_back({x, simulate(rates(x), kInit, grid)});
    }
    Eigen::VectorXd gt(2);
    gt << 0.3, 0.6;
    t.target = MetricTarget::from(ObservationSet::from_trajectory(simulate(rates(gt), kInit, grid), kFullMask));
    return t;
}

Eigen::VectorXd fd_gradient(const std::function<double(const Eigen::VectorXd&)>& f, const Eigen::VectorXd& x,
                            double h = 1e-6) {
    Eigen::VectorXd g(x.size());
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        Eigen::VectorXd a = x, b = x;
        a(i) += h;
        b(i) -= h;
        g(i) = (f(a) - f(b)) / (2.0 * h);
    }
    return g;
}

void expect_grad_close(const Eigen::VectorXd& analytic, const Eigen::VectorXd& fd, double rel) {
    const double scale = std::max(fd.norm(), 1e-8);
    EXPECT_LT((analytic - fd).norm() / scale, rel) << "analytic " << analytic.transpose() << " fd " << fd.transpose();
}

TEST(Acquisition, CompositeConditionedGradients) {
    const auto toy = siqr_toy();
    const auto s =
        NetworkSurrogate::fit(toy.history, FunctionNetwork::siqr(), SurrogateMode::CompositeOnly, toy.target);
    const auto spec = spec_of(AcquisitionKind::DG_CF, 4, 32);
    AcquisitionContext ctx(s, toy.target, spec, SampleBank::generate(spec, toy.target.size(), 2, 9));
    std::mt19937_64 rng(1);
    std::uniform_real_distribution<double> unif(0.1, 0.9);
    for (int trial = 0; trial < 4; ++trial) {
        Eigen::VectorXd xp(2), at(2);
        xp << unif(rng), unif(rng);
        at << unif(rng), unif(rng);
        for (const ZVector& z : {kAllCompartments, ZVector{false, true, false, false}}) {
            Eigen::VectorXd gx, ga;
            ctx.conditioned_expected(xp, at, trial, z, &gx, &ga);
            expect_grad_close(gx, fd_gradient([&](const Eigen::VectorXd& v) {
                                  return ctx.conditioned_expected(v, at, trial, z);
                              }, xp), 1e-3);
            expect_grad_close(ga, fd_gradient([&](const Eigen::VectorXd& v) {
                                  return ctx.conditioned_expected(xp, v, trial, z);
                              }, at), 1e-3);
        }
        Eigen::VectorXd g;
        ctx.expected(xp, &g);
        expect_grad_close(g, fd_gradient([&](const Eigen::VectorXd& v) { return ctx.expected(v); }, xp), 1e-3);
    }
}

TEST(Acquisition, NetworkConditionedGradient) {
    const auto toy = siqr_toy();
    const auto s = NetworkSurrogate::fit(toy.history, FunctionNetwork::siqr(), SurrogateMode::FullNetwork, toy.target);
    const auto spec = spec_of(AcquisitionKind::KG_FN, 4, 16);
    AcquisitionContext ctx(s, toy.target, spec, SampleBank::generate(spec, toy.target.size(), 2, 10));
    std::mt19937_64 rng(2);
    std::uniform_real_distribution<double> unif(0.1, 0.9);
    for (int trial = 0; trial < 3; ++trial) {
        Eigen::VectorXd xp(2), at(2);
        xp << unif(rng), unif(rng);
        at << unif(rng), unif(rng);
        Eigen::VectorXd gx;
        ctx.conditioned_expected(xp, at, trial, kAllCompartments, &gx);
        expect_grad_close(gx, fd_gradient([&](const Eigen::VectorXd& v) {
                              return ctx.conditioned_expected(v, at, trial, kAllCompartments);
                          }, xp), 1e-3);
        Eigen::VectorXd g;
        ctx.expected(xp, &g);
        expect_grad_close(g, fd_gradient([&](const Eigen::VectorXd& v) { return ctx.expected(v); }, xp), 1e-3);
    }
}

TEST(Acquisition, NetworkExpectationMatchesSampling) {
    const auto toy = siqr_toy();
    const auto s = NetworkSurrogate::fit(toy.history, FunctionNetwork::siqr(), SurrogateMode::FullNetwork, toy.target);
    const auto spec = spec_of(AcquisitionKind::KG_FN, 2, 32);
    const auto bank = SampleBank::generate(spec, toy.target.size(), 2, 11);
    AcquisitionContext ctx(s, toy.target, spec, bank);
    std::vector<Eigen::MatrixXd> blocks;
    for (Eigen::Index l = 0; l < bank.inner.rows(); ++l) blocks.push_back(bank.inner_block(l, toy.target.size()));
    Eigen::VectorXd x(2);
    x << 0.4, 0.7;
    EXPECT_NEAR(ctx.expected(x), s.expected_metric(toy.target, x, blocks), 1e-12);
}

TEST(Acquisition, MaximizeSolvesWithRefinement) {
    const auto toy = siqr_toy();
    const auto s =
        NetworkSurrogate::fit(toy.history, FunctionNetwork::siqr(), SurrogateMode::CompositeOnly, toy.target);
    auto spec = spec_of(AcquisitionKind::KG_CF, 4, 32);
    spec.raw_candidates = 8;
    spec.restarts = 2;
    const auto bank = SampleBank::generate(spec, toy.target.size(), 2, 12);
    AcquisitionContext ctx(s, toy.target, spec, bank);
    ctx.prepare();
    const Decision d = ctx.maximize();
    EXPECT_EQ(d.z, kAllCompartments);
    EXPECT_TRUE(Box::unit(2).contains(d.x));
    for (Eigen::Index i = 0; i < bank.candidates.rows(); ++i)
        EXPECT_GE(d.acq_value, ctx.kg(bank.candidates.row(i).transpose()));
    EXPECT_DOUBLE_EQ(d.acq_value, ctx.kg(d.x));
}

TEST(Acquisition, DgWithOnlyAllOnesMatchesKgDecision) {
    const auto toy = siqr_toy();
    const auto s =
        NetworkSurrogate::fit(toy.history, FunctionNetwork::siqr(), SurrogateMode::CompositeOnly, toy.target);
    auto kg = spec_of(AcquisitionKind::KG_CF, 4, 32);
    kg.raw_candidates = 6;
    kg.restarts = 2;
    auto dg = kg;
    dg.kind = AcquisitionKind::DG_CF;
    dg.z_subsets = {kAllCompartments};
    const auto bank = SampleBank::generate(kg, toy.target.size(), 2, 14);
    AcquisitionContext a(s, toy.target, kg, bank);
    AcquisitionContext b(s, toy.target, dg, bank);
    a.prepare();
    b.prepare();
    const Decision da = a.maximize();
    const Decision db = b.maximize();
    EXPECT_EQ(da.x, db.x);
    EXPECT_EQ(da.z, db.z);
    EXPECT_EQ(da.acq_value, db.acq_value);
}

gp::GaussianProcess blackbox_gp(const std::vector<double>& xs, const std::function<double(double)>& f) {
    Eigen::MatrixXd X(static_cast<Eigen::Index>(xs.size()), 1), Y(static_cast<Eigen::Index>(xs.size()), 1);
    for (std::size_t i = 0; i < xs.size(); ++i) {
        X(static_cast<Eigen::Index>(i), 0) = xs[i];
        Y(static_cast<Eigen::Index>(i), 0) = f(xs[i]);
    }
    return gp::GaussianProcess::fit(X, Y, gp::FitOptions{}, gp::InputScaling::identity(1));
}

TEST(Acquisition, EiGradientMatchesFiniteDifference) {
    const auto g = blackbox_gp({0.1, 0.3, 0.5, 0.9}, [](double u) { return std::sin(6.0 * u); });
    const auto spec = spec_of(AcquisitionKind::EI, 1, 1);
    AcquisitionContext ctx(g, 0.9, spec, SampleBank::generate(spec, 1, 1, 0));
    for (double u : {0.2, 0.65, 0.8}) {
        Eigen::VectorXd grad;
        ctx.ei(vec1(u), &grad);
        expect_grad_close(grad, fd_gradient([&](const Eigen::VectorXd& v) { return ctx.ei(v); }, vec1(u)), 1e-4);
    }
}

TEST(Acquisition, EiMaximizerMatchesDenseGrid) {
    // High values rise toward the untried right end of the interval.
    const auto g = blackbox_gp({0.02, 0.12, 0.22, 0.35, 0.48}, [](double u) { return 2.0 * u - u * u; });
    double best = -1e300;
    for (const double u : {0.02, 0.12, 0.22, 0.35, 0.48}) best = std::max(best, 2.0 * u - u * u);
    auto spec = spec_of(AcquisitionKind::EI, 1, 1);
    spec.raw_candidates = 16;
    AcquisitionContext ctx(g, best, spec, SampleBank::generate(spec, 1, 1, 3));
    const Decision d = ctx.maximize();
    double grid_max = 0.0, grid_arg = 0.0;
    for (int i = 0; i <= 2000; ++i) {
        const double u = i / 2000.0;
        const double v = ctx.ei(vec1(u));
        if (v > grid_max) {
            grid_max = v;
            grid_arg = u;
        }
    }
    EXPECT_GE(d.acq_value, 0.999 * grid_max);
    EXPECT_GE(ctx.ei(d.x), 0.999 * grid_max);
    EXPECT_GT(grid_arg, 0.48);
    EXPECT_GT(d.x(0), 0.48);
}

TEST(Acquisition, BlackboxKgMatchesQuadratureOracle) {
    const auto g = blackbox_gp({0.05, 0.4, 0.9}, [](double u) { return 0.3 * std::cos(8.0 * u); });
    const auto spec = spec_of(AcquisitionKind::KG, 4096, 1);
    AcquisitionContext ctx(g, 1.0, spec, SampleBank::generate(spec, 1, 1, 17));
    ctx.set_discrete_domain(toy_domain());
    ctx.prepare();
    const Eigen::MatrixXd dom = toy_domain();
    auto best_mean = [&](const gp::GaussianProcess& m) {
        double b = -1e300;
        for (Eigen::Index j = 0; j < dom.rows(); ++j) b = std::max(b, m.predict(vec1(dom(j, 0))).mean);
        return b;
    };
    const double x = 0.8;
    const auto p = g.predict(vec1(x));
    const double oracle = normal_expectation([&](double z) {
                              return best_mean(g.fantasize(vec1(x), vec1(p.mean + std::sqrt(p.variance) * z)));
                          }) -
                          best_mean(g);
    KgDetail det;
    const double est = ctx.kg(vec1(x), nullptr, &det);
    EXPECT_GT(oracle, 1e-4);
    EXPECT_NEAR(est, oracle, 3.0 * det.std_error);
}

}  // namespace
}  // namespace epicalib
