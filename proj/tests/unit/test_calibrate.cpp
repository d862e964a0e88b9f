#include "epicalib/calibrate.hpp"
#include "epicalib/errors.hpp"

#include <gtest/gtest.h>

#include <cmath>
#include <limits>
#include <sstream>

namespace epicalib {
namespace {

const CompartmentState kInit{0.99, 0.01, 0.0, 0.0};
const CompartmentMask kOnlyS{true, false, false, false};

Trajectory one_step(double s) {
    Trajectory t;
    t.grid = TimeGrid::daily(1.0);
    t.states = {kInit, {s, 0.01, 0.0, 0.0}};
    return t;
}

// Scalar toys: the simulator reports y(x) as S at day 1, so g = -(y - d)^2.
double quad_1d(double u) { return 0.2 + 0.6 * u + 0.2 * u * u; }
double quad_2d(const Eigen::VectorXd& x) { return 0.2 + 0.5 * x(0) + 0.3 * x(1) * x(1); }

constexpr double kOptimum1d = 0.37;

ObservationSet toy_obs(double d) { return ObservationSet::from_trajectory(one_step(d), kOnlyS); }

AcquisitionSpec light_spec(AcquisitionKind kind) {
    AcquisitionSpec s;
    s.kind = kind;
    s.K = 4;
    s.L = 32;
    s.raw_candidates = 8;
    s.restarts = 1;
    s.inner_restarts = 1;
    s.inner_max_iter = 15;
    s.outer_max_iter = 8;
    s.outer_pattern_evals = 8;
    return s;
}

BOConfig light_config(AcquisitionKind kind, int iterations, std::uint64_t seed) {
    BOConfig c;
    c.acquisition = light_spec(kind);
    c.iterations = iterations;
    c.seed = seed;
    c.gp_restarts = 2;
    c.gp_max_iter = 40;
    return c;
}

struct CountingSim {
    long calls = 0;
    Simulator sim() {
        return [this](const Eigen::VectorXd& x) {
            ++calls;
            return one_step(quad_2d(x));
        };
    }
};

const ObservationSet& obs_2d() {
    static const ObservationSet obs = [] {
        Eigen::VectorXd x(2);
        x << 0.4, 0.5;
        return toy_obs(quad_2d(x));
    }();
    return obs;
}

std::string csv_of(const BORunState& s) {
    std::ostringstream os;
    write_run_csv(os, s);
    return os.str();
}

TEST(InitDesign, TwoDPlusOneUniformPoints) {
    const auto pts = init_design(4, 11);
    ASSERT_EQ(pts.size(), 9u);
    for (const auto& p : pts) {
        ASSERT_EQ(p.size(), 4);
        EXPECT_TRUE((p.array() >= 0.0).all() && (p.array() <= 1.0).all());
    }
    EXPECT_EQ(init_design(1, 3).size(), 3u);
}

TEST(InitDesign, DeterministicPerSeed) {
    const auto a = init_design(3, 5);
    const auto b = init_design(3, 5);
    const auto c = init_design(3, 6);
    for (std::size_t i = 0; i < a.size(); ++i) EXPECT_EQ(a[i], b[i]);
    EXPECT_NE(a[0], c[0]);
    EXPECT_THROW(init_design(0, 1), DomainError);
}

TEST(ParameterSpace, LinearAndLogRoundTrip) {
    const ParameterSpace space({{"a", -1.0, 3.0, false}, {"b", 0.1, 1000.0, true}});
    Eigen::VectorXd u(2);
    u << 0.25, 0.5;
    const Eigen::VectorXd x = space.to_model(u);
    EXPECT_DOUBLE_EQ(x(0), 0.0);
    EXPECT_NEAR(x(1), 10.0, 1e-12);
    EXPECT_TRUE(space.to_unit(x).isApprox(u, 1e-14));

    Eigen::VectorXd out(2);
    out << -0.5, 1.5;
    const Eigen::VectorXd clamped = space.to_model(out);
    EXPECT_DOUBLE_EQ(clamped(0), -1.0);
    EXPECT_NEAR(clamped(1), 1000.0, 1e-9);
}

TEST(ParameterSpace, RejectsBadRanges) {
    EXPECT_THROW(ParameterSpace({{"a", 1.0, 1.0, false}}), ConfigError);
    EXPECT_THROW(ParameterSpace({{"a", 0.0, 1.0, true}}), ConfigError);
    EXPECT_THROW(ParameterSpace::unit(2).to_model(Eigen::VectorXd::Zero(3)), DomainError);
}

class BudgetAccounting : public ::testing::TestWithParam<AcquisitionKind> {};

TEST_P(BudgetAccounting, ExactlyDesignPlusIterations) {
    CountingSim cs;
    const int N = 3;
    const auto state = run_bo(cs.sim(), obs_2d(), ParameterSpace::unit(2), light_config(GetParam(), N, 4));
    EXPECT_EQ(cs.calls, 2 * 2 + 1 + N);
    EXPECT_EQ(state.simulator_calls, cs.calls);
    EXPECT_EQ(state.history.size(), static_cast<std::size_t>(cs.calls));
    ASSERT_EQ(state.log.size(), static_cast<std::size_t>(cs.calls));
    for (std::size_t i = 0; i < state.log.size(); ++i) {
        EXPECT_EQ(state.log[i].iter, i < 5 ? 0 : static_cast<int>(i) - 4);
        EXPECT_TRUE((state.history[i].x.array() >= 0.0).all() && (state.history[i].x.array() <= 1.0).all());
    }
    EXPECT_EQ(state.iteration, N);
}

INSTANTIATE_TEST_SUITE_P(AllKinds, BudgetAccounting,
                         ::testing::Values(AcquisitionKind::EI, AcquisitionKind::KG, AcquisitionKind::KG_CF,
                                           AcquisitionKind::KG_FN, AcquisitionKind::DG_CF),
                         [](const auto& info) {
                             std::string s(to_string(info.param));
                             for (auto& c : s)
                                 if (c == '-') c = '_';
                             return s;
                         });

TEST(RunBo, ZeroIterationsRecommendsFromDesign) {
    CountingSim cs;
    const auto state = run_bo(cs.sim(), obs_2d(), ParameterSpace::unit(2), light_config(AcquisitionKind::KG_CF, 0, 2));
    EXPECT_EQ(cs.calls, 5);
    EXPECT_EQ(state.log.size(), 5u);
    const auto& rec = state.recommendation;
    ASSERT_EQ(rec.history_values.size(), 5u);
    EXPECT_FALSE(rec.surrogate_failed);
    for (double v : rec.history_values) EXPECT_GE(rec.value, v);
}

TEST(RunBo, IncumbentIsMonotone) {
    CountingSim cs;
    const auto state = run_bo(cs.sim(), obs_2d(), ParameterSpace::unit(2), light_config(AcquisitionKind::EI, 8, 9));
    double best = -std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i < state.log.size(); ++i) {
        best = std::max(best, state.objectives[i]);
        EXPECT_DOUBLE_EQ(state.log[i].best_logmse, log_mse(best));
        if (i > 0) EXPECT_LE(state.log[i].best_logmse, state.log[i - 1].best_logmse);
    }
}

TEST(RunBo, SeedReproducibility) {
    CountingSim a, b, c;
    const auto cfg = light_config(AcquisitionKind::KG_CF, 3, 21);
    const auto s1 = run_bo(a.sim(), obs_2d(), ParameterSpace::unit(2), cfg);
    const auto s2 = run_bo(b.sim(), obs_2d(), ParameterSpace::unit(2), cfg);
    EXPECT_EQ(csv_of(s1), csv_of(s2));
    EXPECT_EQ(s1.recommendation.x, s2.recommendation.x);
    EXPECT_EQ(s1.recommendation.value, s2.recommendation.value);
    const auto s3 = run_bo(c.sim(), obs_2d(), ParameterSpace::unit(2), light_config(AcquisitionKind::KG_CF, 3, 22));
    EXPECT_NE(csv_of(s1), csv_of(s3));
}

TEST(RunBo, FallbackStillQueriesOnce) {
    long calls = 0;
    const Simulator broken = [&](const Eigen::VectorXd&) {
        ++calls;
        return one_step(std::numeric_limits<double>::quiet_NaN());
    };
    const auto state = run_bo(broken, obs_2d(), ParameterSpace::unit(2), light_config(AcquisitionKind::KG_CF, 4, 1));
    EXPECT_EQ(calls, 9);
    for (const auto& r : state.log) {
        if (r.iter == 0) continue;
        EXPECT_TRUE(r.fallback);
        EXPECT_TRUE(std::isnan(r.acq));
        EXPECT_TRUE((r.x.array() >= 0.0).all() && (r.x.array() <= 1.0).all());
    }
    EXPECT_TRUE(state.recommendation.surrogate_failed);
    EXPECT_EQ(state.recommendation.x_unit, state.history.front().x);
}

class QuadraticToy : public ::testing::TestWithParam<AcquisitionKind> {};

TEST_P(QuadraticToy, RecommendationNearAnalyticOptimum) {
    const Simulator sim = [](const Eigen::VectorXd& x) { return one_step(quad_1d(x(0))); };
    const auto obs = toy_obs(quad_1d(kOptimum1d));
    const auto state = run_bo(sim, obs, ParameterSpace::unit(1), light_config(GetParam(), 20, 3));
    EXPECT_NEAR(state.recommendation.x(0), kOptimum1d, 0.02);
}

INSTANTIATE_TEST_SUITE_P(KgFamily, QuadraticToy,
                         ::testing::Values(AcquisitionKind::KG, AcquisitionKind::KG_CF, AcquisitionKind::KG_FN,
                                           AcquisitionKind::DG_CF),
                         [](const auto& info) {
                             std::string s(to_string(info.param));
                             for (auto& c : s)
                                 if (c == '-') c = '_';
                             return s;
                         });

TEST(Recommend, DominatesHistoryAndDenseGrid) {
    const Simulator sim = [](const Eigen::VectorXd& x) { return one_step(quad_1d(x(0))); };
    const auto obs = toy_obs(quad_1d(kOptimum1d));
    const auto state = run_bo(sim, obs, ParameterSpace::unit(1), light_config(AcquisitionKind::KG_CF, 4, 8));
    const auto& rec = state.recommendation;
    for (double v : rec.history_values) EXPECT_GE(rec.value, v);

    const auto u = final_expected_metric(state, obs);
    EXPECT_DOUBLE_EQ(u(rec.x_unit), rec.value);
    double grid_max = -std::numeric_limits<double>::infinity();
    for (int i = 0; i <= 2000; ++i) {
        Eigen::VectorXd x(1);
        x << i / 2000.0;
        grid_max = std::max(grid_max, u(x));
    }
    EXPECT_GE(rec.value, grid_max - 1e-3 * std::abs(grid_max));
}

TEST(Recommend, DeterministicSurrogateReturnsBestObserved) {
    const Simulator flat = [](const Eigen::VectorXd&) { return one_step(0.5); };
    const auto state =
        run_bo(flat, toy_obs(0.6), ParameterSpace::unit(2), light_config(AcquisitionKind::KG_CF, 2, 5));
    EXPECT_EQ(state.recommendation.x_unit, state.history.front().x);
    EXPECT_NEAR(state.recommendation.value, -0.01, 1e-12);
}

TEST(RunCsv, HeaderAndRowFormat) {
    CountingSim cs;
    const ParameterSpace space({{"beta", 0.0, 2.0, false}, {"gamma", 0.0, 1.0, false}});
    const auto state = run_bo(cs.sim(), obs_2d(), space, light_config(AcquisitionKind::EI, 1, 1));
    std::istringstream in(csv_of(state));
    std::string line;
    std::getline(in, line);
    EXPECT_EQ(line, "iter,beta,gamma,z,acq,objective,best_logmse,wall_ms");
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        if (rows <= 5) {
            EXPECT_EQ(line.rfind("0,", 0), 0u);
            EXPECT_NE(line.find(",1111,,"), std::string::npos);
        } else {
            EXPECT_EQ(line.rfind("1,", 0), 0u);
        }
        EXPECT_EQ(line.substr(line.size() - 2), ",0");
    }
    EXPECT_EQ(rows, 6);
}

TEST(LogMse, MatchesObjective) {
    EXPECT_DOUBLE_EQ(log_mse(-1e-3), -3.0);
    EXPECT_TRUE(std::isfinite(log_mse(0.0)));
}

}  // namespace
}  // namespace epicalib
