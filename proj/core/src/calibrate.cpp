#include "epicalib/calibrate.hpp"

#include "epicalib/errors.hpp"
#include "epicalib/optim.hpp"

#include <fmt/format.h>

#include <chrono>
#include <cmath>
#include <algorithm>
#include <limits>
#include <memory>
#include <numeric>
#include <optional>
#include <ostream>
#include <random>

namespace epicalib {
namespace {

constexpr std::uint64_t kDesignStream = 0xD0;
constexpr std::uint64_t kBankStream = 0xBA;
constexpr std::uint64_t kFitStream = 0xF1;
constexpr std::uint64_t kFallbackStream = 0xFA;
constexpr std::uint64_t kRecommendStream = 0x5EC;

// Surrogate fitted for one iteration: a network for graybox kinds, one GP on
// objective values for blackbox kinds.
struct FittedModel {
    std::optional<NetworkSurrogate> network;
    std::optional<gp::GaussianProcess> blackbox;
};

struct WarmStarts {
    std::array<std::optional<Eigen::VectorXd>, 4> network;
    std::optional<Eigen::VectorXd> blackbox;
};

FittedModel fit_model(AcquisitionKind kind, const BORunState& state, const MetricTarget& target, std::uint64_t seed,
                      WarmStarts& warm) {
    gp::FitOptions fo;
    fo.restarts = state.config.gp_restarts;
    fo.max_iter = state.config.gp_max_iter;
    fo.seed = seed;
    FittedModel m;
    if (is_blackbox(kind)) {
        const auto n = static_cast<Eigen::Index>(state.history.size());
        Eigen::MatrixXd X(n, state.space.dim());
        Eigen::MatrixXd Y(n, 1);
        for (Eigen::Index i = 0; i < n; ++i) {
            X.row(i) = state.history[static_cast<std::size_t>(i)].x.transpose();
            Y(i, 0) = state.objectives[static_cast<std::size_t>(i)];
        }
        fo.warm_start = warm.blackbox;
        m.blackbox = gp::GaussianProcess::fit(X, Y, fo, gp::InputScaling::identity(state.space.dim()));
        warm.blackbox = m.blackbox->normalized_hyper().lengthscales.array().log().matrix();
        return m;
    }
    NetworkFitOptions no;
    no.gp = fo;
    no.warm_start = warm.network;
    const auto mode = kind == AcquisitionKind::KG_FN ? SurrogateMode::FullNetwork : SurrogateMode::CompositeOnly;
    m.network = NetworkSurrogate::fit(state.history, state.config.network, mode, target, no);
    warm.network = m.network->warm_starts();
    return m;
}

AcquisitionContext make_context(const FittedModel& m, const MetricTarget& target, const AcquisitionSpec& spec,
                                double best_observed, std::uint64_t bank_seed, Eigen::Index dim) {
    if (m.blackbox) return {*m.blackbox, best_observed, spec, SampleBank::generate(spec, 1, dim, bank_seed)};
    return {*m.network, target, spec, SampleBank::generate(spec, target.size(), dim, bank_seed)};
}

std::size_t best_index(const std::vector<double>& objectives) {
    const int i = argmax_first(objectives);
    return i < 0 ? 0 : static_cast<std::size_t>(i);
}

std::string z_string(const ZVector& z) {
    std::string s;
    for (bool b : z) s.push_back(b ? '1' : '0');
    return s;
}

std::string number(double v) {
    if (std::isnan(v)) return "";
    return fmt::format("{:.17g}", v);
}

}  // namespace

ParameterSpace::ParameterSpace(std::vector<Dimension> dims) : dims_(std::move(dims)) {
    for (const auto& d : dims_) {
        if (!(d.upper > d.lower)) throw ConfigError(fmt::format("empty range for parameter '{}'", d.name));
        if (d.log_scale && d.lower <= 0.0)
            throw ConfigError(fmt::format("log-scaled parameter '{}' needs a positive lower bound", d.name));
    }
}

ParameterSpace ParameterSpace::unit(int dim) {
    std::vector<Dimension> dims;
    for (int i = 0; i < dim; ++i) dims.push_back({fmt::format("x{}", i + 1), 0.0, 1.0, false});
    return ParameterSpace(std::move(dims));
}

Eigen::VectorXd ParameterSpace::to_model(const Eigen::VectorXd& unit) const {
    if (unit.size() != dim()) throw DomainError("point dimension does not match the parameter space");
    Eigen::VectorXd x(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) {
        const auto& d = dims_[static_cast<std::size_t>(i)];
        const double u = std::clamp(unit(i), 0.0, 1.0);
        x(i) = d.log_scale ? d.lower * std::exp(u * std::log(d.upper / d.lower)) : d.lower + u * (d.upper - d.lower);
    }
    return x;
}

Eigen::VectorXd ParameterSpace::to_unit(const Eigen::VectorXd& model) const {
    if (model.size() != dim()) throw DomainError("point dimension does not match the parameter space");
    Eigen::VectorXd u(dim());
    for (Eigen::Index i = 0; i < dim(); ++i) {
        const auto& d = dims_[static_cast<std::size_t>(i)];
        u(i) = d.log_scale ? std::log(model(i) / d.lower) / std::log(d.upper / d.lower)
                           : (model(i) - d.lower) / (d.upper - d.lower);
    }
    return u;
}

std::vector<Eigen::VectorXd> init_design(Eigen::Index dim, std::uint64_t seed) {
    if (dim < 1) throw DomainError("design dimension must be at least 1");
    std::mt19937_64 rng(mix_seed(seed, kDesignStream));
    std::uniform_real_distribution<double> unif(0.0, 1.0);
    std::vector<Eigen::VectorXd> pts;
    for (Eigen::Index i = 0; i < 2 * dim + 1; ++i) {
        Eigen::VectorXd x(dim);
        for (Eigen::Index j = 0; j < dim; ++j) x(j) = unif(rng);
        pts.push_back(std::move(x));
    }
    return pts;
}

double log_mse(double objective) { return std::log10(std::max(-objective, std::numeric_limits<double>::min())); }

BORunState run_bo(const Simulator& simulator, const ObservationSet& obs, const ParameterSpace& space,
                  const BOConfig& config) {
    if (config.iterations < 0) throw ConfigError("iteration budget must be nonnegative");
    config.acquisition.validate();
    const MetricTarget target = MetricTarget::from(obs);
    const AcquisitionKind kind = config.acquisition.kind;

    BORunState state;
    state.space = space;
    state.config = config;
    const Eigen::Index D = space.dim();
    using Clock = std::chrono::steady_clock;

    auto query = [&](const Eigen::VectorXd& u) {
        const Eigen::VectorXd xm = space.to_model(u);
        Trajectory traj = simulator(xm);
        ++state.simulator_calls;
        const double g = objective(traj, obs).value;
        state.history.push_back({u, std::move(traj)});
        state.objectives.push_back(g);
        return g;
    };
    auto record = [&](int iter, const Eigen::VectorXd& u, const ZVector& z, double acq, double g, bool fallback,
                      Clock::time_point started) {
        IterationRecord r;
        r.iter = iter;
        r.x = space.to_model(u);
        r.z = z;
        r.acq = acq;
        r.objective = g;
        r.best_logmse = log_mse(state.objectives[best_index(state.objectives)]);
        r.fallback = fallback;
        if (config.record_wall_time)
            r.wall_ms = std::chrono::duration<double, std::milli>(Clock::now() - started).count();
        state.log.push_back(std::move(r));
    };

    for (const auto& u : init_design(D, config.seed)) {
        const auto started = Clock::now();
        const double g = query(u);
        record(0, u, kAllCompartments, std::numeric_limits<double>::quiet_NaN(), g, false, started);
    }

    WarmStarts warm;
    std::mt19937_64 fallback_rng(mix_seed(config.seed, kFallbackStream));
    for (int n = 1; n <= config.iterations; ++n) {
        const auto started = Clock::now();
        AcquisitionSpec spec = config.acquisition;
        spec.seed = mix_seed(config.seed, kBankStream + static_cast<std::uint64_t>(n));
        Decision dec;
        try {
            const FittedModel model =
                fit_model(kind, state, target, mix_seed(config.seed, kFitStream + static_cast<std::uint64_t>(n)), warm);
            const Eigen::VectorXd incumbent = state.history[best_index(state.objectives)].x;
            AcquisitionContext ctx = make_context(model, target, spec, state.objectives[best_index(state.objectives)],
                                                  spec.seed, D);
            ctx.prepare({incumbent});
            dec = ctx.maximize({incumbent});
        } catch (const NumericalFailure&) {
            dec.fallback = true;
        } catch (const FactorizationFailure&) {
            dec.fallback = true;
        } catch (const InnerOptFailure&) {
            dec.fallback = true;
        } catch (const OptFailure&) {
            dec.fallback = true;
        }
        if (dec.fallback) {
            std::uniform_real_distribution<double> unif(0.0, 1.0);
            dec.x.resize(D);
            for (Eigen::Index j = 0; j < D; ++j) dec.x(j) = unif(fallback_rng);
            dec.z = kAllCompartments;
            dec.acq_value = std::numeric_limits<double>::quiet_NaN();
        }
        const double g = query(dec.x);
        state.iteration = n;
        record(n, dec.x, dec.z, dec.acq_value, g, dec.fallback, started);
    }

    state.recommendation = recommend(state, obs);
    return state;
}

namespace {

// Context and the models it points into, kept alive together.
struct FinalModel {
    MetricTarget target;
    FittedModel model;
    std::optional<AcquisitionContext> ctx;
};

std::shared_ptr<const FinalModel> fit_final(const BORunState& state, const ObservationSet& obs) {
    if (state.history.empty()) throw DomainError("recommendation needs a nonempty history");
    auto fm = std::make_shared<FinalModel>();
    fm->target = MetricTarget::from(obs);
    WarmStarts warm;
    const std::uint64_t seed = mix_seed(state.config.seed, kRecommendStream);
    fm->model = fit_model(state.config.acquisition.kind, state, fm->target, seed, warm);
    AcquisitionSpec spec = state.config.acquisition;
    if (spec.kind == AcquisitionKind::DG_CF) spec.kind = AcquisitionKind::KG_CF;
    fm->ctx.emplace(make_context(fm->model, fm->target, spec, state.objectives[best_index(state.objectives)], seed,
                                 state.space.dim()));
    return fm;
}

}  // namespace

std::function<double(const Eigen::VectorXd&)> final_expected_metric(const BORunState& state,
                                                                    const ObservationSet& obs) {
    auto fm = fit_final(state, obs);
    return [fm](const Eigen::VectorXd& u) { return fm->ctx->expected(u); };
}

Recommendation recommend(const BORunState& state, const ObservationSet& obs) {
    if (state.history.empty()) throw DomainError("recommendation needs a nonempty history");
    Recommendation rec;
    auto observed_best = [&] {
        const std::size_t i = best_index(state.objectives);
        rec.x_unit = state.history[i].x;
        rec.value = state.objectives[i];
        rec.surrogate_failed = true;
    };
    try {
        const auto fm = fit_final(state, obs);
        const AcquisitionContext& ctx = *fm->ctx;
        std::vector<Eigen::VectorXd> points;
        for (const auto& h : state.history) {
            points.push_back(h.x);
            rec.history_values.push_back(ctx.expected(h.x));
        }
        std::vector<double> values = rec.history_values;
        // Refine the best history points; refined values only count when strictly better.
        std::vector<std::size_t> order(values.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(),
                         [&](std::size_t a, std::size_t b) { return values[a] > values[b]; });
        LocalOptions lo;
        lo.max_iter = ctx.spec().inner_max_iter;
        const SmoothObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) { return ctx.expected(x, g); };
        const std::size_t refine = std::min<std::size_t>(order.size(), static_cast<std::size_t>(ctx.spec().restarts));
        for (std::size_t r = 0; r < refine; ++r) {
            const std::size_t i = order[r];
            if (!std::isfinite(values[i])) continue;
            const LocalResult res = maximize_box(f, points[i], Box::unit(state.space.dim()), lo);
            if (strictly_better(res.value, values[i])) {
                points.push_back(res.x);
                values.push_back(res.value);
            }
        }
        const int best = argmax_first(values);
        if (best < 0) {
            observed_best();
        } else {
            rec.x_unit = points[static_cast<std::size_t>(best)];
            rec.value = values[static_cast<std::size_t>(best)];
        }
    } catch (const NumericalFailure&) {
        observed_best();
    } catch (const FactorizationFailure&) {
        observed_best();
    }
    rec.x = state.space.to_model(rec.x_unit);
    return rec;
}

nlohmann::json to_json(const AcquisitionSpec& spec) {
    nlohmann::json z = nlohmann::json::array();
    for (const auto& zs : spec.subsets()) z.push_back(z_string(zs));
    return {{"kind", to_string(spec.kind)},
            {"K", spec.K},
            {"L", spec.L},
            {"restarts", spec.restarts},
            {"raw_candidates", spec.raw_candidates},
            {"inner_restarts", spec.inner_restarts},
            {"inner_max_iter", spec.inner_max_iter},
            {"outer_max_iter", spec.outer_max_iter},
            {"outer_pattern_evals", spec.outer_pattern_evals},
            {"z_subsets", std::move(z)}};
}

nlohmann::json run_summary(const BORunState& state) {
    auto vec = [](const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); };
    nlohmann::json dims = nlohmann::json::array();
    for (const auto& d : state.space.dimensions())
        dims.push_back({{"name", d.name}, {"lower", d.lower}, {"upper", d.upper}, {"log_scale", d.log_scale}});
    const std::size_t best = best_index(state.objectives);
    const auto& rec = state.recommendation;
    int fallbacks = 0;
    for (const auto& r : state.log) fallbacks += r.fallback ? 1 : 0;
    return {{"config",
             {{"acquisition", to_json(state.config.acquisition)},
              {"iterations", state.config.iterations},
              {"seed", state.config.seed},
              {"gp_restarts", state.config.gp_restarts},
              {"gp_max_iter", state.config.gp_max_iter},
              {"network", state.config.network.to_json()},
              {"space", std::move(dims)}}},
            {"simulator_calls", state.simulator_calls},
            {"fallbacks", fallbacks},
            {"x_best", vec(rec.x)},
            {"x_best_unit", vec(rec.x_unit)},
            {"expected_metric", rec.value},
            {"surrogate_failed", rec.surrogate_failed},
            {"best_observed_x", vec(state.space.to_model(state.history[best].x))},
            {"best_observed_objective", state.objectives[best]},
            {"best_observed_logmse", log_mse(state.objectives[best])}};
}

void write_run_csv(std::ostream& out, const BORunState& state) {
    out << "iter";
    for (const auto& d : state.space.dimensions()) out << ',' << d.name;
    out << ",z,acq,objective,best_logmse,wall_ms\n";
    for (const auto& r : state.log) {
        out << r.iter;
        for (Eigen::Index i = 0; i < r.x.size(); ++i) out << ',' << number(r.x(i));
        out << ',' << z_string(r.z) << ',' << number(r.acq) << ',' << number(r.objective) << ','
            << number(r.best_logmse) << ',' << number(r.wall_ms) << '\n';
    }
}

}  // namespace epicalib
