#include "epicalib/acquisition.hpp"

#include "epicalib/errors.hpp"

#include <boost/math/distributions/normal.hpp>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

namespace epicalib {
namespace {

constexpr double kInvSqrt2Pi = 0.39894228040143267794;

double normal_pdf(double u) { return kInvSqrt2Pi * std::exp(-0.5 * u * u); }
double normal_cdf(double u) { return 0.5 * std::erfc(-u / std::sqrt(2.0)); }

Eigen::MatrixXd normal_qmc(int count, Eigen::Index dim, std::uint64_t seed) {
    Eigen::MatrixXd out(count, dim);
    if (count == 0 || dim == 0) return out;
    const Eigen::MatrixXd u = sobol_points(static_cast<int>(dim), count, seed);
    const boost::math::normal n01;
    for (Eigen::Index i = 0; i < u.rows(); ++i)
        for (Eigen::Index j = 0; j < u.cols(); ++j)
            out(i, j) = boost::math::quantile(n01, std::clamp(u(i, j), 1e-15, 1.0 - 1e-15));
    return out;
}

LocalOptions inner_options(const AcquisitionSpec& spec) {
    LocalOptions o;
    o.max_iter = spec.inner_max_iter;
    o.xtol = 1e-6;
    o.ftol = 1e-9;
    return o;
}

int z_count(const ZVector& z) { return static_cast<int>(std::count(z.begin(), z.end(), true)); }

}  // namespace

std::string_view to_string(AcquisitionKind kind) {
    switch (kind) {
        case AcquisitionKind::EI: return "EI";
        case AcquisitionKind::KG: return "KG";
        case AcquisitionKind::KG_CF: return "KG-CF";
        case AcquisitionKind::KG_FN: return "KG-FN";
        case AcquisitionKind::DG_CF: return "DG-CF";
    }
    return "?";
}

AcquisitionKind parse_acquisition_kind(std::string_view name) {
    std::string s(name);
    std::replace(s.begin(), s.end(), '_', '-');
    std::transform(s.begin(), s.end(), s.begin(), [](unsigned char ch) { return static_cast<char>(std::toupper(ch)); });
    for (auto k : {AcquisitionKind::EI, AcquisitionKind::KG, AcquisitionKind::KG_CF, AcquisitionKind::KG_FN,
                   AcquisitionKind::DG_CF})
        if (to_string(k) == s) return k;
    throw ConfigError(fmt::format("unknown acquisition kind '{}'", name));
}

bool is_blackbox(AcquisitionKind kind) { return kind == AcquisitionKind::EI || kind == AcquisitionKind::KG; }

std::string_view to_string(BudgetProfile profile) { return profile == BudgetProfile::Fast ? "fast" : "full"; }

BudgetProfile parse_budget_profile(std::string_view name) {
    if (name == "fast") return BudgetProfile::Fast;
    if (name == "full") return BudgetProfile::Full;
    throw ConfigError(fmt::format("unknown profile '{}', expected fast or full", name));
}

AcquisitionSpec AcquisitionSpec::preset(AcquisitionKind kind, BudgetProfile profile) {
    AcquisitionSpec s;
    s.kind = kind;
    if (profile == BudgetProfile::Full) return s;
    s.raw_candidates = 16;
    s.restarts = 2;
    s.outer_max_iter = 10;
    s.inner_restarts = 1;
    s.inner_max_iter = 20;
    if (kind == AcquisitionKind::KG_FN) {
        // Each network evaluation propagates L samples through T per-time GPs.
        s.K = 4;
        s.L = 16;
        s.raw_candidates = 8;
        s.restarts = 1;
        s.outer_pattern_evals = 4;
        s.inner_restarts = 0;
        s.inner_max_iter = 10;
    }
    return s;
}

void AcquisitionSpec::validate() const {
    if (K < 1 || L < 1) throw ConfigError("acquisition needs K >= 1 and L >= 1");
    if (restarts < 1 || raw_candidates < 1 || inner_restarts < 0 || inner_max_iter < 0 || outer_max_iter < 0)
        throw ConfigError("acquisition restart and iteration counts must be positive");
    for (const auto& z : z_subsets)
        if (z_count(z) == 0) throw ZeroZ("z subset must select at least one compartment");
}

std::vector<ZVector> AcquisitionSpec::subsets() const {
    if (!z_subsets.empty()) return z_subsets;
    std::vector<ZVector> out;
    if (full_z_enumeration) {
        for (int mask = 1; mask < 16; ++mask)
            out.push_back({(mask & 1) != 0, (mask & 2) != 0, (mask & 4) != 0, (mask & 8) != 0});
        return out;
    }
    for (int c = 0; c < kCompartmentCount; ++c) {
        ZVector z{};
        z[static_cast<std::size_t>(c)] = true;
        out.push_back(z);
    }
    out.push_back(kAllCompartments);
    return out;
}

SampleBank SampleBank::generate(const AcquisitionSpec& spec, Eigen::Index time_points, Eigen::Index dim,
                                std::uint64_t seed) {
    spec.validate();
    SampleBank bank;
    const Eigen::Index nodes = std::max<Eigen::Index>(1, time_points * 4);
    bank.outer = normal_qmc(spec.K, nodes, mix_seed(seed, 1));
    bank.inner = normal_qmc(spec.L, nodes, mix_seed(seed, 2));
    bank.inner_starts = spec.inner_restarts > 0 ? sobol_points(static_cast<int>(dim), spec.inner_restarts, mix_seed(seed, 3))
                                                : Eigen::MatrixXd(0, dim);
    bank.candidates = sobol_points(static_cast<int>(dim), spec.raw_candidates, mix_seed(seed, 4));
    return bank;
}

Eigen::MatrixXd SampleBank::outer_block(Eigen::Index k, Eigen::Index T) const {
    Eigen::MatrixXd b(T, 4);
    for (Eigen::Index t = 0; t < T; ++t)
        for (int c = 0; c < 4; ++c) b(t, c) = outer(k, t * 4 + c);
    return b;
}

Eigen::MatrixXd SampleBank::inner_block(Eigen::Index l, Eigen::Index T) const {
    Eigen::MatrixXd b(T, 4);
    for (Eigen::Index t = 0; t < T; ++t)
        for (int c = 0; c < 4; ++c) b(t, c) = inner(l, t * 4 + c);
    return b;
}

double expected_improvement(double mean, double variance, double best, double jitter) {
    const double delta = mean - best;
    if (!(variance > jitter) || variance <= 0.0) return std::max(delta, 0.0);
    const double sd = std::sqrt(variance);
    const double u = delta / sd;
    return delta * normal_cdf(u) + sd * normal_pdf(u);
}

// Conditioning of Gaussian (x-only) models on one outer fantasy at `at`.
struct AcquisitionContext::CfCondition {
    struct Model {
        bool active = false;
        gp::ConditioningPoint cp;
        Eigen::VectorXd sqrt_s;  // per output
        double h = 0.0;          // sqrt(v*) / (v* + rho)
        double dh = 0.0;         // dh / dv*
        Eigen::VectorXd dvstar;  // d v* / d at
    };
    std::vector<Model> models;
};

// Conditioning of every network node on fantasy k sampled through the network at `at`.
struct AcquisitionContext::FnCondition {
    struct Model {
        bool active = false;
        std::vector<gp::ConditioningPoint> cp;  // one for x-only models, else per time point
        Eigen::VectorXd resid;                  // fantasy minus mean at the star input, per time point
    };
    std::vector<Model> models;
};

AcquisitionContext::AcquisitionContext(const NetworkSurrogate& surrogate, MetricTarget target, AcquisitionSpec spec,
                                       SampleBank bank)
    : kind_(spec.kind), surrogate_(&surrogate), target_(std::move(target)), spec_(std::move(spec)),
      bank_(std::move(bank)), dim_(surrogate.dim()), T_(target_.size()) {
    if (is_blackbox(kind_)) throw ConfigError("blackbox acquisition needs an objective model");
    if ((kind_ == AcquisitionKind::KG_FN) != (surrogate.mode() == SurrogateMode::FullNetwork))
        throw ConfigError("KG-FN pairs with a full-network surrogate, the other graybox kinds with composite-only");
    if (surrogate.time_points() != T_) throw GridMismatch("surrogate and metric target disagree on time points");
    if (bank_.inner.cols() != T_ * 4 || bank_.outer.cols() != T_ * 4)
        throw DomainError("sample bank does not match the number of network nodes");
    const auto L = static_cast<double>(bank_.inner.rows());
    m1_.resize(T_, 4);
    m2_.resize(T_, 4);
    for (Eigen::Index t = 0; t < T_; ++t)
        for (int c = 0; c < 4; ++c) {
            m1_(t, c) = bank_.inner.col(t * 4 + c).sum() / L;
            m2_(t, c) = bank_.inner.col(t * 4 + c).squaredNorm() / L;
        }
}

AcquisitionContext::AcquisitionContext(const gp::GaussianProcess& objective_model, double best_observed,
                                       AcquisitionSpec spec, SampleBank bank)
    : kind_(spec.kind), blackbox_(&objective_model), spec_(std::move(spec)), bank_(std::move(bank)),
      dim_(objective_model.dim()), T_(1), best_observed_(best_observed) {
    if (!is_blackbox(kind_)) throw ConfigError("graybox acquisition needs a network surrogate");
    if (objective_model.outputs() != 1) throw DomainError("objective model must have one output");
}

AcquisitionContext::CfCondition AcquisitionContext::make_cf_condition(const Eigen::VectorXd& at, const ZVector& z,
                                                                      bool with_grad) const {
    CfCondition cond;
    auto add = [&](const gp::GaussianProcess& g, bool active) {
        CfCondition::Model m;
        m.active = active;
        if (active) {
            m.cp = g.condition_at(at);
            m.sqrt_s.resize(g.outputs());
            for (Eigen::Index o = 0; o < g.outputs(); ++o) m.sqrt_s(o) = std::sqrt(g.raw_variance_factor(o));
            const double v = m.cp.var_norm, D = m.cp.denom;
            m.h = std::sqrt(v) / D;
            m.dh = v > 0.0 ? 1.0 / (2.0 * std::sqrt(v) * D) - std::sqrt(v) / (D * D) : 0.0;
            if (with_grad) {
                gp::QueryTerms star;
                g.query_terms(at, true, star);
                m.dvstar = g.var_norm_grad(star);
            }
        }
        cond.models.push_back(std::move(m));
    };
    if (blackbox_) {
        add(*blackbox_, true);
    } else {
        for (const auto& model : surrogate_->models())
            add(model.gps.front(), z[static_cast<std::size_t>(model.compartment)]);
    }
    return cond;
}

double AcquisitionContext::gaussian_value(const Eigen::VectorXd& xp, const CfCondition* cond, int k,
                                          Eigen::VectorXd* grad_xp, Eigen::VectorXd* grad_at) const {
    const bool need_grad = grad_xp || grad_at;
    if (grad_xp) grad_xp->setZero(dim_);
    if (grad_at) grad_at->setZero(dim_);
    double total = 0.0;
    const std::size_t n_models = blackbox_ ? 1 : surrogate_->models().size();
    gp::QueryTerms t;
    Eigen::VectorXd dcc_xp, dcc_at, mstd, coef;
    for (std::size_t mi = 0; mi < n_models; ++mi) {
        const gp::GaussianProcess& g = blackbox_ ? *blackbox_ : surrogate_->models()[mi].gps.front();
        const int c = blackbox_ ? 0 : surrogate_->models()[mi].compartment;
        g.query_terms(xp, need_grad, t);
        const CfCondition::Model* cm = cond && cond->models[mi].active ? &cond->models[mi] : nullptr;
        double cc = 0.0, D = 1.0;
        if (cm) {
            cc = g.cross_correlation(t, cm->cp, grad_xp ? &dcc_xp : nullptr);
            if (grad_at) dcc_at = g.cross_correlation_grad_star(t, cm->cp);
            D = cm->cp.denom;
        }
        double vn = t.var_norm - (cm ? cc * cc / D : 0.0);
        const bool var_clamped = vn <= 0.0;
        vn = std::max(vn, 0.0);

        const Eigen::Index n = g.size();
        const Eigen::Index outs = g.outputs();
        mstd.setConstant(outs, g.normalized_hyper().mean);
        if (n > 0) mstd.noalias() += g.alpha().transpose() * t.r;
        if (grad_xp) coef.setZero(outs);

        // Gradients are accumulated through scalar sums over outputs:
        //   d mu_o   = scale_o dr' alpha_o + s_o dcc
        //   d var_o  = S_o (dv - 2 cc / D dcc),  dv = -2 dr' a
        double sum_mu_s = 0.0, sum_var_S = 0.0, sum_mu_ds = 0.0;
        for (Eigen::Index o = 0; o < outs; ++o) {
            double w = 1.0, d = 0.0, m1 = 0.0, m2 = 0.0;
            if (!blackbox_) {
                w = target_.weight(o, c);
                if (w == 0.0) continue;
                d = target_.data(o, c);
                m1 = m1_(o, c);
                m2 = m2_(o, c);
            }
            const double S = g.raw_variance_factor(o);
            const double mu = g.raw_mean(mstd(o), o);
            const double eps = cm ? bank_.outer(k, blackbox_ ? 0 : o * 4 + c) : 0.0;
            const double s = cm ? cm->sqrt_s(o) * eps * cm->h : 0.0;
            const double mu_c = mu + cc * s;
            const double var_c = S * vn;
            double de_dmu, de_dvar;
            if (blackbox_) {
                total += mu_c;
                de_dmu = 1.0;
                de_dvar = 0.0;
            } else {
                const double r = d - mu_c;
                const double sd = std::sqrt(var_c);
                total -= w * (r * r - 2.0 * r * sd * m1 + var_c * m2);
                de_dmu = w * (2.0 * r - 2.0 * sd * m1);
                de_dvar = sd > 0.0 ? w * (r * m1 / sd - m2) : -w * m2;
            }
            if (var_clamped) de_dvar = 0.0;
            if (!need_grad) continue;
            if (grad_xp) coef(o) = de_dmu * g.output_scaling().scale(o);
            sum_mu_s += de_dmu * s;
            sum_var_S += de_dvar * S;
            if (cm) sum_mu_ds += de_dmu * cm->sqrt_s(o) * eps * cm->dh;
        }
        if (grad_xp && n > 0) {
            Eigen::VectorXd wv = g.alpha() * coef;
            if (t.var_norm > 0.0) wv -= (2.0 * sum_var_S) * t.a;
            grad_xp->noalias() += t.dr.transpose() * wv;
            if (cm) *grad_xp += (sum_mu_s - 2.0 * cc / D * sum_var_S) * dcc_xp;
        }
        if (grad_at && cm) {
            *grad_at += (sum_mu_s - 2.0 * cc / D * sum_var_S) * dcc_at;
            *grad_at += (cc * sum_mu_ds + cc * cc / (D * D) * sum_var_S) * cm->dvstar;
        }
    }
    return total;
}

AcquisitionContext::FnCondition AcquisitionContext::make_fn_condition(const Eigen::VectorXd& at, int k,
                                                                      const ZVector& z) const {
    FnCondition cond;
    const Eigen::MatrixXd eps = bank_.outer_block(k, T_);
    const Eigen::MatrixXd y = surrogate_->sample(at, eps);
    for (const auto& model : surrogate_->models()) {
        FnCondition::Model m;
        const int c = model.compartment;
        m.active = z[static_cast<std::size_t>(c)];
        if (m.active) {
            m.resid.resize(T_);
            if (!model.has_parents()) {
                const auto& g = model.gps.front();
                m.cp.push_back(g.condition_at(at));
                for (Eigen::Index t = 0; t < T_; ++t)
                    m.resid(t) = std::sqrt(g.raw_variance_factor(t) * m.cp.front().var_norm) * eps(t, c);
            } else {
                const auto p = static_cast<Eigen::Index>(model.parents.size());
                Eigen::VectorXd q(dim_ + p);
                q.head(dim_) = at;
                for (Eigen::Index t = 0; t < T_; ++t) {
                    for (Eigen::Index j = 0; j < p; ++j) q(dim_ + j) = y(t, model.parents[static_cast<std::size_t>(j)]);
                    const auto& g = model.gps[static_cast<std::size_t>(t)];
                    m.cp.push_back(g.condition_at(q));
                    m.resid(t) = std::sqrt(g.raw_variance_factor(0) * m.cp.back().var_norm) * eps(t, c);
                }
            }
        }
        cond.models.push_back(std::move(m));
    }
    return cond;
}

double AcquisitionContext::network_value(const Eigen::VectorXd& xp, const FnCondition* cond,
                                         Eigen::VectorXd* grad_xp) const {
    const auto& models = surrogate_->models();
    const std::size_t M = models.size();
    const Eigen::Index L = bank_.inner.rows();
    const bool need_grad = grad_xp != nullptr;
    if (grad_xp) grad_xp->setZero(dim_);

    // x-only models: per time point mean, sd and their gradients do not depend on the sample.
    struct RootStats {
        Eigen::VectorXd mu, sd;
        Eigen::MatrixXd dmu, dsd;  // D x T
    };
    std::vector<RootStats> roots(M);
    gp::QueryTerms t;
    Eigen::VectorXd dcc;
    for (std::size_t mi = 0; mi < M; ++mi) {
        const auto& model = models[mi];
        if (model.has_parents()) continue;
        const auto& g = model.gps.front();
        g.query_terms(xp, need_grad, t);
        const FnCondition::Model* cm = cond && cond->models[mi].active ? &cond->models[mi] : nullptr;
        double cc = 0.0, D = 1.0;
        if (cm) {
            cc = g.cross_correlation(t, cm->cp.front(), need_grad ? &dcc : nullptr);
            D = cm->cp.front().denom;
        }
        const double vn = std::max(0.0, t.var_norm - (cm ? cc * cc / D : 0.0));
        auto& rs = roots[mi];
        rs.mu.resize(T_);
        rs.sd.resize(T_);
        if (need_grad) {
            rs.dmu.resize(dim_, T_);
            rs.dsd.resize(dim_, T_);
        }
        Eigen::VectorXd mstd = Eigen::VectorXd::Constant(T_, g.normalized_hyper().mean);
        if (g.size() > 0) mstd.noalias() += g.alpha().transpose() * t.r;
        Eigen::VectorXd dvn;
        if (need_grad) {
            dvn = (g.size() > 0 && t.var_norm > 0.0) ? Eigen::VectorXd(-2.0 * (t.dr.transpose() * t.a))
                                                     : Eigen::VectorXd::Zero(dim_);
            if (cm) dvn -= (2.0 * cc / D) * dcc;
        }
        for (Eigen::Index k = 0; k < T_; ++k) {
            const double S = g.raw_variance_factor(k);
            const double shift = cm ? cm->resid(k) / D : 0.0;
            rs.mu(k) = g.raw_mean(mstd(k), k) + cc * shift;
            rs.sd(k) = std::sqrt(S * vn);
            if (need_grad) {
                rs.dmu.col(k) = g.size() > 0 ? Eigen::VectorXd(g.output_scaling().scale(k) * (t.dr.transpose() *
                                                                                                g.alpha().col(k)))
                                             : Eigen::VectorXd::Zero(dim_);
                if (cm) rs.dmu.col(k) += shift * dcc;
                rs.dsd.col(k) = rs.sd(k) > 0.0 ? Eigen::VectorXd(S * dvn / (2.0 * rs.sd(k)))
                                               : Eigen::VectorXd::Zero(dim_);
                if (vn <= 0.0) rs.dsd.col(k).setZero();
            }
        }
    }

    std::array<double, 4> y{}, ybar{};
    // Per-model scratch: query, d y / d query, and two gradient buffers.
    std::vector<Eigen::VectorXd> q(M), dy_dq(M), dvn(M), dcq(M);
    std::vector<gp::QueryTerms> tq(M);
    for (std::size_t mi = 0; mi < M; ++mi) {
        const auto width = dim_ + static_cast<Eigen::Index>(models[mi].parents.size());
        q[mi].resize(width);
        q[mi].head(dim_) = xp;
        dy_dq[mi].resize(width);
        dvn[mi].resize(width);
        dcq[mi].resize(width);
    }
    double total = 0.0;
    for (Eigen::Index k = 0; k < T_; ++k) {
        for (Eigen::Index l = 0; l < L; ++l) {
            for (std::size_t mi = 0; mi < M; ++mi) {
                const auto& model = models[mi];
                const int c = model.compartment;
                const double e = bank_.inner(l, k * 4 + c);
                if (!model.has_parents()) {
                    const auto& rs = roots[mi];
                    y[static_cast<std::size_t>(c)] = rs.mu(k) + rs.sd(k) * e;
                    if (need_grad) dy_dq[mi] = rs.dmu.col(k) + e * rs.dsd.col(k);
                    continue;
                }
                auto& qm = q[mi];
                for (std::size_t j = 0; j < model.parents.size(); ++j)
                    qm(dim_ + static_cast<Eigen::Index>(j)) = y[static_cast<std::size_t>(model.parents[j])];
                const auto& g = model.gps[static_cast<std::size_t>(k)];
                auto& t = tq[mi];
                g.query_terms(qm, need_grad, t);
                const FnCondition::Model* cm = cond && cond->models[mi].active ? &cond->models[mi] : nullptr;
                double cc = 0.0, D = 1.0, shift = 0.0;
                if (cm) {
                    const auto& cp = cm->cp[static_cast<std::size_t>(k)];
                    cc = g.cross_correlation(t, cp, need_grad ? &dcq[mi] : nullptr);
                    D = cp.denom;
                    shift = cm->resid(k) / D;
                }
                const double S = g.raw_variance_factor(0);
                const double vn_raw = t.var_norm - (cm ? cc * cc / D : 0.0);
                const double vn = std::max(0.0, vn_raw);
                const double mu = g.raw_mean(g.standardized_mean(t, 0), 0) + cc * shift;
                const double sd = std::sqrt(S * vn);
                y[static_cast<std::size_t>(c)] = mu + sd * e;
                if (need_grad) {
                    auto& d = dy_dq[mi];
                    if (g.size() > 0)
                        d.noalias() = g.output_scaling().scale(0) * (t.dr.transpose() * g.alpha().col(0));
                    else
                        d.setZero();
                    if (cm) d += shift * dcq[mi];
                    if (sd > 0.0 && vn_raw > 0.0) {
                        auto& dv = dvn[mi];
                        if (g.size() > 0 && t.var_norm > 0.0)
                            dv.noalias() = -2.0 * (t.dr.transpose() * t.a);
                        else
                            dv.setZero();
                        if (cm) dv -= (2.0 * cc / D) * dcq[mi];
                        d += (e * S / (2.0 * sd)) * dv;
                    }
                }
            }
            double gl = 0.0;
            for (int c = 0; c < 4; ++c) {
                const double w = target_.weight(k, c);
                ybar[static_cast<std::size_t>(c)] = 0.0;
                if (w == 0.0) continue;
                const double r = target_.data(k, c) - y[static_cast<std::size_t>(c)];
                gl -= w * r * r;
                ybar[static_cast<std::size_t>(c)] = 2.0 * w * r;
            }
            total += gl;
            if (need_grad) {
                for (std::size_t mi = M; mi-- > 0;) {
                    const auto& model = models[mi];
                    const double yb = ybar[static_cast<std::size_t>(model.compartment)];
                    if (yb == 0.0) continue;
                    const auto& dq = dy_dq[mi];
                    *grad_xp += yb * dq.head(dim_);
                    for (std::size_t j = 0; j < model.parents.size(); ++j)
                        ybar[static_cast<std::size_t>(model.parents[j])] += yb * dq(dim_ + static_cast<Eigen::Index>(j));
                }
            }
        }
    }
    const double inv = 1.0 / static_cast<double>(L);
    if (grad_xp) *grad_xp *= inv;
    return total * inv;
}

double AcquisitionContext::expected(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (kind_ == AcquisitionKind::KG_FN) return network_value(x, nullptr, grad);
    return gaussian_value(x, nullptr, 0, grad, nullptr);
}

double AcquisitionContext::conditioned_expected(const Eigen::VectorXd& x_prime, const Eigen::VectorXd& at, int k,
                                                const ZVector& z, Eigen::VectorXd* grad_x_prime,
                                                Eigen::VectorXd* grad_at) const {
    if (kind_ == AcquisitionKind::KG_FN) {
        const FnCondition cond = make_fn_condition(at, k, z);
        return network_value(x_prime, &cond, grad_x_prime);
    }
    const CfCondition cond = make_cf_condition(at, z, grad_at != nullptr);
    return gaussian_value(x_prime, &cond, k, grad_x_prime, grad_at);
}

LocalResult AcquisitionContext::maximize_expected(const std::vector<Eigen::VectorXd>& starts) const {
    const SmoothObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) { return expected(x, g); };
    LocalResult best;
    best.value = -std::numeric_limits<double>::infinity();
    if (domain_) {
        for (Eigen::Index i = 0; i < domain_->rows(); ++i) {
            const Eigen::VectorXd x = domain_->row(i).transpose();
            const double v = f(x, nullptr);
            if (best.x.size() == 0 || strictly_better(v, best.value)) {
                best.x = x;
                best.value = v;
            }
        }
        return best;
    }
    const LocalOptions opts = inner_options(spec_);
    for (const auto& s : starts) {
        const LocalResult r = maximize_box(f, s, Box::unit(dim_), opts);
        if (best.x.size() == 0 || strictly_better(r.value, best.value)) best = r;
    }
    return best;
}

double AcquisitionContext::prepare(const std::vector<Eigen::VectorXd>& extra_starts) {
    std::vector<Eigen::VectorXd> starts = extra_starts;
    for (Eigen::Index i = 0; i < bank_.inner_starts.rows(); ++i) starts.push_back(bank_.inner_starts.row(i).transpose());
    if (starts.empty()) starts.push_back(Eigen::VectorXd::Constant(dim_, 0.5));
    const LocalResult r = maximize_expected(starts);
    if (!std::isfinite(r.value)) throw InnerOptFailure("current expected metric is not finite at any start");
    x_star_ = r.x;
    u_star_ = r.value;
    prepared_ = true;
    return u_star_;
}

double AcquisitionContext::inner_max(const SmoothObjective& f, const Eigen::VectorXd& at,
                                     Eigen::VectorXd* argmax) const {
    double best = -std::numeric_limits<double>::infinity();
    bool found = false;
    auto consider = [&](const Eigen::VectorXd& x, double v) {
        if (!std::isfinite(v)) return;
        if (!found || strictly_better(v, best)) {
            best = v;
            found = true;
            if (argmax) *argmax = x;
        }
    };
    if (domain_) {
        for (Eigen::Index i = 0; i < domain_->rows(); ++i) {
            const Eigen::VectorXd x = domain_->row(i).transpose();
            consider(x, f(x, nullptr));
        }
    } else {
        const LocalOptions opts = inner_options(spec_);
        std::vector<Eigen::VectorXd> starts;
        if (prepared_) starts.push_back(x_star_);
        starts.push_back(at);
        for (Eigen::Index i = 0; i < bank_.inner_starts.rows(); ++i)
            starts.push_back(bank_.inner_starts.row(i).transpose());
        for (const auto& s : starts) {
            const LocalResult r = maximize_box(f, s, Box::unit(dim_), opts);
            consider(r.x, r.value);
        }
    }
    if (!found) throw InnerOptFailure("no inner restart produced a finite value");
    return best;
}

double AcquisitionContext::fantasy_value(const Eigen::VectorXd& x, const ZVector& z, Eigen::VectorXd* grad,
                                         KgDetail* detail) const {
    if (z_count(z) == 0) throw ZeroZ("z must select at least one compartment");
    if (!prepared_) throw DomainError("acquisition context used before prepare()");
    const auto K = static_cast<int>(bank_.outer.rows());
    std::vector<double> u(static_cast<std::size_t>(K));
    if (grad) grad->setZero(dim_);
    // Conditioning only on unmodeled compartments leaves the posterior unchanged.
    bool informative = blackbox_ != nullptr;
    for (int c = 0; c < kCompartmentCount && !informative; ++c)
        informative = z[static_cast<std::size_t>(c)] && surrogate_->model_of(c) != nullptr;
    if (!informative) {
        if (detail) {
            detail->value = 0.0;
            detail->std_error = 0.0;
            detail->fantasy_optima.assign(static_cast<std::size_t>(K), u_star_);
        }
        return 0.0;
    }
    const bool gaussian = kind_ != AcquisitionKind::KG_FN;
    CfCondition cf;
    if (gaussian) cf = make_cf_condition(x, z, grad != nullptr);
    for (int k = 0; k < K; ++k) {
        Eigen::VectorXd xk;
        if (gaussian) {
            const SmoothObjective f = [&](const Eigen::VectorXd& xp, Eigen::VectorXd* g) {
                return gaussian_value(xp, &cf, k, g, nullptr);
            };
            u[static_cast<std::size_t>(k)] = inner_max(f, x, &xk);
            if (grad) {
                Eigen::VectorXd ga;
                gaussian_value(xk, &cf, k, nullptr, &ga);
                *grad += ga;
            }
        } else {
            const FnCondition fn = make_fn_condition(x, k, z);
            const SmoothObjective f = [&](const Eigen::VectorXd& xp, Eigen::VectorXd* g) {
                return network_value(xp, &fn, g);
            };
            u[static_cast<std::size_t>(k)] = inner_max(f, x, &xk);
        }
    }
    const double mean = std::accumulate(u.begin(), u.end(), 0.0) / K;
    const double scale = blackbox_ ? 1.0 : static_cast<double>(kCompartmentCount) / z_count(z);
    const double value = scale * (mean - u_star_);
    if (grad) *grad *= scale / K;
    if (detail) {
        double ss = 0.0;
        for (double v : u) ss += (v - mean) * (v - mean);
        detail->value = value;
        detail->fantasy_optima = u;
        detail->std_error = K > 1 ? scale * std::sqrt(ss / (K - 1) / K) : 0.0;
    }
    return value;
}

double AcquisitionContext::ei(const Eigen::VectorXd& x, Eigen::VectorXd* grad) const {
    if (!blackbox_) throw ConfigError("EI needs an objective model");
    const double jitter = blackbox_->hyperparams().noise_jitter;
    if (!grad) {
        const gp::Prediction p = blackbox_->predict(x);
        return expected_improvement(p.mean, p.variance, best_observed_, jitter);
    }
    const gp::PredictionGrad p = blackbox_->predict_with_grad(x);
    const double delta = p.mean - best_observed_;
    if (!(p.variance > jitter) || p.variance <= 0.0) {
        *grad = delta > 0.0 ? p.mean_grad : Eigen::VectorXd::Zero(dim_);
        return std::max(delta, 0.0);
    }
    const double sd = std::sqrt(p.variance);
    const double u = delta / sd;
    *grad = normal_cdf(u) * p.mean_grad + normal_pdf(u) * p.variance_grad / (2.0 * sd);
    return delta * normal_cdf(u) + sd * normal_pdf(u);
}

double AcquisitionContext::kg(const Eigen::VectorXd& x, Eigen::VectorXd* grad, KgDetail* detail) const {
    return fantasy_value(x, kAllCompartments, grad, detail);
}

double AcquisitionContext::dg(const Eigen::VectorXd& x, const ZVector& z, Eigen::VectorXd* grad,
                              KgDetail* detail) const {
    return fantasy_value(x, z, grad, detail);
}

double AcquisitionContext::value(const Eigen::VectorXd& x, const ZVector& z, Eigen::VectorXd* grad) const {
    switch (kind_) {
        case AcquisitionKind::EI: return ei(x, grad);
        case AcquisitionKind::DG_CF: return dg(x, z, grad);
        default: return kg(x, grad);
    }
}

Decision AcquisitionContext::maximize(const std::vector<Eigen::VectorXd>& extra_starts) const {
    std::vector<Eigen::VectorXd> cands;
    if (domain_) {
        for (Eigen::Index i = 0; i < domain_->rows(); ++i) cands.push_back(domain_->row(i).transpose());
    } else {
        for (Eigen::Index i = 0; i < bank_.candidates.rows(); ++i) cands.push_back(bank_.candidates.row(i).transpose());
        for (const auto& e : extra_starts) cands.push_back(Box::unit(dim_).clamp(e));
    }
    const std::vector<ZVector> zs =
        kind_ == AcquisitionKind::DG_CF ? spec_.subsets() : std::vector<ZVector>{kAllCompartments};

    struct Entry {
        Eigen::VectorXd x;
        ZVector z;
        double value;
    };
    std::vector<Entry> entries;
    for (const auto& x : cands)
        for (const auto& z : zs) {
            double v;
            try {
                v = value(x, z, nullptr);
            } catch (const NumericalFailure&) {
                v = std::numeric_limits<double>::quiet_NaN();
            } catch (const InnerOptFailure&) {
                v = std::numeric_limits<double>::quiet_NaN();
            } catch (const FactorizationFailure&) {
                v = std::numeric_limits<double>::quiet_NaN();
            }
            entries.push_back({x, z, v});
        }

    if (!domain_) {
        std::vector<std::size_t> order(entries.size());
        std::iota(order.begin(), order.end(), 0);
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
            const double va = std::isfinite(entries[a].value) ? entries[a].value : -std::numeric_limits<double>::infinity();
            const double vb = std::isfinite(entries[b].value) ? entries[b].value : -std::numeric_limits<double>::infinity();
            return va > vb;
        });
        const std::size_t refine = std::min<std::size_t>(order.size(), static_cast<std::size_t>(spec_.restarts));
        for (std::size_t r = 0; r < refine; ++r) {
            Entry& e = entries[order[r]];
            if (!std::isfinite(e.value)) continue;
            const ZVector z = e.z;
            LocalResult res;
            if (kind_ == AcquisitionKind::KG_FN) {
                PatternOptions po;
                po.max_evaluations = spec_.outer_pattern_evals;
                po.initial_step = 0.05;
                res = maximize_pattern([&](const Eigen::VectorXd& x) { return value(x, z, nullptr); }, e.x,
                                       Box::unit(dim_), po);
            } else {
                LocalOptions lo;
                lo.max_iter = spec_.outer_max_iter;
                lo.initial_step = 0.05;
                res = maximize_box([&](const Eigen::VectorXd& x, Eigen::VectorXd* g) { return value(x, z, g); }, e.x,
                                   Box::unit(dim_), lo);
            }
            if (strictly_better(res.value, e.value)) {
                e.x = res.x;
                e.value = res.value;
            }
        }
    }

    std::vector<double> values;
    values.reserve(entries.size());
    for (const auto& e : entries) values.push_back(e.value);
    const int best = argmax_first(values);
    if (best < 0) throw OptFailure("every acquisition start returned a non-finite value");
    const Entry& e = entries[static_cast<std::size_t>(best)];
    return {e.x, e.z, e.value, false};
}

}  // namespace epicalib
