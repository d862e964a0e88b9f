#include "epicalib/gp.hpp"

#include "epicalib/errors.hpp"
#include "epicalib/optim.hpp"

#include <Eigen/Dense>
#include <fmt/format.h>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <random>

namespace epicalib::gp {
namespace {

const double kSqrt5 = std::sqrt(5.0);
const double kLog2Pi = std::log(2.0 * std::numbers::pi);

// d r / d z_k divided by (z_k - z_jk).
double matern52_radial(double s) { return -(5.0 / 3.0) * (1.0 + kSqrt5 * s) * std::exp(-kSqrt5 * s); }

Eigen::MatrixXd correlation_matrix(const Eigen::MatrixXd& z) {
    const Eigen::Index n = z.rows();
    Eigen::MatrixXd R(n, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        R(i, i) = 1.0;
        for (Eigen::Index j = 0; j < i; ++j) {
            const double v = matern52((z.row(i) - z.row(j)).norm());
            R(i, j) = v;
            R(j, i) = v;
        }
    }
    return R;
}

// Cholesky of R + rho I with a doubling jitter ladder. Updates rho.
Eigen::MatrixXd factor_with_ladder(const Eigen::MatrixXd& R, double& rho, double max_jitter) {
    const Eigen::Index n = R.rows();
    while (true) {
        Eigen::MatrixXd C = R;
        C.diagonal().array() += rho;
        Eigen::LLT<Eigen::MatrixXd> llt(C);
        if (llt.info() == Eigen::Success) {
            Eigen::MatrixXd L = llt.matrixL();
            bool ok = L.allFinite();
            for (Eigen::Index i = 0; ok && i < n; ++i) ok = L(i, i) > 0.0;
            if (ok) return L;
        }
        rho *= 2.0;
        if (rho > max_jitter)
            throw FactorizationFailure(fmt::format("gram matrix of {} points not positive definite at jitter {:g}",
                                                   n, max_jitter));
    }
}

struct PooledEval {
    double ll = -std::numeric_limits<double>::infinity();
    double mean = 0.0;
    double sigma2 = 1.0;
};

class PooledLikelihood {
public:
    PooledLikelihood(const std::vector<PooledDataset>& sets, Eigen::Index dim, const FitOptions& opts)
        : sets_(sets), dim_(dim), opts_(opts) {}

    PooledEval evaluate(const Eigen::VectorXd& log_ls, Eigen::VectorXd* grad) const {
        const Eigen::VectorXd inv = (-log_ls).array().exp();
        struct Part {
            Eigen::MatrixXd z, R;
            Eigen::LLT<Eigen::MatrixXd> llt;
            Eigen::VectorXd ci1;
            Eigen::MatrixXd ciy;
        };
        std::vector<Part> parts(sets_.size());
        double a = 0.0, b = 0.0, ycy = 0.0, logdet = 0.0, count = 0.0;
        for (std::size_t k = 0; k < sets_.size(); ++k) {
            const auto& s = sets_[k];
            auto& p = parts[k];
            p.z = s.inputs * inv.asDiagonal();
            p.R = correlation_matrix(p.z);
            double rho = opts_.min_jitter;
            const Eigen::MatrixXd L = factor_with_ladder(p.R, rho, opts_.max_jitter);
            Eigen::MatrixXd C = p.R;
            C.diagonal().array() += rho;
            p.llt.compute(C);
            const Eigen::Index n = s.inputs.rows();
            const double cols = static_cast<double>(s.targets.cols());
            p.ci1 = p.llt.solve(Eigen::VectorXd::Ones(n));
            p.ciy = p.llt.solve(s.targets);
            a += cols * p.ci1.sum();
            b += p.ciy.sum();
            ycy += (s.targets.array() * p.ciy.array()).sum();
            logdet += cols * 2.0 * L.diagonal().array().log().sum();
            count += cols * static_cast<double>(n);
        }
        PooledEval e;
        e.mean = b / a;
        const double quad = ycy - 2.0 * e.mean * b + e.mean * e.mean * a;
        e.sigma2 = std::clamp(quad / count, kMinSignalSd * kMinSignalSd, kMaxSignalSd * kMaxSignalSd);
        e.ll = -0.5 * (quad / e.sigma2 + logdet + count * std::log(e.sigma2) + count * kLog2Pi);
        if (grad) {
            grad->setZero(dim_);
            for (std::size_t k = 0; k < sets_.size(); ++k) {
                const auto& s = sets_[k];
                const auto& p = parts[k];
                const Eigen::Index n = s.inputs.rows();
                const Eigen::MatrixXd resid = p.ciy - e.mean * p.ci1.replicate(1, s.targets.cols());
                const Eigen::MatrixXd P = p.llt.solve(Eigen::MatrixXd::Identity(n, n));
                const Eigen::MatrixXd W =
                    resid * resid.transpose() / e.sigma2 - static_cast<double>(s.targets.cols()) * P;
                for (Eigen::Index i = 0; i < n; ++i) {
                    for (Eigen::Index j = 0; j < i; ++j) {
                        const double f = -matern52_radial((p.z.row(i) - p.z.row(j)).norm()) * W(i, j);
                        for (Eigen::Index d = 0; d < dim_; ++d) {
                            const double dz = p.z(i, d) - p.z(j, d);
                            (*grad)(d) += f * dz * dz;
                        }
                    }
                }
            }
        }
        return e;
    }

private:
    const std::vector<PooledDataset>& sets_;
    Eigen::Index dim_;
    FitOptions opts_;
};

}  // namespace

double matern52(double s) { return (1.0 + kSqrt5 * s + (5.0 / 3.0) * s * s) * std::exp(-kSqrt5 * s); }

InputScaling InputScaling::identity(Eigen::Index dim) {
    return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)};
}

InputScaling InputScaling::from_data(const Eigen::MatrixXd& inputs) {
    InputScaling s;
    s.lower = inputs.colwise().minCoeff().transpose();
    s.width = inputs.colwise().maxCoeff().transpose() - s.lower;
    for (Eigen::Index i = 0; i < s.width.size(); ++i)
        if (!(s.width(i) > 0.0)) s.width(i) = 1.0;
    return s;
}

OutputScaling OutputScaling::identity(Eigen::Index outputs) {
    return {Eigen::VectorXd::Zero(outputs), Eigen::VectorXd::Ones(outputs)};
}

OutputScaling OutputScaling::standardize(const Eigen::MatrixXd& targets) {
    const Eigen::Index m = targets.cols();
    const auto n = static_cast<double>(targets.rows());
    OutputScaling s{Eigen::VectorXd::Zero(m), Eigen::VectorXd::Zero(m)};
    for (Eigen::Index k = 0; k < m; ++k) {
        const auto col = targets.col(k);
        const double mean = col.mean();
        const double sd = std::sqrt((col.array() - mean).square().sum() / n);
        const double mag = col.cwiseAbs().maxCoeff();
        s.shift(k) = mean;
        // Spread at rounding level of the values is treated as constant.
        if (mag > 0.0 && sd > 1e-11 * mag) s.scale(k) = sd;
    }
    return s;
}

GaussianProcess::GaussianProcess(Eigen::MatrixXd inputs, Eigen::MatrixXd targets, InputScaling in,
                                 OutputScaling out, NormalizedHyper hyper, double max_jitter)
    : inputs_(std::move(inputs)), targets_(std::move(targets)), in_(std::move(in)), out_(std::move(out)),
      hyper_(std::move(hyper)) {
    const Eigen::Index d = in_.lower.size();
    if (in_.width.size() != d || hyper_.lengthscales.size() != d)
        throw DomainError("input scaling and lengthscales must match the input dimension");
    if (inputs_.rows() > 0 && inputs_.cols() != d)
        throw DomainError(fmt::format("inputs have {} columns, expected {}", inputs_.cols(), d));
    if (targets_.rows() != inputs_.rows() || targets_.cols() != out_.shift.size() ||
        out_.scale.size() != out_.shift.size())
        throw DomainError("targets do not match inputs or output scaling");
    if (!(hyper_.lengthscales.array() > 0.0).all() || !(hyper_.signal_variance > 0.0) || !(hyper_.rel_jitter > 0.0))
        throw DomainError("kernel hyperparameters must be positive");
    if (!inputs_.allFinite() || !targets_.allFinite()) throw NumericalFailure("non-finite training data");
    inv_ls_ = (in_.width.cwiseProduct(hyper_.lengthscales)).cwiseInverse();
    factorize(max_jitter);
}

void GaussianProcess::factorize(double max_jitter) {
    const Eigen::Index n = inputs_.rows();
    scaled_.resize(n, dim());
    for (Eigen::Index i = 0; i < n; ++i)
        scaled_.row(i) = ((inputs_.row(i).transpose() - in_.lower).cwiseProduct(inv_ls_)).transpose();
    const Eigen::MatrixXd R = correlation_matrix(scaled_);
    chol_ = factor_with_ladder(R, hyper_.rel_jitter, std::max(max_jitter, hyper_.rel_jitter));
    alpha_.resize(n, outputs());
    for (Eigen::Index k = 0; k < outputs(); ++k) {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(n);
        if (!out_.degenerate(k)) y = (targets_.col(k).array() - out_.shift(k)) / out_.scale(k);
        y.array() -= hyper_.mean;
        solve_lower(y);
        solve_upper(y);
        alpha_.col(k) = y;
    }
}

void GaussianProcess::solve_lower(Eigen::VectorXd& x) const {
    if (x.size() > 0) chol_.triangularView<Eigen::Lower>().solveInPlace(x);
}

void GaussianProcess::solve_upper(Eigen::VectorXd& x) const {
    if (x.size() > 0) chol_.transpose().triangularView<Eigen::Upper>().solveInPlace(x);
}

GaussianProcess GaussianProcess::with_hyperparams(Eigen::MatrixXd inputs, Eigen::VectorXd targets,
                                                  const KernelHyperparams& hyper) {
    if (!(hyper.signal_variance > 0.0) || !(hyper.noise_jitter > 0.0))
        throw DomainError("signal variance and jitter must be positive");
    const Eigen::Index d = hyper.lengthscales.size();
    NormalizedHyper h{hyper.lengthscales, hyper.signal_variance, hyper.mean_const,
                      hyper.noise_jitter / hyper.signal_variance};
    return {std::move(inputs), Eigen::MatrixXd(targets), InputScaling::identity(d), OutputScaling::identity(1), h,
            std::max(1e-2, h.rel_jitter)};
}

GaussianProcess GaussianProcess::fit(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                                     const FitOptions& opts, std::optional<InputScaling> box) {
    if (inputs.rows() < 2) throw DomainError("fitting needs at least two training points");
    if (targets.rows() != inputs.rows()) throw DomainError("inputs and targets differ in length");
    if (!inputs.allFinite() || !targets.allFinite()) throw NumericalFailure("non-finite training data");
    InputScaling in = box ? *box : InputScaling::from_data(inputs);
    OutputScaling out = OutputScaling::standardize(targets);

    PooledDataset set;
    set.inputs.resize(inputs.rows(), inputs.cols());
    for (Eigen::Index i = 0; i < inputs.rows(); ++i)
        set.inputs.row(i) = ((inputs.row(i).transpose() - in.lower).cwiseQuotient(in.width)).transpose();
    std::vector<Eigen::Index> live;
    for (Eigen::Index k = 0; k < targets.cols(); ++k)
        if (!out.degenerate(k)) live.push_back(k);
    set.targets.resize(inputs.rows(), static_cast<Eigen::Index>(live.size()));
    for (std::size_t j = 0; j < live.size(); ++j)
        set.targets.col(static_cast<Eigen::Index>(j)) =
            (targets.col(live[j]).array() - out.shift(live[j])) / out.scale(live[j]);

    NormalizedHyper hyper;
    hyper.lengthscales = Eigen::VectorXd::Constant(inputs.cols(), 0.5);
    hyper.rel_jitter = opts.min_jitter;
    if (!live.empty()) hyper = fit_pooled({set}, inputs.cols(), opts).hyper;
    return {inputs, targets, in, out, hyper, opts.max_jitter};
}

PooledFit fit_pooled(const std::vector<PooledDataset>& sets, Eigen::Index dim, const FitOptions& opts) {
    PooledFit result;
    result.hyper.lengthscales = Eigen::VectorXd::Constant(dim, 0.5);
    result.hyper.rel_jitter = opts.min_jitter;
    std::vector<PooledDataset> live;
    for (const auto& s : sets)
        if (s.targets.cols() > 0 && s.inputs.rows() > 0) live.push_back(s);
    if (live.empty()) {
        result.degenerate = true;
        return result;
    }
    const PooledLikelihood lik(live, dim, opts);
    const Box box{Eigen::VectorXd::Constant(dim, std::log(kMinLengthscale)),
                  Eigen::VectorXd::Constant(dim, std::log(kMaxLengthscale))};
    const SmoothObjective f = [&](const Eigen::VectorXd& x, Eigen::VectorXd* g) {
        try {
            return lik.evaluate(x, g).ll;
        } catch (const FactorizationFailure&) {
            return -std::numeric_limits<double>::infinity();
        }
    };

    std::mt19937_64 rng(opts.seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    LocalOptions local;
    local.max_iter = opts.max_iter;
    local.ftol = 1e-9;
    local.xtol = 1e-6;
    double best = -std::numeric_limits<double>::infinity();
    Eigen::VectorXd best_x;
    const int starts = std::max(1, opts.restarts);
    for (int s = 0; s < starts; ++s) {
        Eigen::VectorXd x0(dim);
        if (s == 0) {
            x0 = opts.warm_start && opts.warm_start->size() == dim ? box.clamp(*opts.warm_start)
                                                                      : Eigen::VectorXd::Constant(dim, std::log(0.5));
        } else {
            for (Eigen::Index i = 0; i < dim; ++i) x0(i) = box.lower(i) + u(rng) * (box.upper(i) - box.lower(i));
        }
        const LocalResult r = maximize_box(f, x0, box, local);
        if (std::isfinite(r.value) && (best_x.size() == 0 || r.value > best)) {
            best = r.value;
            best_x = r.x;
        }
    }
    if (best_x.size() == 0) throw FactorizationFailure("no hyperparameter start gave a factorizable gram matrix");
    const PooledEval e = lik.evaluate(best_x, nullptr);
    result.hyper.lengthscales = best_x.array().exp();
    result.hyper.signal_variance = e.sigma2;
    result.hyper.mean = e.mean;
    result.log_likelihood = e.ll;
    return result;
}

double log_marginal_likelihood(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                               const KernelHyperparams& hyper) {
    const Eigen::Index n = inputs.rows();
    Eigen::MatrixXd z = inputs * hyper.lengthscales.cwiseInverse().asDiagonal();
    Eigen::MatrixXd K = hyper.signal_variance * correlation_matrix(z);
    K.diagonal().array() += hyper.noise_jitter;
    Eigen::LLT<Eigen::MatrixXd> llt(K);
    if (llt.info() != Eigen::Success) throw FactorizationFailure("covariance matrix not positive definite");
    const Eigen::VectorXd r = targets.array() - hyper.mean_const;
    const Eigen::MatrixXd L = llt.matrixL();
    const double logdet = 2.0 * L.diagonal().array().log().sum();
    return -0.5 * (r.dot(llt.solve(r)) + logdet + static_cast<double>(n) * kLog2Pi);
}

MleResult fit_mle(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, int restarts, std::uint64_t seed) {
    FitOptions opts;
    opts.restarts = restarts;
    opts.seed = seed;
    const GaussianProcess gp = GaussianProcess::fit(inputs, Eigen::MatrixXd(targets), opts);
    MleResult res;
    res.hyper = gp.hyperparams(0);
    res.degenerate = gp.degenerate(0);
    if (!res.degenerate) res.log_likelihood = log_marginal_likelihood(inputs, targets, res.hyper);
    return res;
}

KernelHyperparams GaussianProcess::hyperparams(Eigen::Index output) const {
    KernelHyperparams h;
    h.lengthscales = in_.width.cwiseProduct(hyper_.lengthscales);
    h.signal_variance = raw_variance_factor(output);
    h.mean_const = raw_mean(hyper_.mean, output);
    h.noise_jitter = h.signal_variance * hyper_.rel_jitter;
    return h;
}

Eigen::VectorXd GaussianProcess::scale_query(const Eigen::VectorXd& query) const {
    Eigen::VectorXd z;
    scale_query(query, z);
    return z;
}

void GaussianProcess::scale_query(const Eigen::VectorXd& query, Eigen::VectorXd& z) const {
    if (query.size() != dim())
        throw DomainError(fmt::format("query has dimension {}, expected {}", query.size(), dim()));
    z.resize(dim());
    z.array() = (query.array() - in_.lower.array()) * inv_ls_.array();
}

void GaussianProcess::correlations(const Eigen::VectorXd& z, Eigen::VectorXd& r, Eigen::MatrixXd* dr) const {
    const Eigen::Index n = size();
    r.resize(n);
    if (dr) dr->resize(n, dim());
    const Eigen::Index d = dim();
    for (Eigen::Index j = 0; j < n; ++j) {
        double s2 = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            const double di = z(i) - scaled_(j, i);
            s2 += di * di;
        }
        const double s = std::sqrt(s2);
        r(j) = matern52(s);
        if (dr) {
            const double f = matern52_radial(s);
            for (Eigen::Index i = 0; i < d; ++i) (*dr)(j, i) = f * (z(i) - scaled_(j, i)) * inv_ls_(i);
        }
    }
}

void GaussianProcess::finish_terms(QueryTerms& t) const {
    t.v = t.r;
    solve_lower(t.v);
    t.var_norm = std::max(0.0, 1.0 - t.v.squaredNorm());
    if (t.with_grad) {
        t.a = t.v;
        solve_upper(t.a);
    }
}

void GaussianProcess::query_terms(const Eigen::VectorXd& query, bool with_grad, QueryTerms& t) const {
    scale_query(query, t.z);
    t.with_grad = with_grad;
    correlations(t.z, t.r, with_grad ? &t.dr : nullptr);
    finish_terms(t);
}

double GaussianProcess::standardized_mean(const QueryTerms& t, Eigen::Index output) const {
    return hyper_.mean + (size() > 0 ? t.r.dot(alpha_.col(output)) : 0.0);
}

Eigen::VectorXd GaussianProcess::standardized_mean_grad(const QueryTerms& t, Eigen::Index output) const {
    if (size() == 0) return Eigen::VectorXd::Zero(dim());
    return t.dr.transpose() * alpha_.col(output);
}

Prediction GaussianProcess::predict(const Eigen::VectorXd& query, Eigen::Index output) const {
    QueryTerms t;
    query_terms(query, false, t);
    return {raw_mean(standardized_mean(t, output), output), raw_variance_factor(output) * t.var_norm};
}

PredictionGrad GaussianProcess::predict_with_grad(const Eigen::VectorXd& query, Eigen::Index output) const {
    QueryTerms t;
    query_terms(query, true, t);
    PredictionGrad p;
    p.mean = raw_mean(standardized_mean(t, output), output);
    p.mean_grad = out_.scale(output) * standardized_mean_grad(t, output);
    const double f = raw_variance_factor(output);
    p.variance = f * t.var_norm;
    if (size() == 0 || t.var_norm <= 0.0)
        p.variance_grad = Eigen::VectorXd::Zero(dim());
    else
        p.variance_grad = -2.0 * f * (t.dr.transpose() * t.a);
    return p;
}

double GaussianProcess::sample_reparam(const Eigen::VectorXd& query, double epsilon, Eigen::Index output,
                                       Eigen::VectorXd* grad) const {
    if (!grad) {
        const Prediction p = predict(query, output);
        return p.mean + std::sqrt(p.variance) * epsilon;
    }
    const PredictionGrad p = predict_with_grad(query, output);
    const double sd = std::sqrt(p.variance);
    *grad = p.mean_grad;
    if (sd > 0.0) *grad += (epsilon / (2.0 * sd)) * p.variance_grad;
    return p.mean + sd * epsilon;
}

GaussianProcess GaussianProcess::fantasize(const Eigen::VectorXd& query, const Eigen::VectorXd& targets_row) const {
    if (targets_row.size() != outputs()) throw DomainError("fantasy target count does not match outputs");
    GaussianProcess g;
    const Eigen::Index n = size();
    g.inputs_.resize(n + 1, dim());
    g.inputs_.topRows(n) = inputs_;
    g.inputs_.row(n) = query.transpose();
    g.targets_.resize(n + 1, outputs());
    g.targets_.topRows(n) = targets_;
    g.targets_.row(n) = targets_row.transpose();
    g.in_ = in_;
    g.out_ = out_;
    g.hyper_ = hyper_;
    g.inv_ls_ = inv_ls_;

    QueryTerms t;
    query_terms(query, false, t);
    const double pivot = 1.0 + hyper_.rel_jitter - t.v.squaredNorm();
    if (!(pivot > 0.0)) {
        g.factorize(1e-2);
        return g;
    }
    g.scaled_.resize(n + 1, dim());
    g.scaled_.topRows(n) = scaled_;
    g.scaled_.row(n) = t.z.transpose();
    g.chol_ = Eigen::MatrixXd::Zero(n + 1, n + 1);
    g.chol_.topLeftCorner(n, n) = chol_;
    g.chol_.block(n, 0, 1, n) = t.v.transpose();
    g.chol_(n, n) = std::sqrt(pivot);
    g.alpha_.resize(n + 1, outputs());
    for (Eigen::Index k = 0; k < outputs(); ++k) {
        Eigen::VectorXd y = Eigen::VectorXd::Zero(n + 1);
        if (!out_.degenerate(k)) y = (g.targets_.col(k).array() - out_.shift(k)) / out_.scale(k);
        y.array() -= hyper_.mean;
        g.solve_lower(y);
        g.solve_upper(y);
        g.alpha_.col(k) = y;
    }
    return g;
}

ConditioningPoint GaussianProcess::condition_at(const Eigen::VectorXd& query) const {
    ConditioningPoint c;
    c.query = query;
    c.z = scale_query(query);
    correlations(c.z, c.w, &c.dr);
    solve_lower(c.w);
    c.b = c.w;
    solve_upper(c.b);
    c.var_norm = std::max(0.0, 1.0 - c.w.squaredNorm());
    c.denom = c.var_norm + hyper_.rel_jitter;
    return c;
}

double GaussianProcess::cross_correlation(const QueryTerms& t, const ConditioningPoint& c,
                                          Eigen::VectorXd* grad_q) const {
    const double s = (t.z - c.z).norm();
    const double value = matern52(s) - (size() > 0 ? t.v.dot(c.w) : 0.0);
    if (grad_q) {
        grad_q->resize(dim());
        grad_q->array() = matern52_radial(s) * (t.z - c.z).array() * inv_ls_.array();
        if (size() > 0) grad_q->noalias() -= t.dr.transpose() * c.b;
    }
    return value;
}

Eigen::VectorXd GaussianProcess::cross_correlation_grad_star(const QueryTerms& t, const ConditioningPoint& c) const {
    const Eigen::VectorXd diff = c.z - t.z;
    Eigen::VectorXd g = matern52_radial(diff.norm()) * diff.cwiseProduct(inv_ls_);
    if (size() > 0) g -= c.dr.transpose() * t.a;
    return g;
}

Eigen::VectorXd GaussianProcess::var_norm_grad(const QueryTerms& star) const {
    if (size() == 0 || star.var_norm <= 0.0) return Eigen::VectorXd::Zero(dim());
    return -2.0 * (star.dr.transpose() * star.a);
}

}  // namespace epicalib::gp
