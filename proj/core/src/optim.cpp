#include "epicalib/optim.hpp"

#include "epicalib/errors.hpp"

#include <boost/random/sobol.hpp>
#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>

namespace epicalib {
namespace {

constexpr double kTieAbs = 1e-15;
constexpr double kTieRel = 1e-12;

}  // namespace

Box Box::unit(Eigen::Index dim) { return {Eigen::VectorXd::Zero(dim), Eigen::VectorXd::Ones(dim)}; }

Eigen::VectorXd Box::clamp(const Eigen::VectorXd& x) const { return x.cwiseMax(lower).cwiseMin(upper); }

bool Box::contains(const Eigen::VectorXd& x) const {
    return x.size() == lower.size() && (x.array() >= lower.array()).all() && (x.array() <= upper.array()).all();
}

bool strictly_better(double a, double b) {
    if (!std::isfinite(a)) return false;
    if (!std::isfinite(b)) return true;
    return a > b + kTieAbs + kTieRel * std::abs(b);
}

int argmax_first(const std::vector<double>& values) {
    int best = -1;
    for (std::size_t i = 0; i < values.size(); ++i) {
        if (!std::isfinite(values[i])) continue;
        if (best < 0 || strictly_better(values[i], values[static_cast<std::size_t>(best)])) best = static_cast<int>(i);
    }
    return best;
}

LocalResult maximize_box(const SmoothObjective& f, const Eigen::VectorXd& x0, const Box& box,
                         const LocalOptions& opts) {
    const Eigen::Index d = box.dim();
    const Eigen::VectorXd width = (box.upper - box.lower).cwiseMax(1e-300);
    LocalResult res;
    Eigen::VectorXd x = box.clamp(x0);
    Eigen::VectorXd g(d);
    double fx = f(x, &g);
    ++res.evaluations;
    res.x = x;
    res.value = fx;
    if (!std::isfinite(fx) || !g.allFinite()) {
        res.value = std::isfinite(fx) ? fx : -std::numeric_limits<double>::infinity();
        return res;
    }

    // Work on the minimization of -f.
    Eigen::VectorXd gh = -g;
    double h = -fx;
    Eigen::MatrixXd H = Eigen::MatrixXd::Identity(d, d);
    bool scaled = false;
    int small_changes = 0;

    for (int it = 0; it < opts.max_iter; ++it) {
        res.iterations = it + 1;
        std::vector<bool> active(static_cast<std::size_t>(d), false);
        double pg = 0.0;
        for (Eigen::Index i = 0; i < d; ++i) {
            const double tol = 1e-12 * width(i);
            const bool at_lo = x(i) <= box.lower(i) + tol && gh(i) > 0.0;
            const bool at_hi = x(i) >= box.upper(i) - tol && gh(i) < 0.0;
            active[static_cast<std::size_t>(i)] = at_lo || at_hi;
            if (!active[static_cast<std::size_t>(i)]) pg = std::max(pg, std::abs(gh(i)) * width(i));
        }
        if (pg == 0.0) break;

        if (!scaled) {
            const double gmax = (gh.array() * width.array()).abs().maxCoeff();
            H = Eigen::MatrixXd::Identity(d, d) * (opts.initial_step / std::max(gmax, 1e-300));
            for (Eigen::Index i = 0; i < d; ++i) H(i, i) *= width(i) * width(i);
            scaled = true;
        }

        Eigen::VectorXd ghf = gh;
        for (Eigen::Index i = 0; i < d; ++i)
            if (active[static_cast<std::size_t>(i)]) ghf(i) = 0.0;
        Eigen::VectorXd dir = -(H * ghf);
        for (Eigen::Index i = 0; i < d; ++i)
            if (active[static_cast<std::size_t>(i)]) dir(i) = 0.0;
        if (dir.dot(gh) >= 0.0) {
            const double gmax = (ghf.array() * width.array()).abs().maxCoeff();
            dir = -ghf.cwiseProduct(width.cwiseProduct(width)) * (opts.initial_step / std::max(gmax, 1e-300));
        }
        // Never try to cross more than the whole box in one step.
        const double maxrel = (dir.array() / width.array()).abs().maxCoeff();
        if (maxrel > 1.0) dir /= maxrel;

        double alpha = 1.0;
        bool accepted = false;
        Eigen::VectorXd xn, gn(d);
        double hn = 0.0;
        for (int ls = 0; ls < 30; ++ls) {
            xn = box.clamp(x + alpha * dir);
            const double fn = f(xn, &gn);
            ++res.evaluations;
            hn = -fn;
            if (std::isfinite(fn) && gn.allFinite() && hn <= h + 1e-4 * gh.dot(xn - x)) {
                accepted = true;
                break;
            }
            alpha *= 0.5;
        }
        if (!accepted) break;

        const Eigen::VectorXd s = xn - x;
        const Eigen::VectorXd ghn = -gn;
        const Eigen::VectorXd y = ghn - gh;
        const double sy = s.dot(y);
        if (sy > 1e-12 * s.norm() * y.norm() && sy > 0.0) {
            const double rho = 1.0 / sy;
            const Eigen::MatrixXd I = Eigen::MatrixXd::Identity(d, d);
            H = (I - rho * s * y.transpose()) * H * (I - rho * y * s.transpose()) + rho * s * s.transpose();
        }

        const double change = std::abs(h - hn);
        x = xn;
        gh = ghn;
        h = hn;
        if ((s.array().abs() / width.array()).maxCoeff() < opts.xtol) break;
        if (change <= opts.ftol * std::max(std::abs(h), 1e-300)) {
            if (++small_changes >= 2) break;
        } else {
            small_changes = 0;
        }
    }
    res.x = x;
    res.value = -h;
    return res;
}

LocalResult maximize_pattern(const PlainObjective& f, const Eigen::VectorXd& x0, const Box& box,
                             const PatternOptions& opts) {
    const Eigen::Index d = box.dim();
    const Eigen::VectorXd width = box.upper - box.lower;
    LocalResult res;
    res.x = box.clamp(x0);
    res.value = f(res.x);
    res.evaluations = 1;
    double step = opts.initial_step;
    while (step >= opts.min_step && res.evaluations < opts.max_evaluations) {
        ++res.iterations;
        bool moved = false;
        for (Eigen::Index i = 0; i < d && res.evaluations < opts.max_evaluations; ++i) {
            for (double sign : {1.0, -1.0}) {
                Eigen::VectorXd trial = res.x;
                trial(i) += sign * step * width(i);
                trial = box.clamp(trial);
                if (trial == res.x) continue;
                const double v = f(trial);
                ++res.evaluations;
                if (strictly_better(v, res.value)) {
                    res.x = trial;
                    res.value = v;
                    moved = true;
                    break;
                }
                if (res.evaluations >= opts.max_evaluations) break;
            }
        }
        if (!moved) step *= 0.5;
    }
    return res;
}

Eigen::MatrixXd sobol_points(int dim, int count, std::uint64_t seed) {
    if (dim < 1) throw DomainError("sobol dimension must be >= 1");
    Eigen::MatrixXd out(count, dim);
    boost::random::sobol engine(static_cast<std::size_t>(dim));
    constexpr double scale = 1.0 / 18446744073709551616.0;  // 2^-64
    Eigen::VectorXd shift = Eigen::VectorXd::Zero(dim);
    if (seed != 0) {
        std::mt19937_64 rng(seed);
        std::uniform_real_distribution<double> u(0.0, 1.0);
        for (int j = 0; j < dim; ++j) shift(j) = u(rng);
    }
    for (int i = 0; i < count; ++i) {
        for (int j = 0; j < dim; ++j) {
            double v = static_cast<double>(engine()) * scale + shift(j);
            out(i, j) = v - std::floor(v);
        }
    }
    return out;
}

Eigen::MatrixXd scale_to_box(const Eigen::MatrixXd& unit_rows, const Box& box) {
    Eigen::MatrixXd out = unit_rows;
    for (Eigen::Index i = 0; i < out.rows(); ++i)
        out.row(i) = (box.lower.array() + unit_rows.row(i).transpose().array() * (box.upper - box.lower).array())
                         .transpose();
    return out;
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
    std::uint64_t z = a * 0x9E3779B97F4A7C15ULL + b + 0x632BE59BD9B4E019ULL;
    z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
    z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
    return z ^ (z >> 31);
}

}  // namespace epicalib
