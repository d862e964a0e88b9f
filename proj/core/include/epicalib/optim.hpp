#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

namespace epicalib {

/// Axis-aligned box.
struct Box {
    Eigen::VectorXd lower;
    Eigen::VectorXd upper;

    static Box unit(Eigen::Index dim);
    Eigen::Index dim() const { return lower.size(); }
    Eigen::VectorXd clamp(const Eigen::VectorXd& x) const;
    bool contains(const Eigen::VectorXd& x) const;
};

/// Value with optional gradient; `grad` is null when only the value is needed.
using SmoothObjective = std::function<double(const Eigen::VectorXd& x, Eigen::VectorXd* grad)>;
using PlainObjective = std::function<double(const Eigen::VectorXd& x)>;

struct LocalOptions {
    int max_iter = 50;
    double xtol = 1e-7;   // relative to the box width
    double ftol = 1e-10;  // relative change in value
    double initial_step = 0.1;
};

struct LocalResult {
    Eigen::VectorXd x;
    double value = 0.0;
    int iterations = 0;
    int evaluations = 0;
};

/// Projected quasi-Newton (BFGS) ascent inside a box. Non-finite values are
/// treated as failed trial points during the line search.
LocalResult maximize_box(const SmoothObjective& f, const Eigen::VectorXd& x0, const Box& box,
                         const LocalOptions& opts = {});

struct PatternOptions {
    double initial_step = 0.1;  // relative to the box width
    double min_step = 1e-3;
    int max_evaluations = 40;
};

/// Compass search. Only strictly improving moves are taken.
LocalResult maximize_pattern(const PlainObjective& f, const Eigen::VectorXd& x0, const Box& box,
                             const PatternOptions& opts = {});

/// `a` beats `b` only if it is larger by more than a tie tolerance.
bool strictly_better(double a, double b);

/// Index of the largest value; ties resolve to the lowest index. Non-finite
/// entries are skipped; returns -1 if none is finite.
int argmax_first(const std::vector<double>& values);

/// Sobol points in [0,1)^dim, one per row, with a seeded Cranley-Patterson shift
/// (shift of zero when seed == 0).
Eigen::MatrixXd sobol_points(int dim, int count, std::uint64_t seed);

/// Map unit-cube rows into a box.
Eigen::MatrixXd scale_to_box(const Eigen::MatrixXd& unit_rows, const Box& box);

/// Deterministic 64-bit seed mixing (splitmix64 finalizer).
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

}  // namespace epicalib
