#pragma once

#include "epicalib/gp.hpp"
#include "epicalib/optim.hpp"
#include "epicalib/surrogate.hpp"

#include <Eigen/Core>

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace epicalib {

enum class AcquisitionKind { EI, KG, KG_CF, KG_FN, DG_CF };

std::string_view to_string(AcquisitionKind kind);
/// Accepts "EI", "KG", "KG-CF"/"KG_CF", "KG-FN"/"KG_FN", "DG-CF"/"DG_CF".
AcquisitionKind parse_acquisition_kind(std::string_view name);
bool is_blackbox(AcquisitionKind kind);

/// Which compartments a decoupled query conditions on.
using ZVector = std::array<bool, 4>;
inline constexpr ZVector kAllCompartments{true, true, true, true};

/// Optimizer effort presets. Full keeps the defaults below; fast trims the
/// multi-start counts so that a 50-iteration graybox run fits in minutes on
/// one core.
enum class BudgetProfile { Fast, Full };

std::string_view to_string(BudgetProfile profile);
BudgetProfile parse_budget_profile(std::string_view name);

struct AcquisitionSpec {
    AcquisitionKind kind = AcquisitionKind::KG_CF;
    int K = 8;                 // outer fantasy samples
    int L = 128;               // inner expectation samples
    int restarts = 4;          // outer starts refined after screening
    int raw_candidates = 32;   // low-discrepancy screening set
    int inner_restarts = 4;    // low-discrepancy inner starts (plus incumbent and fantasy point)
    int inner_max_iter = 50;
    int outer_max_iter = 25;
    int outer_pattern_evals = 24;  // per refined start, KG-FN only
    std::vector<ZVector> z_subsets;  // DG-CF; empty selects the default set
    bool full_z_enumeration = false;
    std::uint64_t seed = 0;

    /// Settings of `kind` under a profile.
    static AcquisitionSpec preset(AcquisitionKind kind, BudgetProfile profile);

    void validate() const;
    /// Singletons then all-ones, or every nonzero z when full enumeration is on.
    std::vector<ZVector> subsets() const;
};

/// Frozen base samples of one acquisition maximization.
struct SampleBank {
    Eigen::MatrixXd outer;         // K x (T*4), column k*4 + c
    Eigen::MatrixXd inner;         // L x (T*4)
    Eigen::MatrixXd inner_starts;  // inner_restarts x D, unit cube
    Eigen::MatrixXd candidates;    // raw_candidates x D, unit cube

    /// Randomized quasi-Monte-Carlo normals and Sobol start sets.
    static SampleBank generate(const AcquisitionSpec& spec, Eigen::Index time_points, Eigen::Index dim,
                               std::uint64_t seed);
    Eigen::MatrixXd outer_block(Eigen::Index k, Eigen::Index time_points) const;
    Eigen::MatrixXd inner_block(Eigen::Index l, Eigen::Index time_points) const;
};

/// Closed-form expected improvement over `best` for a Gaussian (mean, variance).
double expected_improvement(double mean, double variance, double best, double jitter = 0.0);

struct Decision {
    Eigen::VectorXd x;
    ZVector z = kAllCompartments;
    double acq_value = 0.0;
    bool fallback = false;
};

struct KgDetail {
    double value = 0.0;
    double std_error = 0.0;
    std::vector<double> fantasy_optima;  // max of the conditioned expectation per fantasy
};

/// Acquisition evaluation over a fitted surrogate with a frozen bank. All
/// points are in unit-cube coordinates.
class AcquisitionContext {
public:
    /// Graybox kinds: KG-CF, KG-FN, DG-CF.
    AcquisitionContext(const NetworkSurrogate& surrogate, MetricTarget target, AcquisitionSpec spec,
                       SampleBank bank);
    /// Blackbox kinds: EI and KG on a single GP over objective values.
    AcquisitionContext(const gp::GaussianProcess& objective_model, double best_observed, AcquisitionSpec spec,
                       SampleBank bank);

    const AcquisitionSpec& spec() const { return spec_; }
    Eigen::Index dim() const { return dim_; }

    /// Replaces continuous optimization (inner and outer) by enumeration.
    void set_discrete_domain(Eigen::MatrixXd points) { domain_ = std::move(points); }

    /// Sample-average estimate of the current expected metric u_n(x)
    /// (the posterior mean for blackbox kinds).
    double expected(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const;

    /// Same under the posterior conditioned on outer fantasy k at `at`, for the
    /// compartments selected by z. Used by tests and by the inner optimizer.
    double conditioned_expected(const Eigen::VectorXd& x_prime, const Eigen::VectorXd& at, int k, const ZVector& z,
                                Eigen::VectorXd* grad_x_prime = nullptr, Eigen::VectorXd* grad_at = nullptr) const;

    /// Computes and caches max_x u_n(x); the extra starts go first.
    double prepare(const std::vector<Eigen::VectorXd>& extra_starts = {});
    double current_optimum() const { return u_star_; }
    const Eigen::VectorXd& current_argmax() const { return x_star_; }
    /// Best start point by value and the multi-start maximizer of u_n.
    LocalResult maximize_expected(const std::vector<Eigen::VectorXd>& starts) const;

    double ei(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr) const;
    double kg(const Eigen::VectorXd& x, Eigen::VectorXd* grad = nullptr, KgDetail* detail = nullptr) const;
    double dg(const Eigen::VectorXd& x, const ZVector& z, Eigen::VectorXd* grad = nullptr,
              KgDetail* detail = nullptr) const;
    /// Acquisition value of the configured kind.
    double value(const Eigen::VectorXd& x, const ZVector& z, Eigen::VectorXd* grad = nullptr) const;

    /// Screens the bank candidates (plus `extra_starts` appended after them),
    /// refines the best `restarts`, and returns the winner; ties go to the
    /// lowest index. Throws OptFailure if nothing is finite.
    Decision maximize(const std::vector<Eigen::VectorXd>& extra_starts = {}) const;

private:
    struct CfCondition;
    struct FnCondition;

    double gaussian_value(const Eigen::VectorXd& xp, const CfCondition* cond, int k, Eigen::VectorXd* grad_xp,
                          Eigen::VectorXd* grad_at) const;
    double network_value(const Eigen::VectorXd& xp, const FnCondition* cond, Eigen::VectorXd* grad_xp) const;
    CfCondition make_cf_condition(const Eigen::VectorXd& at, const ZVector& z, bool with_grad) const;
    FnCondition make_fn_condition(const Eigen::VectorXd& at, int k, const ZVector& z) const;
    double inner_max(const SmoothObjective& f, const Eigen::VectorXd& at, Eigen::VectorXd* argmax) const;
    double fantasy_value(const Eigen::VectorXd& x, const ZVector& z, Eigen::VectorXd* grad, KgDetail* detail) const;

    AcquisitionKind kind_;
    const NetworkSurrogate* surrogate_ = nullptr;
    const gp::GaussianProcess* blackbox_ = nullptr;
    MetricTarget target_;
    AcquisitionSpec spec_;
    SampleBank bank_;
    Eigen::Index dim_ = 0;
    Eigen::Index T_ = 0;
    double best_observed_ = 0.0;
    Eigen::MatrixXd m1_, m2_;  // per-node inner sample moments, T x 4
    Eigen::VectorXd x_star_;
    double u_star_ = 0.0;
    bool prepared_ = false;
    std::optional<Eigen::MatrixXd> domain_;
};

}  // namespace epicalib
