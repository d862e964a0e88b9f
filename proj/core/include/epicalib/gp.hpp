#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <optional>
#include <vector>

namespace epicalib::gp {

/// Matérn-5/2 correlation as a function of the scaled distance.
double matern52(double scaled_distance);

/// Hyperparameters of one output, in raw input/output units.
struct KernelHyperparams {
    Eigen::VectorXd lengthscales;
    double signal_variance = 1.0;
    double mean_const = 0.0;
    double noise_jitter = 1e-8;
};

/// Hyperparameters in normalized coordinates: inputs mapped to the unit box,
/// targets standardized per output. Pooled fits share one of these.
struct NormalizedHyper {
    Eigen::VectorXd lengthscales;
    double signal_variance = 1.0;
    double mean = 0.0;
    double rel_jitter = 1e-8;  // noise variance / signal variance
};

struct InputScaling {
    Eigen::VectorXd lower;
    Eigen::VectorXd width;

    static InputScaling identity(Eigen::Index dim);
    /// Data range per column; zero-width columns get width 1.
    static InputScaling from_data(const Eigen::MatrixXd& inputs);
};

/// Per-output affine standardization y = shift + scale * y_std.
/// A zero scale marks a degenerate (constant) output.
struct OutputScaling {
    Eigen::VectorXd shift;
    Eigen::VectorXd scale;

    static OutputScaling identity(Eigen::Index outputs);
    static OutputScaling standardize(const Eigen::MatrixXd& targets);
    bool degenerate(Eigen::Index output) const { return scale(output) == 0.0; }
};

struct FitOptions {
    int restarts = 8;
    std::uint64_t seed = 0;
    int max_iter = 60;
    double min_jitter = 1e-8;
    double max_jitter = 1e-2;
    /// Normalized log-lengthscales used as the first start.
    std::optional<Eigen::VectorXd> warm_start;
};

/// Search box for the normalized hyperparameters.
inline constexpr double kMinLengthscale = 0.05;
inline constexpr double kMaxLengthscale = 10.0;
inline constexpr double kMinSignalSd = 0.05;
inline constexpr double kMaxSignalSd = 20.0;

/// One dataset of a pooled likelihood: unit-box inputs with one or more
/// standardized target columns sharing those inputs.
struct PooledDataset {
    Eigen::MatrixXd inputs;
    Eigen::MatrixXd targets;
};

struct PooledFit {
    NormalizedHyper hyper;
    double log_likelihood = 0.0;
    bool degenerate = false;
};

/// Maximizes the product likelihood of all datasets under shared normalized
/// hyperparameters. Lengthscales are searched by multi-start projected BFGS
/// in log space; the constant mean and signal variance are profiled out.
PooledFit fit_pooled(const std::vector<PooledDataset>& sets, Eigen::Index dim, const FitOptions& opts);

/// Exact log marginal likelihood of single-output data under raw hyperparameters.
double log_marginal_likelihood(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets,
                               const KernelHyperparams& hyper);

struct Prediction {
    double mean = 0.0;
    double variance = 0.0;  // latent (noise-free) variance
};

struct PredictionGrad {
    double mean = 0.0;
    double variance = 0.0;
    Eigen::VectorXd mean_grad;
    Eigen::VectorXd variance_grad;
};

/// Correlation-space quantities of one query, shared by every output.
struct QueryTerms {
    Eigen::VectorXd z;   // scaled query
    Eigen::VectorXd r;   // correlation with each training input
    Eigen::VectorXd v;   // L^{-1} r
    double var_norm = 1.0;  // 1 - v.v, clamped at 0
    bool with_grad = false;
    Eigen::MatrixXd dr;  // n x d, derivative of r w.r.t. the raw query
    Eigen::VectorXd a;   // C^{-1} r
};

/// A hypothetical observation location, cached for lazy conditioning.
struct ConditioningPoint {
    Eigen::VectorXd query;
    Eigen::VectorXd z;
    Eigen::MatrixXd dr;  // derivative of r(q*) w.r.t. q*
    Eigen::VectorXd w;   // L^{-1} r(q*)
    Eigen::VectorXd b;   // C^{-1} r(q*)
    double var_norm = 1.0;
    double denom = 1.0;  // var_norm + rel_jitter
};

/// Exact GP regression with a Matérn-5/2 ARD kernel and constant mean.
///
/// Several outputs may share the training inputs; they share the normalized
/// lengthscales and relative jitter but carry their own standardization, so
/// one factorization serves all of them.
class GaussianProcess {
public:
    GaussianProcess() = default;

    /// Builds and factorizes. The jitter ladder doubles hyper.rel_jitter on
    /// factorization failure up to max_jitter, then throws FactorizationFailure.
    GaussianProcess(Eigen::MatrixXd inputs, Eigen::MatrixXd targets, InputScaling in, OutputScaling out,
                    NormalizedHyper hyper, double max_jitter = 1e-2);

    /// Single output with raw hyperparameters and no normalization.
    static GaussianProcess with_hyperparams(Eigen::MatrixXd inputs, Eigen::VectorXd targets,
                                            const KernelHyperparams& hyper);

    /// Standardizes, fits by maximum likelihood and factorizes. Input
    /// normalization uses `box` when given, the data range otherwise.
    static GaussianProcess fit(const Eigen::MatrixXd& inputs, const Eigen::MatrixXd& targets,
                               const FitOptions& opts, std::optional<InputScaling> box = std::nullopt);

    Eigen::Index size() const { return inputs_.rows(); }
    Eigen::Index dim() const { return in_.lower.size(); }
    Eigen::Index outputs() const { return out_.shift.size(); }

    KernelHyperparams hyperparams(Eigen::Index output = 0) const;
    const NormalizedHyper& normalized_hyper() const { return hyper_; }
    const InputScaling& input_scaling() const { return in_; }
    const OutputScaling& output_scaling() const { return out_; }
    bool degenerate(Eigen::Index output = 0) const { return out_.degenerate(output); }
    const Eigen::MatrixXd& inputs() const { return inputs_; }
    const Eigen::MatrixXd& targets() const { return targets_; }

    Prediction predict(const Eigen::VectorXd& query, Eigen::Index output = 0) const;
    PredictionGrad predict_with_grad(const Eigen::VectorXd& query, Eigen::Index output = 0) const;

    /// mean + sqrt(variance) * epsilon, with its query gradient when requested.
    double sample_reparam(const Eigen::VectorXd& query, double epsilon, Eigen::Index output = 0,
                          Eigen::VectorXd* grad = nullptr) const;

    /// Returns a new process conditioned on one extra observation (one target
    /// per output) under frozen hyperparameters and standardization.
    GaussianProcess fantasize(const Eigen::VectorXd& query, const Eigen::VectorXd& targets_row) const;

    // Lower-level access used by the network and acquisition code.

    void query_terms(const Eigen::VectorXd& query, bool with_grad, QueryTerms& out) const;
    /// Fills `r` (and `dr` if non-null, derivative w.r.t. the raw query) from
    /// a scaled query z = (q - lower) / raw lengthscale.
    void correlations(const Eigen::VectorXd& scaled_query, Eigen::VectorXd& r, Eigen::MatrixXd* dr) const;
    void finish_terms(QueryTerms& t) const;
    double standardized_mean(const QueryTerms& t, Eigen::Index output) const;
    Eigen::VectorXd standardized_mean_grad(const QueryTerms& t, Eigen::Index output) const;
    /// Raw mean and variance from standardized quantities.
    double raw_mean(double std_mean, Eigen::Index output) const {
        return out_.shift(output) + out_.scale(output) * std_mean;
    }
    double raw_variance_factor(Eigen::Index output) const {
        return out_.scale(output) * out_.scale(output) * hyper_.signal_variance;
    }

    ConditioningPoint condition_at(const Eigen::VectorXd& query) const;
    /// Normalized posterior cross-covariance c(q, q*) = r(q,q*) - v(q).w(q*).
    double cross_correlation(const QueryTerms& t, const ConditioningPoint& c, Eigen::VectorXd* grad_q) const;
    /// Gradient of c(q, q*) with respect to q*.
    Eigen::VectorXd cross_correlation_grad_star(const QueryTerms& t, const ConditioningPoint& c) const;
    /// Gradient of var_norm(q*) with respect to q*.
    Eigen::VectorXd var_norm_grad(const QueryTerms& star_terms) const;

    Eigen::VectorXd scale_query(const Eigen::VectorXd& query) const;
    void scale_query(const Eigen::VectorXd& query, Eigen::VectorXd& z) const;
    const Eigen::VectorXd& inverse_lengthscales() const { return inv_ls_; }
    const Eigen::MatrixXd& scaled_inputs() const { return scaled_; }
    const Eigen::MatrixXd& alpha() const { return alpha_; }
    const Eigen::MatrixXd& cholesky() const { return chol_; }

private:
    void factorize(double max_jitter);
    void solve_lower(Eigen::VectorXd& x) const;
    void solve_upper(Eigen::VectorXd& x) const;

    Eigen::MatrixXd inputs_;
    Eigen::MatrixXd targets_;
    InputScaling in_;
    OutputScaling out_;
    NormalizedHyper hyper_;

    Eigen::VectorXd inv_ls_;   // 1 / (width * lengthscale), raw units
    Eigen::MatrixXd scaled_;   // (X - lower) .* inv_ls_
    Eigen::MatrixXd chol_;     // lower Cholesky factor of R + rho I
    Eigen::MatrixXd alpha_;    // C^{-1} (Y_std - mean)
};

using SurrogateNode = GaussianProcess;

struct MleResult {
    KernelHyperparams hyper;
    double log_likelihood = 0.0;
    bool degenerate = false;
};

/// Maximum-likelihood hyperparameters of a single-output dataset.
MleResult fit_mle(const Eigen::MatrixXd& inputs, const Eigen::VectorXd& targets, int restarts,
                  std::uint64_t seed);

}  // namespace epicalib::gp
