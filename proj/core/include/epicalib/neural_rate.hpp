#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <vector>

namespace epicalib {

/// Fully connected rate network f_NN: R^3 -> (0, 1).
///
/// Layout is fixed: 3->20 tanh, three 20->20 tanh latent layers, 20->1
/// sigmoid. Inputs are population fractions ordered (I, S, R).
class RateNetwork {
public:
    struct Layer {
        Eigen::MatrixXd weight;  // out x in
        Eigen::VectorXd bias;
    };

    static constexpr int kInputs = 3;
    static constexpr int kHidden = 20;
    static constexpr int kLatentLayers = 3;

    RateNetwork();

    /// Uniform init in [-1/sqrt(fan_in), 1/sqrt(fan_in)] for weights and biases.
    static RateNetwork random(std::uint64_t seed);

    /// Parameters are packed layer by layer: weight (row-major), then bias.
    static RateNetwork from_parameters(const Eigen::VectorXd& params);

    Eigen::Index parameter_count() const;
    Eigen::VectorXd parameters() const;
    void set_parameters(const Eigen::VectorXd& params);

    double forward(const Eigen::Vector3d& input) const;

    /// Reverse pass for one evaluation. Adds out_bar * d f/d params into
    /// param_grad (packed like parameters()) and returns out_bar * d f/d input.
    Eigen::Vector3d backward(const Eigen::Vector3d& input, double out_bar,
                             Eigen::Ref<Eigen::VectorXd> param_grad) const;

    const std::vector<Layer>& layers() const { return layers_; }

private:
    using Buffer = Eigen::Matrix<double, Eigen::Dynamic, 1, 0, kHidden, 1>;
    std::vector<Layer> layers_;
};

}  // namespace epicalib
