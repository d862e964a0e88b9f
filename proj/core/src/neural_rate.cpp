#include "epicalib/neural_rate.hpp"

#include "epicalib/errors.hpp"

#include <array>
#include <cmath>
#include <random>

namespace epicalib {
namespace {

std::vector<int> layer_widths() {
    std::vector<int> widths{RateNetwork::kInputs};
    for (int i = 0; i < RateNetwork::kLatentLayers + 1; ++i) widths.push_back(RateNetwork::kHidden);
    widths.push_back(1);
    return widths;
}

double sigmoid(double v) { return 1.0 / (1.0 + std::exp(-v)); }

}  // namespace

RateNetwork::RateNetwork() {
    const auto widths = layer_widths();
    for (std::size_t l = 0; l + 1 < widths.size(); ++l) {
        layers_.push_back({Eigen::MatrixXd::Zero(widths[l + 1], widths[l]),
                           Eigen::VectorXd::Zero(widths[l + 1])});
    }
}

RateNetwork RateNetwork::random(std::uint64_t seed) {
    RateNetwork net;
    std::mt19937_64 rng(seed);
    for (auto& layer : net.layers_) {
        const double bound = 1.0 / std::sqrt(static_cast<double>(layer.weight.cols()));
        std::uniform_real_distribution<double> unif(-bound, bound);
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = unif(rng);
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = unif(rng);
    }
    return net;
}

RateNetwork RateNetwork::from_parameters(const Eigen::VectorXd& params) {
    RateNetwork net;
    net.set_parameters(params);
    return net;
}

Eigen::Index RateNetwork::parameter_count() const {
    Eigen::Index count = 0;
    for (const auto& layer : layers_) count += layer.weight.size() + layer.bias.size();
    return count;
}

Eigen::VectorXd RateNetwork::parameters() const {
    Eigen::VectorXd out(parameter_count());
    Eigen::Index k = 0;
    for (const auto& layer : layers_) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) out(k++) = layer.weight(r, c);
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) out(k++) = layer.bias(r);
    }
    return out;
}

void RateNetwork::set_parameters(const Eigen::VectorXd& params) {
    if (params.size() != parameter_count())
        throw DomainError("rate network expects " + std::to_string(parameter_count()) +
                          " parameters, got " + std::to_string(params.size()));
    Eigen::Index k = 0;
    for (auto& layer : layers_) {
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r)
            for (Eigen::Index c = 0; c < layer.weight.cols(); ++c) layer.weight(r, c) = params(k++);
        for (Eigen::Index r = 0; r < layer.bias.size(); ++r) layer.bias(r) = params(k++);
    }
}

double RateNetwork::forward(const Eigen::Vector3d& input) const {
    Buffer h = input;
    Buffer a;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
        a.noalias() = layers_[l].weight * h;
        a += layers_[l].bias;
        if (l + 1 == layers_.size()) return sigmoid(a(0));
        h = a.array().tanh();
    }
    return 0.0;
}

Eigen::Vector3d RateNetwork::backward(const Eigen::Vector3d& input, double out_bar,
                                      Eigen::Ref<Eigen::VectorXd> param_grad) const {
    // Forward with cached activations.
    std::array<Buffer, kLatentLayers + 3> acts;
    const std::size_t depth = layers_.size();
    acts[0] = input;
    double out = 0.0;
    Buffer a;
    for (std::size_t l = 0; l < depth; ++l) {
        a.noalias() = layers_[l].weight * acts[l];
        a += layers_[l].bias;
        if (l + 1 < depth)
            acts[l + 1] = a.array().tanh();
        else
            out = sigmoid(a(0));
    }

    Eigen::Index off = parameter_count();
    Buffer delta(1);
    delta(0) = out_bar * out * (1.0 - out);
    Buffer back;
    for (std::size_t li = depth; li-- > 0;) {
        const auto& layer = layers_[li];
        const Buffer& in = acts[li];
        off -= layer.weight.size() + layer.bias.size();
        Eigen::Index k = off;
        for (Eigen::Index r = 0; r < layer.weight.rows(); ++r) {
            param_grad.segment(k, layer.weight.cols()) += delta(r) * in;
            k += layer.weight.cols();
        }
        param_grad.segment(k, layer.bias.size()) += delta;
        back.noalias() = layer.weight.transpose() * delta;
        if (li == 0) return back;
        delta = back.array() * (1.0 - in.array().square());
    }
    return Eigen::Vector3d::Zero();
}

}  // namespace epicalib
