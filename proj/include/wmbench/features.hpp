#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "wmbench/nn/layers.hpp"

namespace wmbench {

/// Fixed, seeded, randomly initialized conv stack. Never trained; used as the
/// desk-scale perceptual distance and as the proxy-FID feature backend.
class FixedFeatureNet {
public:
    struct Stage {
        int channels;
        int stride;
    };

    FixedFeatureNet(std::uint64_t seed, std::vector<Stage> stages, int in_channels = 3);

    /// Post-ReLU activations of every stage.
    std::vector<nn::Tensor> forward(const nn::Tensor& x) const;
    /// Gradient w.r.t. the input given gradients on every stage output.
    nn::Tensor backward(const nn::Tensor& x, const std::vector<nn::Tensor>& acts,
                        const std::vector<nn::Tensor>& grads) const;

    std::uint64_t seed() const { return seed_; }

private:
    std::uint64_t seed_;
    std::vector<nn::Conv2d> convs_;
};

/// Feature distance used for the perceptual loss term:
///   sum over stages of mean squared activation difference.
/// Optionally returns d/d(a) in `grad_a`.
double perceptual_distance(const FixedFeatureNet& net, const nn::Tensor& a, const nn::Tensor& b,
                           nn::Tensor* grad_a = nullptr);

const FixedFeatureNet& default_perceptual_net();

}  // namespace wmbench
