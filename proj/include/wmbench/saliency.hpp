#pragma once

#include <span>
#include <string>
#include <vector>

#include "wmbench/image.hpp"
#include "wmbench/nn/tensor.hpp"
#include "wmbench/stegastamp.hpp"

namespace wmbench {

/// -1 selects the deepest conv layer.
constexpr int kLastConvLayer = -1;

/// Accepts "last-conv", "conv<i>" or a plain index.
int parse_layer(const std::string& name, const StegaParams& stega);

/// Activation of the target layer and the gradient of the target score
/// s = sum_i sign(2*b_i - 1) * logit_i with respect to it (b = decoded bits).
struct CamInputs {
    int layer = 0;
    nn::Tensor activation;  // n×C×h×w
    nn::Tensor gradient;
    std::vector<float> signs;  // n×k
};

CamInputs gradcam_inputs(const StegaParams& stega, std::span<const Image> images, int layer = kLastConvLayer);

/// ReLU(sum_c mean(grad_c) * act_c), bilinear upsampling to height×width,
/// min-max normalization (constant maps become all zeros).
Heatmap cam_heatmap(const CamInputs& inputs, int sample, int height, int width);

Heatmap gradcam(const StegaParams& stega, const Image& image, int layer = kLastConvLayer);
std::vector<Heatmap> gradcam_batch(const StegaParams& stega, std::span<const Image> images,
                                   int layer = kLastConvLayer);

}  // namespace wmbench
