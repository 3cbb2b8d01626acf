#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "wmbench/image.hpp"
#include "wmbench/nn/tensor.hpp"
#include "wmbench/rng.hpp"

namespace wmbench {

/// Perturbations the StegaStamp encoder/decoder are trained against. Each
/// enabled perturbation is applied independently with `probability`.
struct DistortionSettings {
    bool blur = true;
    int blur_min = 3;  // odd kernel sizes in [blur_min, blur_max], sigma = size/6
    int blur_max = 7;

    bool noise = true;
    double noise_min = 0.0;
    double noise_max = 0.02;

    bool color = true;
    double brightness = 0.10;  // additive, ± fraction of full range
    double contrast = 0.10;    // multiplicative about 0.5, ± fraction

    bool warp = true;
    double max_translate = 0.02;  // fraction of width/height

    bool rescale = true;
    double min_scale = 0.8;

    double probability = 0.5;

    static DistortionSettings none();
    static DistortionSettings noise_only(double sigma);
};

/// One concrete draw of the distortion pipeline for a single image.
struct DistortionPlan {
    int blur_size = 0;  // 0 = off
    double blur_sigma = 0.0;
    double tx = 0.0, ty = 0.0;  // pixels
    bool warp = false;
    int rescale_h = 0, rescale_w = 0;  // 0 = off
    double contrast = 1.0;
    double brightness = 0.0;
    double noise_sigma = 0.0;
    std::uint64_t noise_seed = 0;
};

DistortionPlan sample_distortion(Rng& rng, const DistortionSettings& settings, int height, int width);

/// Unclamped forward map on a batch; plans.size() == x.n. Linear except for
/// the additive offsets (brightness, noise).
nn::Tensor distort_forward(const nn::Tensor& x, std::span<const DistortionPlan> plans);
/// Adjoint of the linear part of distort_forward.
nn::Tensor distort_adjoint(const nn::Tensor& dy, std::span<const DistortionPlan> plans);

Image distort(const Image& image, Rng& rng, const DistortionSettings& settings);

}  // namespace wmbench
