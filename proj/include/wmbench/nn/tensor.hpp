#pragma once

#include <span>
#include <vector>

#include "wmbench/image.hpp"

namespace wmbench::nn {

/// Dense float tensor in N×C×H×W order. Fully connected activations use H = W = 1.
struct Tensor {
    int n = 0;
    int c = 0;
    int h = 0;
    int w = 0;
    std::vector<float> data;

    Tensor() = default;
    Tensor(int n_, int c_, int h_, int w_, float fill = 0.0f)
        : n(n_), c(c_), h(h_), w(w_), data(static_cast<std::size_t>(n_) * c_ * h_ * w_, fill) {}

    std::size_t size() const { return data.size(); }
    std::size_t sample_size() const { return static_cast<std::size_t>(c) * h * w; }
    std::size_t plane() const { return static_cast<std::size_t>(h) * w; }

    float* sample(int i) { return data.data() + i * sample_size(); }
    const float* sample(int i) const { return data.data() + i * sample_size(); }

    float& at(int b, int ch, int y, int x) {
        return data[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x];
    }
    float at(int b, int ch, int y, int x) const {
        return data[((static_cast<std::size_t>(b) * c + ch) * h + y) * w + x];
    }

    bool same_shape(const Tensor& o) const { return n == o.n && c == o.c && h == o.h && w == o.w; }
    void zero() { std::fill(data.begin(), data.end(), 0.0f); }

    friend bool operator==(const Tensor&, const Tensor&) = default;
};

/// Learnable parameter with its gradient accumulator.
struct Param {
    Tensor value;
    mutable Tensor grad;  // written only by the owning trainer

    explicit Param(Tensor v = {}) : value(std::move(v)), grad(value.n, value.c, value.h, value.w) {}
    void zero_grad() const { grad.zero(); }
};

Tensor images_to_tensor(std::span<const Image> images);
Tensor image_to_tensor(const Image& image);
/// Converts sample `index` back to an image, clamping into [0,1].
Image tensor_to_image(const Tensor& t, int index = 0);

Tensor concat_channels(const Tensor& a, const Tensor& b);
/// Inverse of concat_channels for gradients: first `channels_a` channels go to `a`.
void split_channels(const Tensor& t, int channels_a, Tensor& a, Tensor& b);

void add_inplace(Tensor& dst, const Tensor& src, float scale = 1.0f);

}  // namespace wmbench::nn
