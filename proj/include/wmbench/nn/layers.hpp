#pragma once

#include <string>
#include <vector>

#include "wmbench/nn/tensor.hpp"
#include "wmbench/rng.hpp"

namespace wmbench::nn {

// Layers hold parameters only. Activations are passed back into backward()
// by the caller, so forward passes are const and safe to share across threads.
// backward(..., accumulate = true) adds into Param::grad and is for the
// single trainer that owns the network.

class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_channels, int out_channels, int kernel, int stride = 1);

    int in_channels() const { return in_; }
    int out_channels() const { return out_; }
    int kernel() const { return k_; }
    int stride() const { return stride_; }
    int padding() const { return k_ / 2; }
    int output_size(int input) const { return (input + 2 * padding() - k_) / stride_ + 1; }

    void init_he(Rng& rng);
    void init_zero();

    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& dy, bool accumulate) const;

    Param weight;  // out × (in·k·k)
    Param bias;    // out

private:
    int in_ = 0, out_ = 0, k_ = 1, stride_ = 1;
};

class Dense {
public:
    Dense() = default;
    Dense(int in_features, int out_features);

    int in_features() const { return in_; }
    int out_features() const { return out_; }

    void init_he(Rng& rng, double gain = 2.0);
    void init_zero();

    /// Accepts any tensor with n samples; each sample is flattened.
    Tensor forward(const Tensor& x) const;
    Tensor backward(const Tensor& x, const Tensor& dy, bool accumulate) const;

    Param weight;  // out × in
    Param bias;

private:
    int in_ = 0, out_ = 0;
};

Tensor relu(const Tensor& x);
/// `y` is the relu output.
Tensor relu_backward(const Tensor& y, const Tensor& dy);

Tensor upsample_nearest(const Tensor& x, int factor);
Tensor upsample_nearest_backward(const Tensor& dy, int factor);

/// Reshape without copying semantics change (sample layout preserved).
Tensor reshape(const Tensor& x, int c, int h, int w);

/// Bilinear sampling of x on the affine grid given by theta (n×6, row-major
/// 2×3 matrices in normalized [-1,1] coordinates, align_corners = false,
/// zero padding).
Tensor affine_grid_sample(const Tensor& x, const Tensor& theta);
void affine_grid_sample_backward(const Tensor& x, const Tensor& theta, const Tensor& dy, Tensor& dx, Tensor& dtheta);

/// Bilinear resize of every plane (align_corners = false). Linear in x.
Tensor resize_bilinear(const Tensor& x, int out_h, int out_w);
Tensor resize_bilinear_adjoint(const Tensor& dy, int in_h, int in_w);

class Adam {
public:
    Adam(std::vector<Param*> params, double lr, double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }
    void zero_grad();
    /// Clips the global gradient norm to `max_norm` (if > 0) and applies one step.
    void step(double max_norm = 0.0);

private:
    std::vector<Param*> params_;
    std::vector<std::vector<float>> m_, v_;
    double lr_, b1_, b2_, eps_;
    long t_ = 0;
};

}  // namespace wmbench::nn
