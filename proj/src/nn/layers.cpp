#include "wmbench/nn/layers.hpp"

#include <algorithm>
#include <cmath>

#include <Eigen/Dense>

#include "wmbench/error.hpp"

namespace wmbench::nn {

namespace {

using RowMat = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using ConstMapMat = Eigen::Map<const RowMat>;

// Fixed-order reductions: results must not depend on buffer alignment or batch size.
float dot(const float* a, const float* b, int n) {
    float acc[16] = {};
    int i = 0;
    for (; i + 16 <= n; i += 16)
        for (int l = 0; l < 16; ++l) acc[l] += a[i + l] * b[i + l];
    float total = 0.0f;
    for (int l = 0; l < 16; ++l) total += acc[l];
    for (; i < n; ++i) total += a[i] * b[i];
    return total;
}

float sum(const float* a, int n) {
    float acc[16] = {};
    int i = 0;
    for (; i + 16 <= n; i += 16)
        for (int l = 0; l < 16; ++l) acc[l] += a[i + l];
    float total = 0.0f;
    for (int l = 0; l < 16; ++l) total += acc[l];
    for (; i < n; ++i) total += a[i];
    return total;
}

// col has shape (C·k·k) × (oh·ow).
void im2col(const float* src, int ch, int h, int w, int k, int stride, int pad, int oh, int ow, float* col) {
    for (int c = 0; c < ch; ++c) {
        const float* plane = src + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                float* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y * stride - pad + ki;
                    float* out = row + static_cast<std::size_t>(y) * ow;
                    if (sy < 0 || sy >= h) {
                        std::fill(out, out + ow, 0.0f);
                        continue;
                    }
                    const float* in = plane + static_cast<std::size_t>(sy) * w;
                    if (stride == 1) {
                        for (int x = 0; x < ow; ++x) {
                            const int sx = x - pad + kj;
                            out[x] = (sx >= 0 && sx < w) ? in[sx] : 0.0f;
                        }
                    } else {
                        for (int x = 0; x < ow; ++x) {
                            const int sx = x * stride - pad + kj;
                            out[x] = (sx >= 0 && sx < w) ? in[sx] : 0.0f;
                        }
                    }
                }
            }
        }
    }
}

void col2im(const float* col, int ch, int h, int w, int k, int stride, int pad, int oh, int ow, float* dst) {
    std::fill(dst, dst + static_cast<std::size_t>(ch) * h * w, 0.0f);
    for (int c = 0; c < ch; ++c) {
        float* plane = dst + static_cast<std::size_t>(c) * h * w;
        for (int ki = 0; ki < k; ++ki) {
            for (int kj = 0; kj < k; ++kj) {
                const float* row = col + (static_cast<std::size_t>(c) * k * k + ki * k + kj) * oh * ow;
                for (int y = 0; y < oh; ++y) {
                    const int sy = y * stride - pad + ki;
                    if (sy < 0 || sy >= h) continue;
                    float* out = plane + static_cast<std::size_t>(sy) * w;
                    const float* in = row + static_cast<std::size_t>(y) * ow;
                    for (int x = 0; x < ow; ++x) {
                        const int sx = x * stride - pad + kj;
                        if (sx >= 0 && sx < w) out[sx] += in[x];
                    }
                }
            }
        }
    }
}

}  // namespace

Conv2d::Conv2d(int in_channels, int out_channels, int kernel, int stride)
    : weight(Tensor(out_channels, in_channels * kernel * kernel, 1, 1)),
      bias(Tensor(out_channels, 1, 1, 1)),
      in_(in_channels),
      out_(out_channels),
      k_(kernel),
      stride_(stride) {
    require(in_channels > 0 && out_channels > 0 && kernel > 0 && stride > 0, "invalid conv geometry");
}

void Conv2d::init_he(Rng& rng) {
    std::normal_distribution<float> dist(0.0f, std::sqrt(2.0f / static_cast<float>(in_ * k_ * k_)));
    for (auto& v : weight.value.data) v = dist(rng);
    bias.value.zero();
}

void Conv2d::init_zero() {
    weight.value.zero();
    bias.value.zero();
}

Tensor Conv2d::forward(const Tensor& x) const {
    require(x.c == in_, "conv input channel mismatch");
    const int oh = output_size(x.h);
    const int ow = output_size(x.w);
    Tensor y(x.n, out_, oh, ow);
    const int kk = in_ * k_ * k_;
    std::vector<float> col(static_cast<std::size_t>(kk) * oh * ow);
    ConstMapMat wmat(weight.value.data.data(), out_, kk);
    for (int b = 0; b < x.n; ++b) {
        im2col(x.sample(b), in_, x.h, x.w, k_, stride_, padding(), oh, ow, col.data());
        MapMat out(y.sample(b), out_, oh * ow);
        out.noalias() = wmat * ConstMapMat(col.data(), kk, oh * ow);
        for (int o = 0; o < out_; ++o) out.row(o).array() += bias.value.data[o];
    }
    return y;
}

Tensor Conv2d::backward(const Tensor& x, const Tensor& dy, bool accumulate) const {
    const int oh = dy.h;
    const int ow = dy.w;
    const int kk = in_ * k_ * k_;
    Tensor dx(x.n, x.c, x.h, x.w);
    std::vector<float> col(static_cast<std::size_t>(kk) * oh * ow);
    std::vector<float> dcol(col.size());
    ConstMapMat wmat(weight.value.data.data(), out_, kk);
    for (int b = 0; b < x.n; ++b) {
        ConstMapMat g(dy.sample(b), out_, oh * ow);
        if (accumulate) {
            im2col(x.sample(b), in_, x.h, x.w, k_, stride_, padding(), oh, ow, col.data());
            MapMat dw(weight.grad.data.data(), out_, kk);
            dw.noalias() += g * ConstMapMat(col.data(), kk, oh * ow).transpose();
            for (int o = 0; o < out_; ++o) bias.grad.data[o] += sum(dy.sample(b) + static_cast<std::size_t>(o) * oh * ow, oh * ow);
        }
        MapMat dc(dcol.data(), kk, oh * ow);
        dc.noalias() = wmat.transpose() * g;
        col2im(dcol.data(), in_, x.h, x.w, k_, stride_, padding(), oh, ow, dx.sample(b));
    }
    return dx;
}

Dense::Dense(int in_features, int out_features)
    : weight(Tensor(out_features, in_features, 1, 1)),
      bias(Tensor(out_features, 1, 1, 1)),
      in_(in_features),
      out_(out_features) {
    require(in_features > 0 && out_features > 0, "invalid dense geometry");
}

void Dense::init_he(Rng& rng, double gain) {
    std::normal_distribution<float> dist(0.0f, static_cast<float>(std::sqrt(gain / in_)));
    for (auto& v : weight.value.data) v = dist(rng);
    bias.value.zero();
}

void Dense::init_zero() {
    weight.value.zero();
    bias.value.zero();
}

Tensor Dense::forward(const Tensor& x) const {
    require(static_cast<int>(x.sample_size()) == in_, "dense input size mismatch");
    Tensor y(x.n, out_, 1, 1);
    for (int b = 0; b < x.n; ++b) {
        const float* xi = x.sample(b);
        for (int o = 0; o < out_; ++o)
            y.data[static_cast<std::size_t>(b) * out_ + o] =
                dot(xi, weight.value.data.data() + static_cast<std::size_t>(o) * in_, in_) + bias.value.data[o];
    }
    return y;
}

Tensor Dense::backward(const Tensor& x, const Tensor& dy, bool accumulate) const {
    Tensor dx(x.n, x.c, x.h, x.w);
    for (int b = 0; b < x.n; ++b) {
        const float* xi = x.sample(b);
        float* dxi = dx.sample(b);
        for (int o = 0; o < out_; ++o) {
            const float g = dy.data[static_cast<std::size_t>(b) * out_ + o];
            if (g == 0.0f) continue;
            const float* wrow = weight.value.data.data() + static_cast<std::size_t>(o) * in_;
            for (int i = 0; i < in_; ++i) dxi[i] += g * wrow[i];
            if (accumulate) {
                float* grow = weight.grad.data.data() + static_cast<std::size_t>(o) * in_;
                for (int i = 0; i < in_; ++i) grow[i] += g * xi[i];
                bias.grad.data[o] += g;
            }
        }
    }
    return dx;
}

Tensor relu(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.data) v = v > 0.0f ? v : 0.0f;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (std::size_t i = 0; i < dx.data.size(); ++i)
        if (!(y.data[i] > 0.0f)) dx.data[i] = 0.0f;
    return dx;
}

Tensor upsample_nearest(const Tensor& x, int factor) {
    Tensor y(x.n, x.c, x.h * factor, x.w * factor);
    for (int b = 0; b < x.n; ++b)
        for (int c = 0; c < x.c; ++c)
            for (int i = 0; i < y.h; ++i)
                for (int j = 0; j < y.w; ++j) y.at(b, c, i, j) = x.at(b, c, i / factor, j / factor);
    return y;
}

Tensor upsample_nearest_backward(const Tensor& dy, int factor) {
    Tensor dx(dy.n, dy.c, dy.h / factor, dy.w / factor);
    for (int b = 0; b < dy.n; ++b)
        for (int c = 0; c < dy.c; ++c)
            for (int i = 0; i < dy.h; ++i)
                for (int j = 0; j < dy.w; ++j) dx.at(b, c, i / factor, j / factor) += dy.at(b, c, i, j);
    return dx;
}

Tensor reshape(const Tensor& x, int c, int h, int w) {
    require(static_cast<std::size_t>(c) * h * w == x.sample_size(), "reshape size mismatch");
    Tensor y = x;
    y.c = c;
    y.h = h;
    y.w = w;
    return y;
}

namespace {

struct Tap {
    int i0, i1;
    float w0, w1;
};

std::vector<Tap> bilinear_taps(int in, int out) {
    std::vector<Tap> taps(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        double src = (o + 0.5) * scale - 0.5;
        src = std::clamp(src, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        const auto f = static_cast<float>(src - i0);
        taps[o] = {i0, i1, 1.0f - f, f};
    }
    return taps;
}

}  // namespace

Tensor resize_bilinear(const Tensor& x, int out_h, int out_w) {
    const auto ty = bilinear_taps(x.h, out_h);
    const auto tx = bilinear_taps(x.w, out_w);
    Tensor y(x.n, x.c, out_h, out_w);
    for (int b = 0; b < x.n; ++b)
        for (int c = 0; c < x.c; ++c)
            for (int i = 0; i < out_h; ++i) {
                const auto& a = ty[i];
                for (int j = 0; j < out_w; ++j) {
                    const auto& t = tx[j];
                    y.at(b, c, i, j) = a.w0 * (t.w0 * x.at(b, c, a.i0, t.i0) + t.w1 * x.at(b, c, a.i0, t.i1)) +
                                       a.w1 * (t.w0 * x.at(b, c, a.i1, t.i0) + t.w1 * x.at(b, c, a.i1, t.i1));
                }
            }
    return y;
}

Tensor resize_bilinear_adjoint(const Tensor& dy, int in_h, int in_w) {
    const auto ty = bilinear_taps(in_h, dy.h);
    const auto tx = bilinear_taps(in_w, dy.w);
    Tensor dx(dy.n, dy.c, in_h, in_w);
    for (int b = 0; b < dy.n; ++b)
        for (int c = 0; c < dy.c; ++c)
            for (int i = 0; i < dy.h; ++i) {
                const auto& a = ty[i];
                for (int j = 0; j < dy.w; ++j) {
                    const auto& t = tx[j];
                    const float g = dy.at(b, c, i, j);
                    dx.at(b, c, a.i0, t.i0) += a.w0 * t.w0 * g;
                    dx.at(b, c, a.i0, t.i1) += a.w0 * t.w1 * g;
                    dx.at(b, c, a.i1, t.i0) += a.w1 * t.w0 * g;
                    dx.at(b, c, a.i1, t.i1) += a.w1 * t.w1 * g;
                }
            }
    return dx;
}

namespace {

struct GridPoint {
    double px, py;  // source pixel coordinates
    double xt, yt;  // normalized target coordinates
};

GridPoint grid_point(const float* th, int i, int j, int h, int w) {
    const double xt = (2.0 * j + 1.0) / w - 1.0;
    const double yt = (2.0 * i + 1.0) / h - 1.0;
    const double xs = th[0] * xt + th[1] * yt + th[2];
    const double ys = th[3] * xt + th[4] * yt + th[5];
    return {((xs + 1.0) * w - 1.0) / 2.0, ((ys + 1.0) * h - 1.0) / 2.0, xt, yt};
}

}  // namespace

Tensor affine_grid_sample(const Tensor& x, const Tensor& theta) {
    require(theta.n == x.n && theta.sample_size() == 6, "theta must be n×6");
    Tensor y(x.n, x.c, x.h, x.w);
    for (int b = 0; b < x.n; ++b) {
        const float* th = theta.sample(b);
        for (int i = 0; i < x.h; ++i)
            for (int j = 0; j < x.w; ++j) {
                const auto g = grid_point(th, i, j, x.h, x.w);
                const int x0 = static_cast<int>(std::floor(g.px));
                const int y0 = static_cast<int>(std::floor(g.py));
                const double fx = g.px - x0;
                const double fy = g.py - y0;
                for (int c = 0; c < x.c; ++c) {
                    auto v = [&](int yy, int xx) -> double {
                        return (yy >= 0 && yy < x.h && xx >= 0 && xx < x.w) ? x.at(b, c, yy, xx) : 0.0;
                    };
                    y.at(b, c, i, j) = static_cast<float>((1 - fy) * ((1 - fx) * v(y0, x0) + fx * v(y0, x0 + 1)) +
                                                          fy * ((1 - fx) * v(y0 + 1, x0) + fx * v(y0 + 1, x0 + 1)));
                }
            }
    }
    return y;
}

void affine_grid_sample_backward(const Tensor& x, const Tensor& theta, const Tensor& dy, Tensor& dx, Tensor& dtheta) {
    dx = Tensor(x.n, x.c, x.h, x.w);
    dtheta = Tensor(theta.n, theta.c, theta.h, theta.w);
    for (int b = 0; b < x.n; ++b) {
        const float* th = theta.sample(b);
        float* dth = dtheta.sample(b);
        for (int i = 0; i < x.h; ++i)
            for (int j = 0; j < x.w; ++j) {
                const auto g = grid_point(th, i, j, x.h, x.w);
                const int x0 = static_cast<int>(std::floor(g.px));
                const int y0 = static_cast<int>(std::floor(g.py));
                const double fx = g.px - x0;
                const double fy = g.py - y0;
                double dpx = 0.0, dpy = 0.0;
                for (int c = 0; c < x.c; ++c) {
                    const double go = dy.at(b, c, i, j);
                    auto inside = [&](int yy, int xx) { return yy >= 0 && yy < x.h && xx >= 0 && xx < x.w; };
                    auto v = [&](int yy, int xx) -> double { return inside(yy, xx) ? x.at(b, c, yy, xx) : 0.0; };
                    auto scatter = [&](int yy, int xx, double wgt) {
                        if (inside(yy, xx)) dx.at(b, c, yy, xx) += static_cast<float>(wgt * go);
                    };
                    scatter(y0, x0, (1 - fy) * (1 - fx));
                    scatter(y0, x0 + 1, (1 - fy) * fx);
                    scatter(y0 + 1, x0, fy * (1 - fx));
                    scatter(y0 + 1, x0 + 1, fy * fx);
                    const double v00 = v(y0, x0), v01 = v(y0, x0 + 1), v10 = v(y0 + 1, x0), v11 = v(y0 + 1, x0 + 1);
                    dpx += go * ((1 - fy) * (v01 - v00) + fy * (v11 - v10));
                    dpy += go * ((1 - fx) * (v10 - v00) + fx * (v11 - v01));
                }
                const double dxs = dpx * x.w / 2.0;
                const double dys = dpy * x.h / 2.0;
                dth[0] += static_cast<float>(dxs * g.xt);
                dth[1] += static_cast<float>(dxs * g.yt);
                dth[2] += static_cast<float>(dxs);
                dth[3] += static_cast<float>(dys * g.xt);
                dth[4] += static_cast<float>(dys * g.yt);
                dth[5] += static_cast<float>(dys);
            }
    }
}

Adam::Adam(std::vector<Param*> params, double lr, double beta1, double beta2, double eps)
    : params_(std::move(params)), lr_(lr), b1_(beta1), b2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.emplace_back(p->value.size(), 0.0f);
        v_.emplace_back(p->value.size(), 0.0f);
    }
}

void Adam::zero_grad() {
    for (auto* p : params_) p->zero_grad();
}

void Adam::step(double max_norm) {
    double scale = 1.0;
    if (max_norm > 0.0) {
        double sq = 0.0;
        for (auto* p : params_)
            for (float g : p->grad.data) sq += static_cast<double>(g) * g;
        const double norm = std::sqrt(sq);
        if (norm > max_norm) scale = max_norm / norm;
    }
    ++t_;
    const double c1 = 1.0 - std::pow(b1_, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2_, static_cast<double>(t_));
    const auto step = static_cast<float>(lr_ * std::sqrt(c2) / c1);
    const auto b1 = static_cast<float>(b1_), b2 = static_cast<float>(b2_);
    const auto eps = static_cast<float>(eps_ * std::sqrt(c2));
    for (std::size_t k = 0; k < params_.size(); ++k) {
        auto& val = params_[k]->value.data;
        const auto& grad = params_[k]->grad.data;
        auto& m = m_[k];
        auto& v = v_[k];
        for (std::size_t i = 0; i < val.size(); ++i) {
            const float g = static_cast<float>(grad[i] * scale);
            m[i] = b1 * m[i] + (1.0f - b1) * g;
            v[i] = b2 * v[i] + (1.0f - b2) * g * g;
            val[i] -= step * m[i] / (std::sqrt(v[i]) + eps);
        }
    }
}

}  // namespace wmbench::nn
