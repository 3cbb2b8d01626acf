#include "wmbench/distort.hpp"

#include <algorithm>
#include <cmath>

#include "wmbench/error.hpp"

namespace wmbench {

DistortionSettings DistortionSettings::none() {
    DistortionSettings s;
    s.blur = s.noise = s.color = s.warp = s.rescale = false;
    return s;
}

DistortionSettings DistortionSettings::noise_only(double sigma) {
    auto s = none();
    s.noise = true;
    s.noise_min = s.noise_max = sigma;
    s.probability = 1.0;
    return s;
}

DistortionPlan sample_distortion(Rng& rng, const DistortionSettings& s, int height, int width) {
    std::uniform_real_distribution<double> u(0.0, 1.0);
    DistortionPlan p;
    // Draw every random number unconditionally so plans stay aligned across settings.
    const double r_blur = u(rng), r_noise = u(rng), r_color = u(rng), r_warp = u(rng), r_scale = u(rng);
    const double v_blur = u(rng), v_noise = u(rng), v_b = u(rng), v_c = u(rng), v_tx = u(rng), v_ty = u(rng),
                 v_scale = u(rng);
    p.noise_seed = rng();

    if (s.blur && r_blur < s.probability) {
        const int lo = s.blur_min | 1;
        const int hi = std::max(lo, s.blur_max | 1);
        const int choices = (hi - lo) / 2 + 1;
        p.blur_size = lo + 2 * std::min(choices - 1, static_cast<int>(v_blur * choices));
        p.blur_sigma = p.blur_size / 6.0;
    }
    if (s.warp && r_warp < s.probability) {
        p.warp = true;
        p.tx = (2.0 * v_tx - 1.0) * s.max_translate * width;
        p.ty = (2.0 * v_ty - 1.0) * s.max_translate * height;
    }
    if (s.rescale && r_scale < s.probability) {
        const double f = s.min_scale + (1.0 - s.min_scale) * v_scale;
        p.rescale_h = std::max(1, static_cast<int>(std::lround(f * height)));
        p.rescale_w = std::max(1, static_cast<int>(std::lround(f * width)));
        if (p.rescale_h == height && p.rescale_w == width) p.rescale_h = p.rescale_w = 0;
    }
    if (s.color && r_color < s.probability) {
        p.brightness = (2.0 * v_b - 1.0) * s.brightness;
        p.contrast = 1.0 + (2.0 * v_c - 1.0) * s.contrast;
    }
    if (s.noise && r_noise < s.probability) p.noise_sigma = s.noise_min + (s.noise_max - s.noise_min) * v_noise;
    return p;
}

namespace {

// Sparse 1-D linear map: out[o] = sum_k w_k * in[idx_k].
struct AxisOp {
    int in = 0;
    int out = 0;
    std::vector<std::vector<std::pair<int, float>>> taps;
};

int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

AxisOp gaussian_axis(int n, int size, double sigma) {
    AxisOp op{n, n, {}};
    std::vector<double> g(size);
    const double c = (size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < size; ++i) total += g[i] = std::exp(-(i - c) * (i - c) / (2 * sigma * sigma));
    const int anchor = (size - 1) / 2;
    op.taps.resize(n);
    for (int o = 0; o < n; ++o)
        for (int i = 0; i < size; ++i)
            op.taps[o].emplace_back(reflect_index(o - i + anchor, n), static_cast<float>(g[i] / total));
    return op;
}

AxisOp shift_axis(int n, double shift) {
    AxisOp op{n, n, {}};
    op.taps.resize(n);
    for (int o = 0; o < n; ++o) {
        const double src = std::clamp(o - shift, 0.0, static_cast<double>(n - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, n - 1);
        const auto f = static_cast<float>(src - i0);
        op.taps[o] = {{i0, 1.0f - f}, {i1, f}};
    }
    return op;
}

AxisOp resize_axis(int in, int out) {
    AxisOp op{in, out, {}};
    op.taps.resize(out);
    const double scale = static_cast<double>(in) / out;
    for (int o = 0; o < out; ++o) {
        const double src = std::clamp((o + 0.5) * scale - 0.5, 0.0, static_cast<double>(in - 1));
        const int i0 = static_cast<int>(std::floor(src));
        const int i1 = std::min(i0 + 1, in - 1);
        const auto f = static_cast<float>(src - i0);
        op.taps[o] = {{i0, 1.0f - f}, {i1, f}};
    }
    return op;
}

// Planes are (channels × h × w); `horizontal` selects the axis.
std::vector<float> apply_axis(const std::vector<float>& src, int ch, int h, int w, const AxisOp& op, bool horizontal,
                              bool adjoint) {
    const int oh = horizontal ? h : (adjoint ? op.in : op.out);
    const int ow = horizontal ? (adjoint ? op.in : op.out) : w;
    std::vector<float> dst(static_cast<std::size_t>(ch) * oh * ow, 0.0f);
    for (int c = 0; c < ch; ++c) {
        const float* s = src.data() + static_cast<std::size_t>(c) * h * w;
        float* d = dst.data() + static_cast<std::size_t>(c) * oh * ow;
        if (horizontal) {
            for (int y = 0; y < h; ++y) {
                const float* srow = s + static_cast<std::size_t>(y) * w;
                float* drow = d + static_cast<std::size_t>(y) * ow;
                for (int o = 0; o < op.out; ++o)
                    for (const auto& [idx, wt] : op.taps[o]) {
                        if (adjoint)
                            drow[idx] += wt * srow[o];
                        else
                            drow[o] += wt * srow[idx];
                    }
            }
        } else {
            for (int o = 0; o < op.out; ++o)
                for (const auto& [idx, wt] : op.taps[o]) {
                    const int from = adjoint ? o : idx;
                    const int to = adjoint ? idx : o;
                    const float* srow = s + static_cast<std::size_t>(from) * w;
                    float* drow = d + static_cast<std::size_t>(to) * ow;
                    for (int x = 0; x < w; ++x) drow[x] += wt * srow[x];
                }
        }
    }
    return dst;
}

struct Stage {
    AxisOp op;
    bool horizontal;
};

std::vector<Stage> linear_stages(const DistortionPlan& p, int h, int w) {
    std::vector<Stage> stages;
    if (p.blur_size > 1) {
        stages.push_back({gaussian_axis(w, p.blur_size, p.blur_sigma), true});
        stages.push_back({gaussian_axis(h, p.blur_size, p.blur_sigma), false});
    }
    if (p.warp) {
        stages.push_back({shift_axis(w, p.tx), true});
        stages.push_back({shift_axis(h, p.ty), false});
    }
    if (p.rescale_h > 0) {
        stages.push_back({resize_axis(w, p.rescale_w), true});
        stages.push_back({resize_axis(h, p.rescale_h), false});
        stages.push_back({resize_axis(p.rescale_w, w), true});
        stages.push_back({resize_axis(p.rescale_h, h), false});
    }
    return stages;
}

}  // namespace

nn::Tensor distort_forward(const nn::Tensor& x, std::span<const DistortionPlan> plans) {
    require(static_cast<int>(plans.size()) == x.n, "one distortion plan per sample required");
    nn::Tensor y(x.n, x.c, x.h, x.w);
    for (int b = 0; b < x.n; ++b) {
        const auto& p = plans[static_cast<std::size_t>(b)];
        std::vector<float> cur(x.sample(b), x.sample(b) + x.sample_size());
        int ch = x.h, cw = x.w;
        for (const auto& st : linear_stages(p, x.h, x.w)) {
            cur = apply_axis(cur, x.c, ch, cw, st.op, st.horizontal, false);
            if (st.horizontal)
                cw = st.op.out;
            else
                ch = st.op.out;
        }
        const auto contrast = static_cast<float>(p.contrast);
        const auto offset = static_cast<float>(0.5 - 0.5 * p.contrast + p.brightness);
        for (auto& v : cur) v = v * contrast + offset;
        if (p.noise_sigma > 0.0) {
            Rng nrng(p.noise_seed);
            std::normal_distribution<float> nd(0.0f, static_cast<float>(p.noise_sigma));
            for (auto& v : cur) v += nd(nrng);
        }
        std::copy(cur.begin(), cur.end(), y.sample(b));
    }
    return y;
}

nn::Tensor distort_adjoint(const nn::Tensor& dy, std::span<const DistortionPlan> plans) {
    require(static_cast<int>(plans.size()) == dy.n, "one distortion plan per sample required");
    nn::Tensor dx(dy.n, dy.c, dy.h, dy.w);
    for (int b = 0; b < dy.n; ++b) {
        const auto& p = plans[static_cast<std::size_t>(b)];
        std::vector<float> cur(dy.sample(b), dy.sample(b) + dy.sample_size());
        const auto contrast = static_cast<float>(p.contrast);
        for (auto& v : cur) v *= contrast;
        auto stages = linear_stages(p, dy.h, dy.w);
        // Track the spatial size entering each stage so the adjoint can walk back.
        std::vector<std::pair<int, int>> sizes;
        int ch = dy.h, cw = dy.w;
        for (const auto& st : stages) {
            sizes.emplace_back(ch, cw);
            if (st.horizontal)
                cw = st.op.out;
            else
                ch = st.op.out;
        }
        for (int i = static_cast<int>(stages.size()) - 1; i >= 0; --i) {
            const auto& st = stages[static_cast<std::size_t>(i)];
            const int oh = st.horizontal ? sizes[i].first : st.op.out;
            const int ow = st.horizontal ? st.op.out : sizes[i].second;
            cur = apply_axis(cur, dy.c, oh, ow, st.op, st.horizontal, true);
        }
        std::copy(cur.begin(), cur.end(), dx.sample(b));
    }
    return dx;
}

Image distort(const Image& image, Rng& rng, const DistortionSettings& settings) {
    const auto plan = sample_distortion(rng, settings, image.height(), image.width());
    const auto t = distort_forward(nn::image_to_tensor(image), std::span<const DistortionPlan>(&plan, 1));
    return nn::tensor_to_image(t);
}

}  // namespace wmbench
