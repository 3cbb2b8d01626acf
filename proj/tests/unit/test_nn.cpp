#include <doctest.h>

#include <cmath>
#include <functional>

#include "oracles.hpp"
#include "wmbench/distort.hpp"
#include "wmbench/features.hpp"
#include "wmbench/nn/layers.hpp"

using namespace wmbench;
using nn::Tensor;

namespace {

Tensor random_tensor(Rng& rng, int n, int c, int h, int w, double scale = 1.0) {
    std::normal_distribution<float> nd(0.0f, static_cast<float>(scale));
    Tensor t(n, c, h, w);
    for (auto& v : t.data) v = nd(rng);
    return t;
}

double dot(const Tensor& a, const Tensor& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += static_cast<double>(a.data[i]) * b.data[i];
    return s;
}

// Central differences of f(x) = <g, forward(x)> against the analytic
// backward at a handful of coordinates.
void check_input_gradient(const std::function<Tensor(const Tensor&)>& forward, Tensor x, const Tensor& analytic,
                          const Tensor& g, Rng& rng, double tol) {
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (int t = 0; t < 12; ++t) {
        const auto i = pick(rng);
        const float saved = x.data[i];
        const float h = 1e-2f;
        x.data[i] = saved + h;
        const double up = dot(g, forward(x));
        x.data[i] = saved - h;
        const double down = dot(g, forward(x));
        x.data[i] = saved;
        const double fd = (up - down) / (2.0 * h);
        CHECK(std::abs(fd - analytic.data[i]) <= tol * std::max(1.0, std::abs(fd)));
    }
}

}  // namespace

TEST_CASE("conv2d backward matches finite differences") {
    Rng rng(1);
    for (auto [k, stride] : {std::pair{3, 1}, std::pair{3, 2}, std::pair{1, 1}, std::pair{5, 2}}) {
        nn::Conv2d conv(3, 4, k, stride);
        conv.init_he(rng);
        for (auto& v : conv.bias.value.data) v = 0.1f;
        const auto x = random_tensor(rng, 2, 3, 9, 8);
        const auto y = conv.forward(x);
        CHECK(y.h == conv.output_size(9));
        const auto g = random_tensor(rng, y.n, y.c, y.h, y.w);
        conv.weight.zero_grad();
        const auto dx = conv.backward(x, g, true);
        check_input_gradient([&](const Tensor& in) { return conv.forward(in); }, x, dx, g, rng, 2e-3);
        // Weight gradient at one coordinate.
        const float saved = conv.weight.value.data[5];
        conv.weight.value.data[5] = saved + 1e-2f;
        const double up = dot(g, conv.forward(x));
        conv.weight.value.data[5] = saved - 1e-2f;
        const double down = dot(g, conv.forward(x));
        conv.weight.value.data[5] = saved;
        CHECK((up - down) / 2e-2 == doctest::Approx(conv.weight.grad.data[5]).epsilon(2e-3));
    }
}

TEST_CASE("dense and relu backward") {
    Rng rng(2);
    nn::Dense fc(12, 5);
    fc.init_he(rng);
    const auto x = random_tensor(rng, 3, 3, 2, 2);
    const auto g = random_tensor(rng, 3, 5, 1, 1);
    const auto dx = fc.backward(x, g, false);
    check_input_gradient([&](const Tensor& in) { return fc.forward(in); }, x, dx, g, rng, 2e-3);

    const auto y = nn::relu(x);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == std::max(0.0f, x.data[i]));
    const auto dr = nn::relu_backward(y, g.size() == y.size() ? g : Tensor(y.n, y.c, y.h, y.w, 1.0f));
    for (std::size_t i = 0; i < y.size(); ++i) CHECK(dr.data[i] == (y.data[i] > 0 ? 1.0f : 0.0f));
}

TEST_CASE("linear operators satisfy the adjoint identity") {
    Rng rng(3);
    const auto x = random_tensor(rng, 2, 3, 8, 8);
    {
        const auto up = nn::upsample_nearest(x, 2);
        const auto y = random_tensor(rng, up.n, up.c, up.h, up.w);
        CHECK(dot(up, y) == doctest::Approx(dot(x, nn::upsample_nearest_backward(y, 2))).epsilon(1e-5));
    }
    for (auto [oh, ow] : {std::pair{16, 16}, std::pair{5, 11}}) {
        const auto r = nn::resize_bilinear(x, oh, ow);
        const auto y = random_tensor(rng, r.n, r.c, r.h, r.w);
        CHECK(dot(r, y) == doctest::Approx(dot(x, nn::resize_bilinear_adjoint(y, 8, 8))).epsilon(1e-5));
    }
    DistortionSettings s;
    s.noise = false;
    s.color = false;
    s.probability = 1.0;
    for (int t = 0; t < 10; ++t) {
        std::vector<DistortionPlan> plans{sample_distortion(rng, s, 8, 8), sample_distortion(rng, s, 8, 8)};
        const auto fx = distort_forward(x, plans);
        const auto y = random_tensor(rng, fx.n, fx.c, fx.h, fx.w);
        CHECK(dot(fx, y) == doctest::Approx(dot(x, distort_adjoint(y, plans))).epsilon(1e-5));
    }
}

TEST_CASE("affine grid sample: identity and gradients") {
    Rng rng(4);
    const auto x = random_tensor(rng, 1, 2, 6, 7);
    Tensor theta(1, 6, 1, 1);
    theta.data = {1, 0, 0, 0, 1, 0};
    const auto y = nn::affine_grid_sample(x, theta);
    for (std::size_t i = 0; i < x.size(); ++i) CHECK(y.data[i] == doctest::Approx(x.data[i]).epsilon(1e-5));

    theta.data = {0.93f, 0.07f, 0.041f, -0.08f, 1.1f, -0.03f};  // no sample lands exactly on a pixel
    const auto g = random_tensor(rng, 1, 2, 6, 7);
    Tensor dx, dtheta;
    nn::affine_grid_sample_backward(x, theta, g, dx, dtheta);
    check_input_gradient([&](const Tensor& in) { return nn::affine_grid_sample(in, theta); }, x, dx, g, rng, 2e-3);
    for (int i = 0; i < 6; ++i) {
        Tensor tp = theta, tm = theta;
        tp.data[i] += 1e-3f;
        tm.data[i] -= 1e-3f;
        const double fd = (dot(g, nn::affine_grid_sample(x, tp)) - dot(g, nn::affine_grid_sample(x, tm))) / 2e-3;
        CHECK(std::abs(fd - dtheta.data[i]) < 2e-2 * std::max(1.0, std::abs(fd)));
    }
}

TEST_CASE("adam reduces a quadratic") {
    nn::Param p(Tensor(1, 4, 1, 1, 3.0f));
    nn::Adam opt({&p}, 0.1);
    for (int i = 0; i < 200; ++i) {
        opt.zero_grad();
        for (std::size_t j = 0; j < p.value.size(); ++j) p.grad.data[j] = 2.0f * p.value.data[j];
        opt.step();
    }
    for (float v : p.value.data) CHECK(std::abs(v) < 0.05f);
}

TEST_CASE("distortions") {
    Rng rng(5);
    const auto img = gen::random_image(rng, 32, 32);
    Rng a(9), b(9), c(9);
    CHECK(distort(img, c, DistortionSettings::none()) == img);
    CHECK(distort(img, a, DistortionSettings{}) == distort(img, b, DistortionSettings{}));

    Image mid(100, 100, 1, 0.5f);
    Rng n(10);
    const auto noisy = distort(mid, n, DistortionSettings::noise_only(0.02));
    double sq = 0.0;
    for (float v : noisy.pixels()) sq += (v - 0.5) * (v - 0.5);
    CHECK(std::abs(std::sqrt(sq / 1e4) - 0.02) < 0.002);

    DistortionSettings s;
    s.probability = 1.0;
    for (int t = 0; t < 50; ++t) {
        const auto p = sample_distortion(rng, s, 64, 64);
        CHECK(p.blur_size >= 3);
        CHECK(p.blur_size <= 7);
        CHECK(std::abs(p.tx) <= 0.02 * 64);
        CHECK(p.noise_sigma <= 0.02);
        CHECK(std::abs(p.brightness) <= 0.1);
        if (p.rescale_h) CHECK(p.rescale_h >= std::lround(0.8 * 64));
    }
}

TEST_CASE("perceptual distance gradient") {
    Rng rng(6);
    const auto& net = default_perceptual_net();
    const auto a = random_tensor(rng, 1, 3, 16, 16, 0.3), b = random_tensor(rng, 1, 3, 16, 16, 0.3);
    CHECK(perceptual_distance(net, a, a) == 0.0);
    Tensor grad;
    perceptual_distance(net, a, b, &grad);
    auto x = a;
    std::uniform_int_distribution<std::size_t> pick(0, x.size() - 1);
    for (int t = 0; t < 8; ++t) {
        const auto i = pick(rng);
        const float s = x.data[i];
        x.data[i] = s + 1e-3f;
        const double up = perceptual_distance(net, x, b);
        x.data[i] = s - 1e-3f;
        const double down = perceptual_distance(net, x, b);
        x.data[i] = s;
        const double fd = (up - down) / (static_cast<double>(s + 1e-3f) - static_cast<double>(s - 1e-3f));
        CHECK(std::abs(fd - grad.data[i]) <= 2e-3 * std::max(1e-3, std::abs(fd)) + 1e-6);
    }
}
