#include <doctest.h>

#include <cmath>

#include "oracles.hpp"
#include "wmbench/attacks.hpp"
#include "wmbench/dataset.hpp"
#include "wmbench/error.hpp"
#include "wmbench/saliency.hpp"

using namespace wmbench;

namespace {

double mean_distortion(const std::vector<Image>& imgs, const RegenConfig& cfg, const RegenerationBackend& backend) {
    double total = 0.0;
    for (std::size_t i = 0; i < imgs.size(); ++i) {
        auto c = cfg;
        c.seed = derive_seed({99, i});
        total += l2_distance(rinse(imgs[i], c, backend), imgs[i]);
    }
    return total / static_cast<double>(imgs.size());
}

StegaParams small_stega() {
    StegaArch a;
    a.resolution = 32;
    a.bits = 8;
    a.decoder_convs = {{8, 3, 2}, {8, 3, 2}};
    a.decoder_hidden = 16;
    return StegaParams::create(a, 12);
}

}  // namespace

TEST_CASE("fixed rotation and blur attacks") {
    Rng rng(1);
    const auto img = gen::random_image(rng, 32, 32);
    CHECK(attack_rotation(img, 0.0) == img);
    CHECK(attack_rotation(img) == rotate(img, 75.0));
    Image constant(32, 32, 3, 0.6f);
    for (float v : attack_blur(constant).pixels()) CHECK(std::abs(v - 0.6f) < 1e-6f);
    CHECK(attack_blur(img) == blur(img, gaussian_kernel(8, 8.0 / 3.0)));
}

TEST_CASE("regeneration notation") {
    const auto c = RegenConfig::parse("2x20");
    CHECK(c.iterations == 2);
    CHECK(*c.strength == 20.0);
    CHECK(c.notation() == "2x20");
    for (const char* s : {"1x60", "4x0.5", "10x3"}) CHECK(RegenConfig::parse(s).notation() == s);
    for (const char* s : {"x20", "2x", "0x20", "2y20", "2x-1", "ax3"}) CHECK_THROWS_AS(RegenConfig::parse(s), Error);
}

TEST_CASE("regeneration and rinse") {
    const auto backend = make_regeneration_backend("toy");
    CHECK(backend->sigma_for_strength(20.0) == doctest::Approx(0.2));
    const auto imgs = procedural_corpus(5, 100, 64);

    RegenConfig zero;
    zero.sigma = 0.0;
    for (int i = 0; i < 10; ++i) {
        const auto out = regeneration(imgs[i], zero, *backend);
        for (std::size_t j = 0; j < out.size(); ++j) CHECK(std::abs(out.pixels()[j] - imgs[i].pixels()[j]) < 1e-5f);
    }

    RegenConfig one;
    one.sigma = 0.3;
    one.seed = 42;
    CHECK(rinse(imgs[0], one, *backend) == regeneration(imgs[0], one, *backend));
    CHECK(regeneration(imgs[0], one, *backend) == regeneration(imgs[0], one, *backend));
    auto other = one;
    other.seed = 43;
    CHECK_FALSE(regeneration(imgs[0], one, *backend) == regeneration(imgs[0], other, *backend));

    double prev = -1.0;
    for (double s : {0.0, 0.1, 0.2, 0.4}) {
        RegenConfig c;
        c.sigma = s;
        const double d = mean_distortion(imgs, c, *backend);
        CHECK(d >= prev);
        prev = d;
    }
    prev = -1.0;
    for (int n : {1, 2, 4}) {
        RegenConfig c;
        c.sigma = 0.2;
        c.iterations = n;
        const double d = mean_distortion(imgs, c, *backend);
        CHECK(d >= prev);
        prev = d;
    }

    RegenConfig both;
    both.sigma = 0.1;
    both.strength = 10.0;
    CHECK_THROWS_AS(regeneration(imgs[0], both, *backend), Error);
    try {
        regeneration(Image(32, 32, 3, 0.5f), one, *backend);
        FAIL("expected attack-failed");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::AttackFailed);
    }
    CHECK_THROWS_AS(make_regeneration_backend("diffusion-adapter"), Error);
}

TEST_CASE("lba anchors") {
    const auto stega = small_stega();
    Rng rng(3);
    const auto img = gen::random_image(rng, 32, 32);
    for (int k : {5, 11, 31}) {
        LBAConfig c;
        c.percentile = 0.0;
        c.kernel = k;
        const auto out = lba(img, stega, c);
        CHECK(out.image == blur(img, gaussian_kernel(k, k / 3.0)));
        CHECK(out.mask.coverage() == 1.0);
    }
    for (double p : {0.0, 25.0, 50.0, 75.0}) {
        LBAConfig c;
        c.percentile = p;
        c.kernel = 1;
        CHECK(lba(img, stega, c).image == img);
    }
    LBAConfig c;
    c.percentile = 50.0;
    c.kernel = 11;
    const auto out = lba(img, stega, c);
    const auto hm = gradcam(stega, img);
    CHECK(out.heatmap.values == hm.values);
    CHECK(out.mask.bits == percentile_threshold(hm, 50.0).bits);
    CHECK(out.image == lba_from_heatmap(img, hm, c).image);
    for (int y = 0; y < 32; ++y)
        for (int x = 0; x < 32; ++x)
            if (!out.mask.at(y, x))
                for (int ch = 0; ch < 3; ++ch) CHECK(out.image.at(y, x, ch) == img.at(y, x, ch));
    c.percentile = 100.0;
    CHECK_THROWS_AS(lba(img, stega, c), Error);
}

TEST_CASE("randomized mask matches the budget") {
    Rng rng(4);
    std::uniform_int_distribution<int> dim(8, 48);
    std::uniform_real_distribution<double> pct(0.0, 99.0);
    for (int t = 0; t < 40; ++t) {
        const int h = dim(rng), w = dim(rng);
        const double p = pct(rng);
        const auto img = gen::random_image(rng, h, w);
        LBAConfig c;
        c.percentile = p;
        c.kernel = std::min({5, h, w});
        const auto out = randomized_mask_attack(img, c, 1000 + t);
        CHECK(std::abs(out.mask.coverage() - (100.0 - p) / 100.0) <= 1.0 / (h * w) + 1e-12);
        CHECK(out.mask.count() == mask_budget(h, w, p));
        CHECK(randomized_mask_attack(img, c, 1000 + t).image == out.image);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x)
                if (!out.mask.at(y, x))
                    for (int ch = 0; ch < 3; ++ch) CHECK(out.image.at(y, x, ch) == img.at(y, x, ch));
    }
    const auto m1 = random_mask(16, 16, 100, 1), m2 = random_mask(16, 16, 100, 2);
    CHECK(m1.count() == 100u);
    CHECK(m1.bits != m2.bits);
    CHECK_THROWS_AS(random_mask(4, 4, 17, 1), Error);
}
