#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "wmbench/error.hpp"
#include "wmbench/remover.hpp"

using namespace wmbench;

namespace {

RemoverArch small_arch(int res = 16) {
    RemoverArch a;
    a.resolution = res;
    a.c1 = 4;
    a.c2 = 6;
    a.c3 = 6;
    return a;
}

StegaParams tiny_stega64(std::uint64_t seed) {
    StegaArch a;
    a.resolution = 64;
    a.bits = 8;
    a.enc_c1 = 4;
    a.enc_c2 = 4;
    a.enc_c3 = 4;
    a.decoder_convs = {{4, 3, 2}, {4, 3, 2}};
    a.decoder_hidden = 8;
    auto p = StegaParams::create(a, seed);
    Rng rng(seed);
    for (auto& [name, param] : p.encoder.params())
        for (auto& v : param->value.data) v += std::normal_distribution<float>(0.0f, 0.02f)(rng);
    return p;
}

}  // namespace

TEST_CASE("remover loss conventions") {
    Image a(8, 8, 3, 0.5f), b = a;
    std::vector<Image> out{a}, tgt{b};
    CHECK(remover_loss(out, tgt) == 0.0);
    b.at(2, 3, 1) = 0.6f;
    tgt = {b};
    CHECK(remover_loss(out, tgt) == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(remover_loss_per_element(out, tgt) == doctest::Approx(0.01 / 192).epsilon(1e-6));

    Rng rng(1);
    std::vector<Image> xs, ys;
    for (int i = 0; i < 4; ++i) {
        xs.push_back(gen::random_image(rng, 8, 8));
        ys.push_back(gen::random_image(rng, 8, 8));
    }
    double total = 0.0;
    for (int i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < xs[i].size(); ++j) total += std::pow(double(xs[i].pixels()[j]) - ys[i].pixels()[j], 2);
    CHECK(std::abs(remover_loss(xs, ys) - total / 4) < 1e-9);
    CHECK(std::abs(remover_loss_per_element(xs, ys) - total / (4 * 192)) < 1e-9);
    CHECK(remover_loss(xs, ys) >= 0.0);
    std::vector<Image> three(xs.begin(), xs.begin() + 3);
    CHECK_THROWS_AS(remover_loss(three, ys), Error);
    std::vector<Image> wrong{gen::random_image(rng, 9, 8)};
    std::vector<Image> one{xs[0]};
    CHECK_THROWS_AS(remover_loss(wrong, one), Error);
}

TEST_CASE("untrained remover is the identity") {
    const auto params = RemoverParams::create(small_arch(), 3);
    Rng rng(2);
    const auto img = gen::random_image(rng, 16, 16);
    CHECK(remove(img, params) == img);
    std::vector<Image> imgs{img, gen::random_image(rng, 16, 16)};
    const auto batch = remove_batch(imgs, params);
    CHECK(batch[1] == imgs[1]);
    CHECK_THROWS_AS(remove(gen::random_image(rng, 8, 8), params), Error);
}

TEST_CASE("checkpoint round trip") {
    auto params = RemoverParams::create(small_arch(), 4);
    Rng rng(5);
    for (auto& [name, p] : params.net.params())
        for (auto& v : p->value.data) v += std::normal_distribution<float>(0.0f, 0.05f)(rng);
    const auto path = std::filesystem::temp_directory_path() / "wmbench_remover_test.wmck";
    params.save(path);
    const auto back = RemoverParams::load(path);
    CHECK(back.arch == params.arch);
    const auto img = gen::random_image(rng, 16, 16);
    CHECK(remove(img, back) == remove(img, params));
    CHECK_THROWS_AS(StegaParams::load(path), Error);
}

TEST_CASE("smoothed_non_increasing") {
    CHECK(smoothed_non_increasing({5, 4, 3, 2, 1}));
    CHECK(smoothed_non_increasing({5, 3, 3.5, 2, 1.8, 1.9, 1.0}));
    CHECK_FALSE(smoothed_non_increasing({1, 2, 3, 4}));
    CHECK(smoothed_non_increasing({1.0}));
}

TEST_CASE("training on identical pairs stays at zero") {
    Rng rng(6);
    std::vector<RemoverPair> pairs;
    for (int i = 0; i < 8; ++i) {
        const auto img = gen::random_image(rng, 16, 16);
        pairs.push_back({img, img});
    }
    RemoverTrainConfig cfg;
    cfg.arch = small_arch();
    cfg.epochs = 2;
    cfg.batch_size = 4;
    const auto res = train_remover(pairs, pairs, cfg);
    for (const auto& h : res.history) {
        CHECK(h.train_loss < 1e-9);
        CHECK(h.val_loss < 1e-9);
    }
    CHECK_THROWS_AS(train_remover({}, pairs, cfg), Error);
}

TEST_CASE("training reduces loss and is reproducible") {
    Rng rng(7);
    std::vector<RemoverPair> train, val;
    for (int i = 0; i < 40; ++i) {
        const auto target = gen::random_image(rng, 16, 16);
        auto input = target;
        for (int y = 0; y < 16; ++y)
            for (int x = 0; x < 16; ++x) input.at(y, x, 0) = std::clamp(input.at(y, x, 0) + ((x + y) % 2 ? 0.05f : -0.05f), 0.0f, 1.0f);
        (i < 32 ? train : val).push_back({input, target});
    }
    RemoverTrainConfig cfg;
    cfg.arch = small_arch();
    cfg.epochs = 6;
    cfg.batch_size = 8;
    cfg.learning_rate = 3e-3;
    const auto a = train_remover(train, val, cfg), b = train_remover(train, val, cfg);
    REQUIRE(a.history.size() == 6u);
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].val_loss == b.history[i].val_loss);
    CHECK(a.history.back().val_loss < a.history.front().val_loss);
    for (const auto& h : a.history) CHECK(h.val_loss_per_element == doctest::Approx(h.val_loss / 768.0).epsilon(1e-9));
}

TEST_CASE("stacked pipeline plumbing") {
    ToyGenerator gen;
    Rng rng(7);
    const auto key = make_key(gen.latent_shape(), 10, 0, rng);
    const auto stega = tiny_stega64(8);
    const auto msg = pair_message(5, 8);
    CHECK(pair_message(5, 8) == msg);
    const auto imgs = stacked_embed(gen, key, "", 5, msg, stega);
    CHECK(imgs.tr == tr_generate(gen, key, "", 5).image);
    CHECK(imgs.tr_ss == stega_encode(imgs.tr, msg, stega).encoded);
    CHECK_FALSE(imgs.tr_ss == imgs.tr);

    const auto pairs = make_remover_pairs(gen, key, stega, 5, 2);
    CHECK(pairs[0].input == imgs.tr_ss);
    CHECK(pairs[0].target == imgs.tr);

    // Identity remover: Tree-Ring is read from the input itself, StegaStamp
    // from the input before removal.
    const auto remover = RemoverParams::create(small_arch(64), 1);
    const auto dec = stacked_decode(imgs.tr_ss, key, gen, stega, remover, TreeRingConfig{});
    CHECK(dec.stega.logits == stega_decode(imgs.tr_ss, stega).logits);
    CHECK(dec.treering.distance == tr_detect(gen, imgs.tr_ss, key, TreeRingConfig{}).distance);
    CHECK(tr_detect(gen, imgs.tr, key, TreeRingConfig{}).detected);
}
