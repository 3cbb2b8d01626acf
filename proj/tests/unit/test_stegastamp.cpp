#include <doctest.h>

#include <cmath>
#include <filesystem>

#include "oracles.hpp"
#include "wmbench/dataset.hpp"
#include "wmbench/error.hpp"
#include "wmbench/features.hpp"
#include "wmbench/metrics.hpp"
#include "wmbench/stegastamp.hpp"

using namespace wmbench;

namespace {

StegaArch small_arch() {
    StegaArch a;
    a.resolution = 16;
    a.bits = 8;
    a.enc_c1 = 4;
    a.enc_c2 = 4;
    a.enc_c3 = 4;
    a.message_grid = 4;
    a.decoder_convs = {{4, 3, 2}, {4, 3, 2}};
    a.decoder_hidden = 8;
    return a;
}

}  // namespace

TEST_CASE("BitMessage hex round trip") {
    const auto m = BitMessage::from_hex("a5", 8);
    CHECK(m.bits == std::vector<std::uint8_t>{1, 0, 1, 0, 0, 1, 0, 1});
    CHECK(m.to_hex() == "a5");
    Rng rng(1);
    for (int k : {1, 7, 32, 100}) {
        const auto r = BitMessage::random(k, rng);
        CHECK(BitMessage::from_hex(r.to_hex(), k) == r);
    }
    CHECK_THROWS_AS(BitMessage::from_hex("zz", 8), Error);
    CHECK_THROWS_AS(BitMessage::from_hex("a5a5", 8), Error);
}

TEST_CASE("message_loss") {
    Rng rng(2);
    const auto m = BitMessage::random(32, rng);
    std::vector<double> confident(32), zeros(32, 0.0);
    for (int i = 0; i < 32; ++i) confident[i] = m.bits[i] ? 50.0 : -50.0;
    CHECK(message_loss(confident, m) < 1e-8);
    CHECK(message_loss(zeros, m) == doctest::Approx(32 * std::log(2.0)).epsilon(1e-12));

    std::normal_distribution<double> nd(0.0, 4.0);
    for (int t = 0; t < 100; ++t) {
        const auto msg = BitMessage::random(16, rng);
        std::vector<double> logits(16);
        for (auto& l : logits) l = nd(rng);
        CHECK(std::abs(message_loss(logits, msg) - oracle::bce_sum(logits, msg.bits)) < 1e-9);

        const auto grad = message_loss_grad(logits, msg);
        for (int i = 0; i < 16; ++i) {
            auto up = logits, down = logits;
            const double h = 1e-5;
            up[i] += h;
            down[i] -= h;
            const double fd = (message_loss(up, msg) - message_loss(down, msg)) / (2 * h);
            CHECK(std::abs(fd - grad[i]) <= 1e-5 * std::max(1.0, std::abs(fd)));
        }
    }
    // Extreme logits stay finite.
    std::vector<double> extreme(4, 1e4);
    CHECK(std::isfinite(message_loss(extreme, BitMessage({0, 0, 0, 0}))));
}

TEST_CASE("total_loss composition") {
    Rng rng(3);
    const auto img = gen::random_image(rng, 16, 16), enc = gen::random_image(rng, 16, 16);
    const auto msg = BitMessage::random(8, rng);
    std::vector<double> logits{0.3, -1.2, 2.0, 0.1, -0.4, 0.9, -2.2, 1.5};
    StegaTrainConfig cfg;
    cfg.lambda_r = 0.0;
    cfg.lambda_p = 0.0;
    cfg.lambda_m = 1.0;
    CHECK(total_loss(img, enc, logits, msg, cfg).total == message_loss(logits, msg));

    const auto same = total_loss(img, img, logits, msg, StegaTrainConfig{});
    CHECK(same.residual == 0.0);
    CHECK(std::abs(same.perceptual) < 1e-9);

    cfg.lambda_r = 3.5;
    cfg.lambda_p = 0.7;
    cfg.lambda_m = 1.3;
    const auto c = total_loss(img, enc, logits, msg, cfg);
    double sq = 0.0;
    for (std::size_t i = 0; i < img.size(); ++i) sq += std::pow(double(enc.pixels()[i]) - img.pixels()[i], 2);
    const double lr = sq / img.size();
    const double lp = perceptual_distance(default_perceptual_net(), nn::image_to_tensor(enc), nn::image_to_tensor(img));
    const double lm = oracle::bce_sum(logits, msg.bits);
    CHECK(std::abs(c.total - (3.5 * lr + 0.7 * lp + 1.3 * lm)) < 1e-9);

    // Exactly linear in each weight.
    auto cfg2 = cfg;
    cfg2.lambda_r *= 2.0;
    CHECK(std::abs(total_loss(img, enc, logits, msg, cfg2).total - c.total - 3.5 * c.residual) < 1e-9);
}

TEST_CASE("loss weight schedule") {
    StegaTrainConfig cfg;
    cfg.steps = 1000;
    cfg.lambda_r = 10;
    cfg.lambda_p = 4;
    CHECK(loss_weights_at(cfg, 0).r == 0.0);
    CHECK(loss_weights_at(cfg, 249).p == 0.0);
    CHECK(loss_weights_at(cfg, 375).r == doctest::Approx(5.0));
    CHECK(loss_weights_at(cfg, 999).r == 10.0);
    CHECK(loss_weights_at(cfg, 999).m == 1.0);
}

TEST_CASE("untrained encoder is the identity and inference is deterministic") {
    const auto params = StegaParams::create(small_arch(), 5);
    Rng rng(6);
    const auto img = gen::random_image(rng, 16, 16);
    const auto msg = BitMessage::random(8, rng);
    const auto enc = stega_encode(img, msg, params);
    CHECK(enc.encoded == img);
    for (double v : enc.residual.values) CHECK(v == 0.0);
    const auto d1 = stega_decode(img, params), d2 = stega_decode(img, params);
    CHECK(d1.logits == d2.logits);
    CHECK(d1.message == d2.message);
    for (int i = 0; i < 8; ++i) CHECK(d1.message.bits[i] == (d1.logits[i] >= 0.0 ? 1 : 0));

    CHECK_THROWS_AS(stega_encode(gen::random_image(rng, 8, 8), msg, params), Error);
    CHECK_THROWS_AS(stega_encode(img, BitMessage::random(9, rng), params), Error);
    CHECK_THROWS_AS(stega_decode(gen::random_image(rng, 8, 8), params), Error);
}

TEST_CASE("batched inference matches single calls") {
    auto params = StegaParams::create(small_arch(), 7);
    Rng rng(8);
    // Perturb the zero-initialized head so the encoder does something.
    for (auto& [name, p] : params.encoder.params())
        for (auto& v : p->value.data) v += std::normal_distribution<float>(0.0f, 0.05f)(rng);
    std::vector<Image> imgs;
    std::vector<BitMessage> msgs;
    for (int i = 0; i < 3; ++i) {
        imgs.push_back(gen::random_image(rng, 16, 16));
        msgs.push_back(BitMessage::random(8, rng));
    }
    const auto batch = stega_encode_batch(imgs, msgs, params);
    const auto dec = stega_decode_batch(batch, params);
    for (int i = 0; i < 3; ++i) {
        CHECK(batch[i] == stega_encode(imgs[i], msgs[i], params).encoded);
        CHECK(dec[i].logits == stega_decode(batch[i], params).logits);
    }
}

TEST_CASE("checkpoint round trip") {
    auto arch = small_arch();
    arch.spatial_transformer = true;
    auto params = StegaParams::create(arch, 9);
    const auto path = std::filesystem::temp_directory_path() / "wmbench_ss_test.wmck";
    params.save(path);
    const auto back = StegaParams::load(path);
    CHECK(back.arch == arch);
    CHECK(StegaArch::from_json(arch.to_json()) == arch);
    const auto pa = params.decoder.params();
    const auto pb = back.decoder.params();
    REQUIRE(pa.size() == pb.size());
    for (std::size_t i = 0; i < pa.size(); ++i) {
        CHECK(pa[i].first == pb[i].first);
        CHECK(pa[i].second->value == pb[i].second->value);
    }
    Rng rng(1);
    const auto img = gen::random_image(rng, 16, 16);
    CHECK(stega_decode(img, params).logits == stega_decode(img, back).logits);
}

TEST_CASE("short training run learns and is reproducible") {
    const auto corpus = procedural_corpus(3, 64, 16);
    StegaTrainConfig cfg;
    cfg.arch = small_arch();
    cfg.steps = 400;
    cfg.lambda_r = 8.0;
    cfg.lambda_p = 2.0;
    cfg.batch_size = 8;
    cfg.log_every = 50;
    cfg.learning_rate = 3e-3;
    cfg.distortions = DistortionSettings::none();
    const auto source = [&](std::size_t i) { return corpus[i]; };
    const auto a = train_stegastamp(corpus.size(), source, cfg);
    const auto b = train_stegastamp(corpus.size(), source, cfg);
    REQUIRE(a.history.size() == b.history.size());
    for (std::size_t i = 0; i < a.history.size(); ++i) CHECK(a.history[i].loss.total == b.history[i].loss.total);
    CHECK(a.history.back().bit_accuracy > a.history.front().bit_accuracy);
    CHECK(a.history.back().bit_accuracy > 0.7);

    CHECK_THROWS_AS(train_stegastamp(0, source, cfg), Error);
    auto bad = cfg;
    bad.lambda_m = 0.0;
    CHECK_THROWS_AS(train_stegastamp(corpus.size(), source, bad), Error);
}

TEST_CASE("divergence is reported") {
    const auto corpus = procedural_corpus(3, 8, 16);
    StegaTrainConfig cfg;
    cfg.arch = small_arch();
    cfg.steps = 40;
    cfg.learning_rate = 1e12;
    cfg.grad_clip = 0.0;
    cfg.distortions = DistortionSettings::none();
    try {
        train_stegastamp(corpus.size(), [&](std::size_t i) { return corpus[i]; }, cfg);
        WARN("huge learning rate did not diverge");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::TrainingDiverged);
    }
}
