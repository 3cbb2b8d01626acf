#include "wmbench/stegastamp.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>

#include "wmbench/array_io.hpp"
#include "wmbench/error.hpp"
#include "wmbench/features.hpp"

namespace wmbench {

BitMessage::BitMessage(std::vector<std::uint8_t> b) : bits(std::move(b)) {
    for (auto& v : bits) require(v == 0 || v == 1, "message bits must be 0 or 1");
}

BitMessage BitMessage::random(int k, Rng& rng) {
    require(k > 0, "message length must be positive");
    std::vector<std::uint8_t> bits(static_cast<std::size_t>(k));
    for (auto& b : bits) b = static_cast<std::uint8_t>(rng() >> 63);
    return BitMessage(std::move(bits));
}

BitMessage BitMessage::from_hex(const std::string& hex, int k) {
    require(k > 0, "message length must be positive");
    std::vector<std::uint8_t> bits;
    for (char ch : hex) {
        int v;
        if (ch >= '0' && ch <= '9')
            v = ch - '0';
        else if (ch >= 'a' && ch <= 'f')
            v = ch - 'a' + 10;
        else if (ch >= 'A' && ch <= 'F')
            v = ch - 'A' + 10;
        else
            fail(ErrorKind::InvalidArgument, std::string("invalid hex digit '") + ch + "'");
        for (int s = 3; s >= 0; --s) bits.push_back(static_cast<std::uint8_t>((v >> s) & 1));
    }
    require(static_cast<int>(bits.size()) >= k && static_cast<int>(bits.size()) < k + 4,
            "hex message must encode exactly " + std::to_string(k) + " bits");
    for (std::size_t i = static_cast<std::size_t>(k); i < bits.size(); ++i)
        require(bits[i] == 0, "hex message padding bits must be zero");
    bits.resize(static_cast<std::size_t>(k));
    return BitMessage(std::move(bits));
}

std::string BitMessage::to_hex() const {
    static constexpr char digits[] = "0123456789abcdef";
    std::string out;
    for (std::size_t i = 0; i < bits.size(); i += 4) {
        int v = 0;
        for (std::size_t j = 0; j < 4; ++j) v = (v << 1) | (i + j < bits.size() ? bits[i + j] : 0);
        out.push_back(digits[v]);
    }
    return out;
}

nlohmann::json StegaArch::to_json() const {
    nlohmann::json convs = nlohmann::json::array();
    for (const auto& c : decoder_convs) convs.push_back({c.channels, c.kernel, c.stride});
    return {{"resolution", resolution},
            {"bits", bits},
            {"enc_c1", enc_c1},
            {"enc_c2", enc_c2},
            {"enc_c3", enc_c3},
            {"message_grid", message_grid},
            {"decoder_convs", convs},
            {"decoder_hidden", decoder_hidden},
            {"spatial_transformer", spatial_transformer}};
}

StegaArch StegaArch::from_json(const nlohmann::json& j) {
    StegaArch a;
    a.resolution = j.at("resolution");
    a.bits = j.at("bits");
    a.enc_c1 = j.at("enc_c1");
    a.enc_c2 = j.at("enc_c2");
    a.enc_c3 = j.at("enc_c3");
    a.message_grid = j.at("message_grid");
    a.decoder_convs.clear();
    for (const auto& c : j.at("decoder_convs")) a.decoder_convs.push_back({c.at(0), c.at(1), c.at(2)});
    a.decoder_hidden = j.at("decoder_hidden");
    a.spatial_transformer = j.at("spatial_transformer");
    return a;
}

// ---------------------------------------------------------------------------
// Encoder

StegaEncoder::StegaEncoder(const StegaArch& arch, Rng& rng) : arch_(arch) {
    require(arch.resolution % 4 == 0, "encoder resolution must be divisible by 4");
    require(arch.message_grid > 0 && arch.resolution % arch.message_grid == 0,
            "message grid must divide the resolution");
    const int g = arch.message_grid;
    message_fc_ = nn::Dense(arch.bits, 3 * g * g);
    message_fc_.init_he(rng, 1.0);
    e1_ = nn::Conv2d(6, arch.enc_c1, 3, 1);
    e2_ = nn::Conv2d(arch.enc_c1, arch.enc_c2, 3, 2);
    e3_ = nn::Conv2d(arch.enc_c2, arch.enc_c3, 3, 2);
    mid_ = nn::Conv2d(arch.enc_c3, arch.enc_c3, 3, 1);
    d2_ = nn::Conv2d(arch.enc_c3 + arch.enc_c2, arch.enc_c2, 3, 1);
    d1_ = nn::Conv2d(arch.enc_c2 + arch.enc_c1, arch.enc_c1, 3, 1);
    out_ = nn::Conv2d(arch.enc_c1, 3, 1, 1);
    for (auto* c : {&e1_, &e2_, &e3_, &mid_, &d2_, &d1_}) c->init_he(rng);
    out_.init_zero();
}

EncoderTrace StegaEncoder::forward(const nn::Tensor& images, const nn::Tensor& messages) const {
    require(images.c == 3 && images.h == arch_.resolution && images.w == arch_.resolution,
            "encoder expects 3×" + std::to_string(arch_.resolution) + "² images");
    require(messages.n == images.n && static_cast<int>(messages.sample_size()) == arch_.bits,
            "encoder expects one " + std::to_string(arch_.bits) + "-bit message per image");
    EncoderTrace t;
    t.message_in = messages;
    for (auto& v : t.message_in.data) v = 2.0f * v - 1.0f;
    t.message_proj = message_fc_.forward(t.message_in);
    const int g = arch_.message_grid;
    t.message_map = nn::upsample_nearest(nn::reshape(t.message_proj, 3, g, g), arch_.resolution / g);
    nn::Tensor centered = images;
    for (auto& v : centered.data) v -= 0.5f;
    t.x0 = nn::concat_channels(centered, t.message_map);
    t.a1 = nn::relu(e1_.forward(t.x0));
    t.a2 = nn::relu(e2_.forward(t.a1));
    t.a3 = nn::relu(e3_.forward(t.a2));
    t.a4 = nn::relu(mid_.forward(t.a3));
    t.c2 = nn::concat_channels(nn::upsample_nearest(t.a4, 2), t.a2);
    t.a5 = nn::relu(d2_.forward(t.c2));
    t.c1 = nn::concat_channels(nn::upsample_nearest(t.a5, 2), t.a1);
    t.a6 = nn::relu(d1_.forward(t.c1));
    t.residual = out_.forward(t.a6);
    return t;
}

void StegaEncoder::backward(const EncoderTrace& t, const nn::Tensor& d_residual, bool accumulate) const {
    nn::Tensor g = out_.backward(t.a6, d_residual, accumulate);
    g = d1_.backward(t.c1, nn::relu_backward(t.a6, g), accumulate);
    nn::Tensor du1, da1_skip;
    nn::split_channels(g, arch_.enc_c2, du1, da1_skip);
    g = nn::upsample_nearest_backward(du1, 2);
    g = d2_.backward(t.c2, nn::relu_backward(t.a5, g), accumulate);
    nn::Tensor du2, da2_skip;
    nn::split_channels(g, arch_.enc_c3, du2, da2_skip);
    g = nn::upsample_nearest_backward(du2, 2);
    g = mid_.backward(t.a3, nn::relu_backward(t.a4, g), accumulate);
    g = e3_.backward(t.a2, nn::relu_backward(t.a3, g), accumulate);
    nn::add_inplace(g, da2_skip);
    g = e2_.backward(t.a1, nn::relu_backward(t.a2, g), accumulate);
    nn::add_inplace(g, da1_skip);
    g = e1_.backward(t.x0, nn::relu_backward(t.a1, g), accumulate);
    nn::Tensor dimg, dmap;
    nn::split_channels(g, 3, dimg, dmap);
    const int g_size = arch_.message_grid;
    nn::Tensor dproj = nn::upsample_nearest_backward(dmap, arch_.resolution / g_size);
    dproj = nn::reshape(dproj, 3 * g_size * g_size, 1, 1);
    message_fc_.backward(t.message_in, dproj, accumulate);
}

std::vector<std::pair<std::string, nn::Param*>> StegaEncoder::params() {
    std::vector<std::pair<std::string, nn::Param*>> out;
    out.emplace_back("encoder.message_fc.weight", &message_fc_.weight);
    out.emplace_back("encoder.message_fc.bias", &message_fc_.bias);
    const std::pair<const char*, nn::Conv2d*> convs[] = {{"e1", &e1_},   {"e2", &e2_}, {"e3", &e3_}, {"mid", &mid_},
                                                         {"d2", &d2_},   {"d1", &d1_}, {"out", &out_}};
    for (auto [name, c] : convs) {
        out.emplace_back(std::string("encoder.") + name + ".weight", &c->weight);
        out.emplace_back(std::string("encoder.") + name + ".bias", &c->bias);
    }
    return out;
}

std::vector<std::pair<std::string, const nn::Param*>> StegaEncoder::params() const {
    std::vector<std::pair<std::string, const nn::Param*>> out;
    for (auto& [n, p] : const_cast<StegaEncoder*>(this)->params()) out.emplace_back(n, p);
    return out;
}

// ---------------------------------------------------------------------------
// Decoder

StegaDecoder::StegaDecoder(const StegaArch& arch, Rng& rng) : arch_(arch) {
    require(!arch.decoder_convs.empty(), "decoder needs at least one conv layer");
    int ch = 3, size = arch.resolution;
    for (const auto& spec : arch.decoder_convs) {
        convs_.emplace_back(ch, spec.channels, spec.kernel, spec.stride);
        convs_.back().init_he(rng);
        size = convs_.back().output_size(size);
        ch = spec.channels;
    }
    const int flat = ch * size * size;
    if (arch.decoder_hidden > 0) {
        hidden_ = nn::Dense(flat, arch.decoder_hidden);
        hidden_.init_he(rng);
        output_ = nn::Dense(arch.decoder_hidden, arch.bits);
    } else {
        output_ = nn::Dense(flat, arch.bits);
    }
    output_.init_he(rng, 1.0);
    if (arch.spatial_transformer) {
        stn_c1_ = nn::Conv2d(3, 8, 3, 2);
        stn_c2_ = nn::Conv2d(8, 16, 3, 2);
        stn_c1_.init_he(rng);
        stn_c2_.init_he(rng);
        const int s = stn_c2_.output_size(stn_c1_.output_size(arch.resolution));
        stn_fc1_ = nn::Dense(16 * s * s, 32);
        stn_fc1_.init_he(rng);
        stn_fc2_ = nn::Dense(32, 6);
        stn_fc2_.init_zero();
        const float identity[6] = {1, 0, 0, 0, 1, 0};
        std::copy_n(identity, 6, stn_fc2_.bias.value.data.begin());
    }
}

DecoderTrace StegaDecoder::forward(const nn::Tensor& images) const {
    require(images.c == 3 && images.h == arch_.resolution && images.w == arch_.resolution,
            "decoder expects 3×" + std::to_string(arch_.resolution) + "² images");
    DecoderTrace t;
    t.input = images;
    for (auto& v : t.input.data) v -= 0.5f;
    if (arch_.spatial_transformer) {
        t.stn_a1 = nn::relu(stn_c1_.forward(t.input));
        t.stn_a2 = nn::relu(stn_c2_.forward(t.stn_a1));
        t.stn_h = nn::relu(stn_fc1_.forward(t.stn_a2));
        t.theta = stn_fc2_.forward(t.stn_h);
        t.aligned = nn::affine_grid_sample(t.input, t.theta);
    } else {
        t.aligned = t.input;
    }
    const nn::Tensor* cur = &t.aligned;
    for (const auto& conv : convs_) {
        t.conv_out.push_back(nn::relu(conv.forward(*cur)));
        cur = &t.conv_out.back();
    }
    if (arch_.decoder_hidden > 0) {
        t.hidden = nn::relu(hidden_.forward(*cur));
        t.logits = output_.forward(t.hidden);
    } else {
        t.logits = output_.forward(*cur);
    }
    return t;
}

nn::Tensor StegaDecoder::logits_from(int layer, const nn::Tensor& activation) const {
    require(layer >= 0 && layer < conv_layers(), "decoder layer index out of range");
    nn::Tensor cur = activation;
    for (std::size_t i = static_cast<std::size_t>(layer) + 1; i < convs_.size(); ++i) cur = nn::relu(convs_[i].forward(cur));
    if (arch_.decoder_hidden > 0) cur = nn::relu(hidden_.forward(cur));
    return output_.forward(cur);
}

nn::Tensor StegaDecoder::backward(const DecoderTrace& t, const nn::Tensor& d_logits, bool accumulate,
                                  std::vector<nn::Tensor>* conv_grads) const {
    nn::Tensor g;
    const auto& last = t.conv_out.back();
    if (arch_.decoder_hidden > 0) {
        g = output_.backward(t.hidden, d_logits, accumulate);
        g = hidden_.backward(last, nn::relu_backward(t.hidden, g), accumulate);
    } else {
        g = output_.backward(last, d_logits, accumulate);
    }
    g = nn::reshape(g, last.c, last.h, last.w);
    if (conv_grads) conv_grads->assign(convs_.size(), {});
    for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
        const auto idx = static_cast<std::size_t>(i);
        if (conv_grads) (*conv_grads)[idx] = g;
        const nn::Tensor& input = i == 0 ? t.aligned : t.conv_out[idx - 1];
        g = convs_[idx].backward(input, nn::relu_backward(t.conv_out[idx], g), accumulate);
    }
    if (!arch_.spatial_transformer) return g;
    nn::Tensor dx, dtheta;
    nn::affine_grid_sample_backward(t.input, t.theta, g, dx, dtheta);
    nn::Tensor gh = stn_fc2_.backward(t.stn_h, dtheta, accumulate);
    gh = stn_fc1_.backward(t.stn_a2, nn::relu_backward(t.stn_h, gh), accumulate);
    gh = nn::reshape(gh, t.stn_a2.c, t.stn_a2.h, t.stn_a2.w);
    gh = stn_c2_.backward(t.stn_a1, nn::relu_backward(t.stn_a2, gh), accumulate);
    gh = stn_c1_.backward(t.input, nn::relu_backward(t.stn_a1, gh), accumulate);
    nn::add_inplace(dx, gh);
    return dx;
}

std::vector<std::pair<std::string, nn::Param*>> StegaDecoder::params() {
    std::vector<std::pair<std::string, nn::Param*>> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
        out.emplace_back("decoder.conv" + std::to_string(i) + ".weight", &convs_[i].weight);
        out.emplace_back("decoder.conv" + std::to_string(i) + ".bias", &convs_[i].bias);
    }
    if (arch_.decoder_hidden > 0) {
        out.emplace_back("decoder.hidden.weight", &hidden_.weight);
        out.emplace_back("decoder.hidden.bias", &hidden_.bias);
    }
    out.emplace_back("decoder.output.weight", &output_.weight);
    out.emplace_back("decoder.output.bias", &output_.bias);
    if (arch_.spatial_transformer) {
        out.emplace_back("decoder.stn_c1.weight", &stn_c1_.weight);
        out.emplace_back("decoder.stn_c1.bias", &stn_c1_.bias);
        out.emplace_back("decoder.stn_c2.weight", &stn_c2_.weight);
        out.emplace_back("decoder.stn_c2.bias", &stn_c2_.bias);
        out.emplace_back("decoder.stn_fc1.weight", &stn_fc1_.weight);
        out.emplace_back("decoder.stn_fc1.bias", &stn_fc1_.bias);
        out.emplace_back("decoder.stn_fc2.weight", &stn_fc2_.weight);
        out.emplace_back("decoder.stn_fc2.bias", &stn_fc2_.bias);
    }
    return out;
}

std::vector<std::pair<std::string, const nn::Param*>> StegaDecoder::params() const {
    std::vector<std::pair<std::string, const nn::Param*>> out;
    for (auto& [n, p] : const_cast<StegaDecoder*>(this)->params()) out.emplace_back(n, p);
    return out;
}

// ---------------------------------------------------------------------------
// Parameters / checkpoints

StegaParams StegaParams::create(const StegaArch& arch, std::uint64_t seed) {
    Rng rng(seed);
    StegaParams p;
    p.arch = arch;
    p.encoder = StegaEncoder(arch, rng);
    p.decoder = StegaDecoder(arch, rng);
    return p;
}

namespace {

std::vector<std::uint32_t> dims_of(const nn::Tensor& t) {
    return {static_cast<std::uint32_t>(t.n), static_cast<std::uint32_t>(t.c), static_cast<std::uint32_t>(t.h),
            static_cast<std::uint32_t>(t.w)};
}

}  // namespace

void StegaParams::save(const std::filesystem::path& path) const {
    Bundle b;
    b.kind = "stegastamp";
    b.version = 1;
    b.header = {{"arch", arch.to_json()}};
    for (const auto& [name, p] : encoder.params()) b.arrays.emplace_back(name, NdArray::from_f32(dims_of(p->value), p->value.data));
    for (const auto& [name, p] : decoder.params()) b.arrays.emplace_back(name, NdArray::from_f32(dims_of(p->value), p->value.data));
    save_bundle(path, b);
}

StegaParams StegaParams::load(const std::filesystem::path& path) {
    const auto b = load_bundle(path);
    if (b.kind != "stegastamp") fail(ErrorKind::IoError, path.string() + " is not a stegastamp checkpoint");
    if (b.version != 1) fail(ErrorKind::IoError, "unsupported stegastamp checkpoint version");
    auto p = create(StegaArch::from_json(b.header.at("arch")), 0);
    auto assign = [&](const std::string& name, nn::Param* param) {
        const auto& a = b.get(name);
        if (a.dims != dims_of(param->value)) fail(ErrorKind::IoError, "shape mismatch for " + name);
        param->value.data = a.to_f32();
    };
    for (auto& [name, param] : p.encoder.params()) assign(name, param);
    for (auto& [name, param] : p.decoder.params()) assign(name, param);
    return p;
}

// ---------------------------------------------------------------------------
// Inference

namespace {

nn::Tensor messages_to_tensor(std::span<const BitMessage> messages, int k) {
    nn::Tensor t(static_cast<int>(messages.size()), k, 1, 1);
    for (int b = 0; b < t.n; ++b) {
        const auto& m = messages[static_cast<std::size_t>(b)];
        require(m.size() == k, "message length does not match the model (" + std::to_string(k) + " bits)");
        for (int i = 0; i < k; ++i) t.data[static_cast<std::size_t>(b) * k + i] = m.bits[static_cast<std::size_t>(i)];
    }
    return t;
}

void check_image(const Image& image, const StegaArch& arch) {
    require(image.height() == arch.resolution && image.width() == arch.resolution && image.channels() == 3,
            "image must be " + std::to_string(arch.resolution) + "x" + std::to_string(arch.resolution) + " RGB");
}

double sigmoid(double x) { return x >= 0 ? 1.0 / (1.0 + std::exp(-x)) : std::exp(x) / (1.0 + std::exp(x)); }

}  // namespace

std::vector<Image> stega_encode_batch(std::span<const Image> images, std::span<const BitMessage> messages,
                                      const StegaParams& params) {
    require(images.size() == messages.size(), "one message per image required");
    for (const auto& img : images) check_image(img, params.arch);
    const auto x = nn::images_to_tensor(images);
    const auto trace = params.encoder.forward(x, messages_to_tensor(messages, params.arch.bits));
    std::vector<Image> out;
    out.reserve(images.size());
    nn::Tensor enc = x;
    nn::add_inplace(enc, trace.residual);
    for (int b = 0; b < x.n; ++b) out.push_back(nn::tensor_to_image(enc, b));
    return out;
}

StegaEncoded stega_encode(const Image& image, const BitMessage& message, const StegaParams& params) {
    auto encoded = stega_encode_batch(std::span<const Image>(&image, 1), std::span<const BitMessage>(&message, 1), params);
    StegaEncoded out{std::move(encoded.front()), Latent(3, image.height(), image.width())};
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < 3; ++c)
                out.residual.at(c, y, x) = static_cast<double>(out.encoded.at(y, x, c)) - image.at(y, x, c);
    return out;
}

std::vector<StegaDecoded> stega_decode_batch(std::span<const Image> images, const StegaParams& params) {
    for (const auto& img : images) check_image(img, params.arch);
    const auto trace = params.decoder.forward(nn::images_to_tensor(images));
    const int k = params.arch.bits;
    std::vector<StegaDecoded> out(images.size());
    for (std::size_t b = 0; b < images.size(); ++b) {
        auto& d = out[b];
        d.logits.resize(static_cast<std::size_t>(k));
        std::vector<std::uint8_t> bits(static_cast<std::size_t>(k));
        for (int i = 0; i < k; ++i) {
            d.logits[static_cast<std::size_t>(i)] = trace.logits.data[b * k + static_cast<std::size_t>(i)];
            bits[static_cast<std::size_t>(i)] = sigmoid(d.logits[static_cast<std::size_t>(i)]) >= 0.5 ? 1 : 0;
        }
        d.message = BitMessage(std::move(bits));
    }
    return out;
}

StegaDecoded stega_decode(const Image& image, const StegaParams& params) {
    return std::move(stega_decode_batch(std::span<const Image>(&image, 1), params).front());
}

// ---------------------------------------------------------------------------
// Losses

double message_loss(std::span<const double> logits, const BitMessage& message) {
    require(static_cast<int>(logits.size()) == message.size(), "logit count does not match message length");
    double loss = 0.0;
    for (std::size_t i = 0; i < logits.size(); ++i) {
        const double l = logits[i];
        const double m = message.bits[i];
        loss += std::max(l, 0.0) - l * m + std::log1p(std::exp(-std::abs(l)));
    }
    return loss;
}

std::vector<double> message_loss_grad(std::span<const double> logits, const BitMessage& message) {
    require(static_cast<int>(logits.size()) == message.size(), "logit count does not match message length");
    std::vector<double> g(logits.size());
    for (std::size_t i = 0; i < logits.size(); ++i) g[i] = sigmoid(logits[i]) - message.bits[i];
    return g;
}

LossComponents total_loss(const Image& image, const Image& encoded, std::span<const double> logits,
                          const BitMessage& message, const StegaTrainConfig& config) {
    require(image.same_shape(encoded), "total_loss: image shapes differ");
    LossComponents c;
    double sq = 0.0;
    for (std::size_t i = 0; i < image.size(); ++i) {
        const double d = static_cast<double>(encoded.pixels()[i]) - image.pixels()[i];
        sq += d * d;
    }
    c.residual = sq / static_cast<double>(image.size());
    c.perceptual = perceptual_distance(default_perceptual_net(), nn::image_to_tensor(encoded), nn::image_to_tensor(image));
    c.message = message_loss(logits, message);
    c.total = config.lambda_r * c.residual + config.lambda_p * c.perceptual + config.lambda_m * c.message;
    return c;
}

LossWeights loss_weights_at(const StegaTrainConfig& config, int step) {
    const double warm = config.warmup_fraction * config.steps;
    const double ramp = std::max(1.0, config.ramp_fraction * config.steps);
    double t = 0.0;
    if (step >= warm) t = std::min(1.0, (step - warm) / ramp);
    return {config.lambda_r * t, config.lambda_p * t, config.lambda_m};
}

// ---------------------------------------------------------------------------
// Training

StegaTrainResult train_stegastamp(std::size_t dataset_size, const ImageSource& dataset, const StegaTrainConfig& config,
                                  const std::function<void(const StegaHistoryEntry&)>& progress) {
    if (dataset_size == 0) fail(ErrorKind::InvalidArgument, "training dataset is empty");
    require(config.lambda_m > 0.0, "lambda_m must be positive");
    require(config.lambda_r >= 0.0 && config.lambda_p >= 0.0, "loss weights must be nonnegative");
    require(config.batch_size > 0 && config.steps > 0, "batch size and step count must be positive");

    StegaTrainResult result;
    result.params = StegaParams::create(config.arch, derive_seed({config.seed, 0x57e6a}));
    auto& params = result.params;
    std::vector<nn::Param*> plist;
    for (auto& [n, p] : params.encoder.params()) plist.push_back(p);
    for (auto& [n, p] : params.decoder.params()) plist.push_back(p);
    nn::Adam opt(plist, config.learning_rate);

    Rng rng(derive_seed({config.seed, 0xba7c4}));
    const int bsz = config.batch_size;
    const int k = config.arch.bits;
    const auto& pnet = default_perceptual_net();

    StegaHistoryEntry acc;
    int acc_count = 0;
    std::vector<Image> batch;
    std::vector<DistortionPlan> plans(static_cast<std::size_t>(bsz));
    std::uniform_int_distribution<std::size_t> pick(0, dataset_size - 1);

    for (int step = 0; step < config.steps; ++step) {
        const double progress_frac = static_cast<double>(step) / config.steps;
        const double lr_scale = config.final_lr_fraction +
                                (1.0 - config.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * progress_frac));
        opt.set_lr(config.learning_rate * lr_scale);
        const auto w = loss_weights_at(config, step);

        batch.clear();
        for (int b = 0; b < bsz; ++b) batch.push_back(dataset(pick(rng)));
        const nn::Tensor images = nn::images_to_tensor(batch);
        nn::Tensor messages(bsz, k, 1, 1);
        for (auto& v : messages.data) v = static_cast<float>(rng() >> 63);
        for (auto& p : plans) p = sample_distortion(rng, config.distortions, images.h, images.w);

        const auto etrace = params.encoder.forward(images, messages);
        nn::Tensor encoded = images;
        nn::add_inplace(encoded, etrace.residual);
        std::vector<std::uint8_t> inside(encoded.size());
        for (std::size_t i = 0; i < encoded.size(); ++i) {
            inside[i] = encoded.data[i] >= 0.0f && encoded.data[i] <= 1.0f;
            encoded.data[i] = std::clamp(encoded.data[i], 0.0f, 1.0f);
        }
        const nn::Tensor distorted = distort_forward(encoded, plans);
        const auto dtrace = params.decoder.forward(distorted);

        LossComponents loss;
        nn::Tensor dlogits(bsz, k, 1, 1);
        std::size_t correct = 0;
        for (std::size_t i = 0; i < dlogits.size(); ++i) {
            const double l = dtrace.logits.data[i];
            const double m = messages.data[i];
            loss.message += std::max(l, 0.0) - l * m + std::log1p(std::exp(-std::abs(l)));
            dlogits.data[i] = static_cast<float>(w.m * (sigmoid(l) - m) / bsz);
            correct += ((l >= 0.0) == (m > 0.5)) ? 1 : 0;
        }
        loss.message /= bsz;

        double rsq = 0.0, rabs = 0.0;
        for (float r : etrace.residual.data) {
            rsq += static_cast<double>(r) * r;
            rabs += std::abs(r);
        }
        loss.residual = rsq / static_cast<double>(etrace.residual.size());

        nn::Tensor dperc;
        loss.perceptual = perceptual_distance(pnet, encoded, images, w.p > 0.0 ? &dperc : nullptr);
        loss.total = w.r * loss.residual + w.p * loss.perceptual + w.m * loss.message;
        if (!std::isfinite(loss.total))
            fail(ErrorKind::TrainingDiverged, "non-finite loss at step " + std::to_string(step));

        opt.zero_grad();
        nn::Tensor g = params.decoder.backward(dtrace, dlogits, true);
        g = distort_adjoint(g, plans);
        if (w.p > 0.0) nn::add_inplace(g, dperc, static_cast<float>(w.p));
        for (std::size_t i = 0; i < g.size(); ++i)
            if (!inside[i]) g.data[i] = 0.0f;
        const auto rscale = static_cast<float>(2.0 * w.r / static_cast<double>(etrace.residual.size()));
        nn::add_inplace(g, etrace.residual, rscale);
        params.encoder.backward(etrace, g, true);
        opt.step(config.grad_clip);

        acc.loss.total += loss.total;
        acc.loss.residual += loss.residual;
        acc.loss.perceptual += loss.perceptual;
        acc.loss.message += loss.message;
        acc.bit_accuracy += static_cast<double>(correct) / static_cast<double>(dlogits.size());
        acc.mean_abs_residual += rabs / static_cast<double>(etrace.residual.size());
        ++acc_count;
        if (acc_count == config.log_every || step + 1 == config.steps) {
            const double inv = 1.0 / acc_count;
            StegaHistoryEntry e;
            e.step = step + 1;
            e.lambda_r = w.r;
            e.lambda_p = w.p;
            e.lambda_m = w.m;
            e.loss = {acc.loss.total * inv, acc.loss.residual * inv, acc.loss.perceptual * inv, acc.loss.message * inv};
            e.bit_accuracy = acc.bit_accuracy * inv;
            e.mean_abs_residual = acc.mean_abs_residual * inv;
            result.history.push_back(e);
            if (progress) progress(e);
            acc = {};
            acc_count = 0;
        }
    }
    return result;
}

}  // namespace wmbench
