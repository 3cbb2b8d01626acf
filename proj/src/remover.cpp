#include "wmbench/remover.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <numeric>

#include "wmbench/array_io.hpp"
#include "wmbench/error.hpp"

namespace wmbench {

nlohmann::json RemoverArch::to_json() const {
    return {{"resolution", resolution}, {"c1", c1}, {"c2", c2}, {"c3", c3}};
}

RemoverArch RemoverArch::from_json(const nlohmann::json& j) {
    RemoverArch a;
    a.resolution = j.at("resolution");
    a.c1 = j.at("c1");
    a.c2 = j.at("c2");
    a.c3 = j.at("c3");
    return a;
}

RemoverNet::RemoverNet(const RemoverArch& arch, Rng& rng) : arch_(arch) {
    require(arch.resolution % 4 == 0, "remover resolution must be divisible by 4");
    e1_ = nn::Conv2d(3, arch.c1, 3, 1);
    e2_ = nn::Conv2d(arch.c1, arch.c2, 3, 2);
    e3_ = nn::Conv2d(arch.c2, arch.c3, 3, 2);
    mid_ = nn::Conv2d(arch.c3, arch.c3, 3, 1);
    d2_ = nn::Conv2d(arch.c3 + arch.c2, arch.c2, 3, 1);
    d1_ = nn::Conv2d(arch.c2 + arch.c1, arch.c1, 3, 1);
    out_ = nn::Conv2d(arch.c1 + 3, 3, 3, 1);
    for (auto* c : {&e1_, &e2_, &e3_, &mid_, &d2_, &d1_}) c->init_he(rng);
    out_.init_zero();
}

RemoverTrace RemoverNet::forward(const nn::Tensor& images) const {
    require(images.c == 3 && images.h == arch_.resolution && images.w == arch_.resolution,
            "remover expects 3×" + std::to_string(arch_.resolution) + "² images");
    RemoverTrace t;
    t.x0 = images;
    for (auto& v : t.x0.data) v -= 0.5f;
    t.a1 = nn::relu(e1_.forward(t.x0));
    t.a2 = nn::relu(e2_.forward(t.a1));
    t.a3 = nn::relu(e3_.forward(t.a2));
    t.a4 = nn::relu(mid_.forward(t.a3));
    t.c2 = nn::concat_channels(nn::upsample_nearest(t.a4, 2), t.a2);
    t.a5 = nn::relu(d2_.forward(t.c2));
    t.c1 = nn::concat_channels(nn::upsample_nearest(t.a5, 2), t.a1);
    t.a6 = nn::concat_channels(nn::relu(d1_.forward(t.c1)), t.x0);
    t.correction = out_.forward(t.a6);
    return t;
}

void RemoverNet::backward(const RemoverTrace& t, const nn::Tensor& d_correction, bool accumulate) const {
    nn::Tensor g = out_.backward(t.a6, d_correction, accumulate);
    nn::Tensor dd1, dx_skip;
    nn::split_channels(g, arch_.c1, dd1, dx_skip);
    nn::Tensor d1_out, unused;
    nn::split_channels(t.a6, arch_.c1, d1_out, unused);
    g = d1_.backward(t.c1, nn::relu_backward(d1_out, dd1), accumulate);
    nn::Tensor du1, da1_skip;
    nn::split_channels(g, arch_.c2, du1, da1_skip);
    g = nn::upsample_nearest_backward(du1, 2);
    g = d2_.backward(t.c2, nn::relu_backward(t.a5, g), accumulate);
    nn::Tensor du2, da2_skip;
    nn::split_channels(g, arch_.c3, du2, da2_skip);
    g = nn::upsample_nearest_backward(du2, 2);
    g = mid_.backward(t.a3, nn::relu_backward(t.a4, g), accumulate);
    g = e3_.backward(t.a2, nn::relu_backward(t.a3, g), accumulate);
    nn::add_inplace(g, da2_skip);
    g = e2_.backward(t.a1, nn::relu_backward(t.a2, g), accumulate);
    nn::add_inplace(g, da1_skip);
    e1_.backward(t.x0, nn::relu_backward(t.a1, g), accumulate);
}

std::vector<std::pair<std::string, nn::Param*>> RemoverNet::params() {
    std::vector<std::pair<std::string, nn::Param*>> out;
    const std::pair<const char*, nn::Conv2d*> convs[] = {{"e1", &e1_}, {"e2", &e2_}, {"e3", &e3_}, {"mid", &mid_},
                                                         {"d2", &d2_}, {"d1", &d1_}, {"out", &out_}};
    for (auto [name, c] : convs) {
        out.emplace_back(std::string("remover.") + name + ".weight", &c->weight);
        out.emplace_back(std::string("remover.") + name + ".bias", &c->bias);
    }
    return out;
}

std::vector<std::pair<std::string, const nn::Param*>> RemoverNet::params() const {
    std::vector<std::pair<std::string, const nn::Param*>> out;
    for (auto& [n, p] : const_cast<RemoverNet*>(this)->params()) out.emplace_back(n, p);
    return out;
}

RemoverParams RemoverParams::create(const RemoverArch& arch, std::uint64_t seed) {
    Rng rng(seed);
    return {arch, RemoverNet(arch, rng)};
}

void RemoverParams::save(const std::filesystem::path& path) const {
    Bundle b;
    b.kind = "remover";
    b.version = 1;
    b.header = {{"arch", arch.to_json()}};
    for (const auto& [name, p] : net.params()) {
        const auto& v = p->value;
        b.arrays.emplace_back(name, NdArray::from_f32({static_cast<std::uint32_t>(v.n), static_cast<std::uint32_t>(v.c),
                                                       static_cast<std::uint32_t>(v.h), static_cast<std::uint32_t>(v.w)},
                                                      v.data));
    }
    save_bundle(path, b);
}

RemoverParams RemoverParams::load(const std::filesystem::path& path) {
    const auto b = load_bundle(path);
    if (b.kind != "remover") fail(ErrorKind::IoError, path.string() + " is not a remover checkpoint");
    if (b.version != 1) fail(ErrorKind::IoError, "unsupported remover checkpoint version");
    auto p = create(RemoverArch::from_json(b.header.at("arch")), 0);
    for (auto& [name, param] : p.net.params()) {
        const auto& a = b.get(name);
        const auto& v = param->value;
        const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(v.n), static_cast<std::uint32_t>(v.c),
                                              static_cast<std::uint32_t>(v.h), static_cast<std::uint32_t>(v.w)};
        if (a.dims != dims) fail(ErrorKind::IoError, "shape mismatch for " + name);
        param->value.data = a.to_f32();
    }
    return p;
}

std::vector<Image> remove_batch(std::span<const Image> images, const RemoverParams& params) {
    for (const auto& img : images)
        require(img.height() == params.arch.resolution && img.width() == params.arch.resolution && img.channels() == 3,
                "image does not match the remover resolution");
    std::vector<Image> out;
    out.reserve(images.size());
    constexpr std::size_t chunk = 32;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const auto part = images.subspan(start, std::min(chunk, images.size() - start));
        nn::Tensor x = nn::images_to_tensor(part);
        const auto t = params.net.forward(x);
        nn::add_inplace(x, t.correction);
        for (int b = 0; b < x.n; ++b) out.push_back(nn::tensor_to_image(x, b));
    }
    return out;
}

Image remove(const Image& image, const RemoverParams& params) {
    return std::move(remove_batch(std::span<const Image>(&image, 1), params).front());
}

namespace {

double summed_squares(const Image& a, const Image& b) {
    require(a.same_shape(b), "remover_loss: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a.pixels()[i]) - b.pixels()[i];
        s += d * d;
    }
    return s;
}

}  // namespace

double remover_loss(std::span<const Image> outputs, std::span<const Image> targets) {
    require(outputs.size() == targets.size() && !outputs.empty(), "remover_loss: batch sizes differ or are empty");
    double total = 0.0;
    for (std::size_t i = 0; i < outputs.size(); ++i) total += summed_squares(outputs[i], targets[i]);
    return total / static_cast<double>(outputs.size());
}

double remover_loss_per_element(std::span<const Image> outputs, std::span<const Image> targets) {
    return remover_loss(outputs, targets) / static_cast<double>(targets.front().size());
}

bool smoothed_non_increasing(const std::vector<double>& values, int window) {
    require(window >= 1, "smoothing window must be positive");
    if (values.size() < static_cast<std::size_t>(window)) return true;
    std::vector<double> avg;
    for (std::size_t i = 0; i + static_cast<std::size_t>(window) <= values.size(); ++i)
        avg.push_back(std::accumulate(values.begin() + static_cast<std::ptrdiff_t>(i),
                                      values.begin() + static_cast<std::ptrdiff_t>(i) + window, 0.0) /
                      window);
    for (std::size_t i = 1; i < avg.size(); ++i)
        if (avg[i] > avg[i - 1]) return false;
    return true;
}

namespace {

std::pair<double, double> evaluate_pairs(const std::vector<RemoverPair>& pairs, const RemoverParams& params) {
    std::vector<Image> inputs, targets;
    inputs.reserve(pairs.size());
    targets.reserve(pairs.size());
    for (const auto& p : pairs) {
        inputs.push_back(p.input);
        targets.push_back(p.target);
    }
    const auto outputs = remove_batch(inputs, params);
    const double sum = remover_loss(outputs, targets);
    return {sum, sum / static_cast<double>(targets.front().size())};
}

}  // namespace

RemoverTrainResult train_remover(const std::vector<RemoverPair>& train, const std::vector<RemoverPair>& validation,
                                 const RemoverTrainConfig& config,
                                 const std::function<void(const RemoverHistoryEntry&)>& progress) {
    if (train.empty()) fail(ErrorKind::InvalidArgument, "remover training set is empty");
    require(config.batch_size > 0 && config.epochs > 0, "batch size and epochs must be positive");
    for (const auto& p : train) require(p.input.same_shape(p.target), "remover pairs must be pixel-aligned");

    RemoverTrainResult result;
    result.params = RemoverParams::create(config.arch, derive_seed({config.seed, 0x7e3}));
    std::vector<nn::Param*> plist;
    for (auto& [n, p] : result.params.net.params()) plist.push_back(p);
    nn::Adam opt(plist, config.learning_rate);
    Rng rng(derive_seed({config.seed, 0x5a3}));

    const auto batches_per_epoch = (train.size() + config.batch_size - 1) / config.batch_size;
    const auto total_steps = static_cast<double>(batches_per_epoch) * config.epochs;
    std::vector<std::size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);
    long step = 0;
    std::vector<Image> inputs, targets;

    for (int epoch = 1; epoch <= config.epochs; ++epoch) {
        std::shuffle(order.begin(), order.end(), rng);
        double sum_loss = 0.0;
        std::size_t seen = 0;
        for (std::size_t start = 0; start < order.size(); start += config.batch_size, ++step) {
            const double frac = static_cast<double>(step) / total_steps;
            opt.set_lr(config.learning_rate *
                       (config.final_lr_fraction +
                        (1.0 - config.final_lr_fraction) * 0.5 * (1.0 + std::cos(std::numbers::pi * frac))));
            const auto end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
            inputs.clear();
            targets.clear();
            for (auto i = start; i < end; ++i) {
                inputs.push_back(train[order[i]].input);
                targets.push_back(train[order[i]].target);
            }
            const nn::Tensor x = nn::images_to_tensor(inputs);
            const nn::Tensor y = nn::images_to_tensor(targets);
            const auto trace = result.params.net.forward(x);
            const auto n = static_cast<double>(x.n);
            nn::Tensor grad(x.n, x.c, x.h, x.w);
            double loss = 0.0;
            for (std::size_t i = 0; i < x.size(); ++i) {
                const float out = x.data[i] + trace.correction.data[i];
                const float clamped = std::clamp(out, 0.0f, 1.0f);
                const double d = static_cast<double>(clamped) - y.data[i];
                loss += d * d;
                grad.data[i] = (out >= 0.0f && out <= 1.0f) ? static_cast<float>(2.0 * d / n) : 0.0f;
            }
            if (!std::isfinite(loss))
                fail(ErrorKind::TrainingDiverged, "non-finite remover loss in epoch " + std::to_string(epoch));
            sum_loss += loss;
            seen += static_cast<std::size_t>(x.n);
            opt.zero_grad();
            result.params.net.backward(trace, grad, true);
            opt.step(config.grad_clip);
        }
        RemoverHistoryEntry e;
        e.epoch = epoch;
        e.train_loss = sum_loss / static_cast<double>(seen);
        e.train_loss_per_element = e.train_loss / static_cast<double>(train.front().target.size());
        if (!validation.empty()) std::tie(e.val_loss, e.val_loss_per_element) = evaluate_pairs(validation, result.params);
        result.history.push_back(e);
        if (progress) progress(e);
    }
    return result;
}

StackedImages stacked_embed(const LatentGenerator& gen, const TreeRingKey& key, const std::string& prompt,
                            std::uint64_t seed, const BitMessage& message, const StegaParams& stega) {
    StackedImages out;
    out.tr = tr_generate(gen, key, prompt, seed).image;
    out.tr_ss = stega_encode(out.tr, message, stega).encoded;
    return out;
}

BitMessage pair_message(std::uint64_t seed, int bits) {
    Rng rng(derive_seed({seed, 0x3e55a9e}));
    return BitMessage::random(bits, rng);
}

std::vector<RemoverPair> make_remover_pairs(const LatentGenerator& gen, const TreeRingKey& key, const StegaParams& stega,
                                            std::uint64_t seed_begin, std::size_t count) {
    std::vector<Image> tr;
    std::vector<BitMessage> messages;
    tr.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        tr.push_back(tr_generate(gen, key, "", seed_begin + i).image);
        messages.push_back(pair_message(seed_begin + i, stega.arch.bits));
    }
    std::vector<RemoverPair> pairs;
    pairs.reserve(count);
    constexpr std::size_t chunk = 32;
    for (std::size_t start = 0; start < count; start += chunk) {
        const auto n = std::min(chunk, count - start);
        const auto enc = stega_encode_batch(std::span<const Image>(tr).subspan(start, n),
                                            std::span<const BitMessage>(messages).subspan(start, n), stega);
        for (std::size_t i = 0; i < n; ++i) pairs.push_back({enc[i], tr[start + i]});
    }
    return pairs;
}

StackedDecoded stacked_decode(const Image& image, const TreeRingKey& key, const LatentGenerator& gen,
                              const StegaParams& stega, const RemoverParams& remover, const TreeRingConfig& config) {
    StackedDecoded out;
    out.stega = stega_decode(image, stega);
    out.treering = tr_detect(gen, remove(image, remover), key, config);
    return out;
}

}  // namespace wmbench
