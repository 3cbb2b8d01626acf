#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmbench/image.hpp"
#include "wmbench/nn/layers.hpp"
#include "wmbench/stegastamp.hpp"
#include "wmbench/treering.hpp"

namespace wmbench {

struct RemoverArch {
    int resolution = 64;
    int c1 = 16;
    int c2 = 32;
    int c3 = 32;

    nlohmann::json to_json() const;
    static RemoverArch from_json(const nlohmann::json& j);
    friend bool operator==(const RemoverArch&, const RemoverArch&) = default;
};

struct RemoverTrace {
    nn::Tensor x0, a1, a2, a3, a4, c2, a5, c1, a6, correction;
};

/// Residual U-Net: output = clamp(input + correction(input)), with the
/// correction head zero-initialized so an untrained remover is the identity.
class RemoverNet {
public:
    RemoverNet() = default;
    RemoverNet(const RemoverArch& arch, Rng& rng);

    RemoverTrace forward(const nn::Tensor& images) const;
    void backward(const RemoverTrace& trace, const nn::Tensor& d_correction, bool accumulate) const;

    std::vector<std::pair<std::string, nn::Param*>> params();
    std::vector<std::pair<std::string, const nn::Param*>> params() const;

private:
    RemoverArch arch_;
    nn::Conv2d e1_, e2_, e3_, mid_, d2_, d1_, out_;
};

struct RemoverParams {
    RemoverArch arch;
    RemoverNet net;

    static RemoverParams create(const RemoverArch& arch, std::uint64_t seed);
    void save(const std::filesystem::path& path) const;
    static RemoverParams load(const std::filesystem::path& path);
};

Image remove(const Image& image, const RemoverParams& params);
std::vector<Image> remove_batch(std::span<const Image> images, const RemoverParams& params);

/// Mean over the batch of the per-sample squared l2 distance summed over
/// pixel-channels.
double remover_loss(std::span<const Image> outputs, std::span<const Image> targets);
/// Same distance averaged over pixel-channels as well (per-element MSE).
double remover_loss_per_element(std::span<const Image> outputs, std::span<const Image> targets);

struct RemoverPair {
    Image input;   // I_TR+SS
    Image target;  // I_TR
};

struct RemoverTrainConfig {
    int batch_size = 16;
    int epochs = 30;
    double learning_rate = 1e-3;
    double final_lr_fraction = 0.05;
    double grad_clip = 10.0;
    std::uint64_t seed = 1;
    RemoverArch arch{};
};

struct RemoverHistoryEntry {
    int epoch = 0;
    double train_loss = 0.0;  // summed-over-pixels convention
    double val_loss = 0.0;
    double train_loss_per_element = 0.0;
    double val_loss_per_element = 0.0;
};

struct RemoverTrainResult {
    RemoverParams params;
    std::vector<RemoverHistoryEntry> history;
};

RemoverTrainResult train_remover(const std::vector<RemoverPair>& train, const std::vector<RemoverPair>& validation,
                                 const RemoverTrainConfig& config,
                                 const std::function<void(const RemoverHistoryEntry&)>& progress = {});

/// True when the moving average (window `window`) of `values` never increases.
bool smoothed_non_increasing(const std::vector<double>& values, int window = 3);

struct StackedImages {
    Image tr;     // I_TR
    Image tr_ss;  // I_TR+SS
};

StackedImages stacked_embed(const LatentGenerator& gen, const TreeRingKey& key, const std::string& prompt,
                            std::uint64_t seed, const BitMessage& message, const StegaParams& stega);

/// Pairs for seeds seed_begin .. seed_begin+count-1; messages derive from the seed.
std::vector<RemoverPair> make_remover_pairs(const LatentGenerator& gen, const TreeRingKey& key, const StegaParams& stega,
                                            std::uint64_t seed_begin, std::size_t count);
BitMessage pair_message(std::uint64_t seed, int bits);

struct StackedDecoded {
    StegaDecoded stega;
    DetectionResult treering;
};

/// StegaStamp is decoded from the input; Tree-Ring from remove(input).
StackedDecoded stacked_decode(const Image& image, const TreeRingKey& key, const LatentGenerator& gen,
                              const StegaParams& stega, const RemoverParams& remover, const TreeRingConfig& config);

}  // namespace wmbench
