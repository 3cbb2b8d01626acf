#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmbench/distort.hpp"
#include "wmbench/image.hpp"
#include "wmbench/nn/layers.hpp"
#include "wmbench/rng.hpp"

namespace wmbench {

/// Fixed-length binary payload.
struct BitMessage {
    std::vector<std::uint8_t> bits;

    BitMessage() = default;
    explicit BitMessage(std::vector<std::uint8_t> b);

    int size() const { return static_cast<int>(bits.size()); }

    static BitMessage random(int k, Rng& rng);
    /// Most significant bit first; the hex string is padded to whole nibbles.
    static BitMessage from_hex(const std::string& hex, int k);
    std::string to_hex() const;

    friend bool operator==(const BitMessage&, const BitMessage&) = default;
};

struct ConvSpec {
    int channels;
    int kernel;
    int stride;

    friend bool operator==(const ConvSpec&, const ConvSpec&) = default;
};

/// Architecture descriptor; serialized verbatim into checkpoints.
struct StegaArch {
    int resolution = 64;
    int bits = 32;
    // Encoder U-Net widths at full, 1/2 and 1/4 resolution.
    int enc_c1 = 16;
    int enc_c2 = 32;
    int enc_c3 = 32;
    int message_grid = 8;  // message is projected to 3×g×g then upsampled to full resolution
    std::vector<ConvSpec> decoder_convs = {{16, 3, 2}, {32, 3, 2}, {64, 3, 2}, {64, 3, 1}};
    int decoder_hidden = 128;
    bool spatial_transformer = false;

    nlohmann::json to_json() const;
    static StegaArch from_json(const nlohmann::json& j);
    friend bool operator==(const StegaArch&, const StegaArch&) = default;
};

struct EncoderTrace {
    nn::Tensor message_in, message_proj, message_map;
    nn::Tensor x0, a1, a2, a3, a4, c2, a5, c1, a6;
    nn::Tensor residual;
};

class StegaEncoder {
public:
    StegaEncoder() = default;
    StegaEncoder(const StegaArch& arch, Rng& rng);

    /// `messages` is n×k×1×1 holding bits in {0,1}.
    EncoderTrace forward(const nn::Tensor& images, const nn::Tensor& messages) const;
    void backward(const EncoderTrace& trace, const nn::Tensor& d_residual, bool accumulate) const;

    std::vector<std::pair<std::string, nn::Param*>> params();
    std::vector<std::pair<std::string, const nn::Param*>> params() const;

private:
    StegaArch arch_;
    nn::Dense message_fc_;
    nn::Conv2d e1_, e2_, e3_, mid_, d2_, d1_, out_;
};

struct DecoderTrace {
    nn::Tensor input;        // image as given
    nn::Tensor aligned;      // after the spatial transformer (== input when disabled)
    nn::Tensor stn_a1, stn_a2, stn_h, theta;
    std::vector<nn::Tensor> conv_out;  // post-ReLU activation of each conv layer
    nn::Tensor hidden;
    nn::Tensor logits;
};

class StegaDecoder {
public:
    StegaDecoder() = default;
    StegaDecoder(const StegaArch& arch, Rng& rng);

    int conv_layers() const { return static_cast<int>(convs_.size()); }

    DecoderTrace forward(const nn::Tensor& images) const;
    /// Logits computed from the post-ReLU activation of conv layer `layer`.
    nn::Tensor logits_from(int layer, const nn::Tensor& activation) const;
    /// Gradient w.r.t. the input images. When `conv_grads` is given it receives
    /// the gradient on every conv_out activation.
    nn::Tensor backward(const DecoderTrace& trace, const nn::Tensor& d_logits, bool accumulate,
                        std::vector<nn::Tensor>* conv_grads = nullptr) const;

    std::vector<std::pair<std::string, nn::Param*>> params();
    std::vector<std::pair<std::string, const nn::Param*>> params() const;

    /// Direct access for hand-built fixtures.
    std::vector<nn::Conv2d>& convs() { return convs_; }
    nn::Dense& hidden_fc() { return hidden_; }
    nn::Dense& output_fc() { return output_; }

private:
    StegaArch arch_;
    std::vector<nn::Conv2d> convs_;
    nn::Dense hidden_, output_;
    nn::Conv2d stn_c1_, stn_c2_;
    nn::Dense stn_fc1_, stn_fc2_;
};

struct StegaParams {
    StegaArch arch;
    StegaEncoder encoder;
    StegaDecoder decoder;

    static StegaParams create(const StegaArch& arch, std::uint64_t seed);
    void save(const std::filesystem::path& path) const;
    static StegaParams load(const std::filesystem::path& path);
};

struct StegaTrainConfig {
    double lambda_r = 1000.0;
    double lambda_p = 300.0;
    double lambda_m = 1.0;
    int batch_size = 8;
    int steps = 20000;
    double learning_rate = 1e-3;
    double final_lr_fraction = 0.1;  // cosine decay floor
    double warmup_fraction = 0.25;   // lambda_r = lambda_p = 0 for this fraction of steps
    double ramp_fraction = 0.25;     // then linear ramp over this fraction
    double grad_clip = 10.0;
    DistortionSettings distortions{};
    std::uint64_t seed = 1;
    int log_every = 100;
    StegaArch arch{};
};

struct LossComponents {
    double total = 0.0;
    double residual = 0.0;    // L_R: mean squared residual
    double perceptual = 0.0;  // L_P
    double message = 0.0;     // L_M: summed over bits, averaged over batch
};

struct StegaHistoryEntry {
    int step = 0;
    double lambda_r = 0.0, lambda_p = 0.0, lambda_m = 0.0;
    LossComponents loss;
    double bit_accuracy = 0.0;
    double mean_abs_residual = 0.0;
};

struct StegaEncoded {
    Image encoded;
    Latent residual;  // signed, C×H×W, equals encoded - image
};

struct StegaDecoded {
    BitMessage message;
    std::vector<double> logits;
};

StegaEncoded stega_encode(const Image& image, const BitMessage& message, const StegaParams& params);
StegaDecoded stega_decode(const Image& image, const StegaParams& params);

/// Batched variants used by harness sweeps.
std::vector<Image> stega_encode_batch(std::span<const Image> images, std::span<const BitMessage> messages,
                                      const StegaParams& params);
std::vector<StegaDecoded> stega_decode_batch(std::span<const Image> images, const StegaParams& params);

/// -sum_i [M_i log s(l_i) + (1 - M_i) log(1 - s(l_i))], evaluated stably.
double message_loss(std::span<const double> logits, const BitMessage& message);
/// d(message_loss)/d(logits) = sigmoid(l) - M.
std::vector<double> message_loss_grad(std::span<const double> logits, const BitMessage& message);

LossComponents total_loss(const Image& image, const Image& encoded, std::span<const double> logits,
                          const BitMessage& message, const StegaTrainConfig& config);

/// Loss weights in effect at `step` under the warm-up/ramp schedule.
struct LossWeights {
    double r, p, m;
};
LossWeights loss_weights_at(const StegaTrainConfig& config, int step);

using ImageSource = std::function<Image(std::size_t index)>;

struct StegaTrainResult {
    StegaParams params;
    std::vector<StegaHistoryEntry> history;
};

/// `progress` (optional) is invoked with each logged history entry.
StegaTrainResult train_stegastamp(std::size_t dataset_size, const ImageSource& dataset, const StegaTrainConfig& config,
                                  const std::function<void(const StegaHistoryEntry&)>& progress = {});

}  // namespace wmbench
