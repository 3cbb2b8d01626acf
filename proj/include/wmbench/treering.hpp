#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "wmbench/image.hpp"
#include "wmbench/rng.hpp"

namespace wmbench {

struct LatentShape {
    int channels = 4;
    int height = 32;
    int width = 32;

    friend bool operator==(const LatentShape&, const LatentShape&) = default;
};

/// Backend that maps initial noise to images and back.
class LatentGenerator {
public:
    virtual ~LatentGenerator() = default;

    virtual std::string backend() const = 0;
    virtual LatentShape latent_shape() const = 0;
    virtual int image_size() const = 0;
    virtual Latent sample_noise(std::uint64_t seed) const = 0;
    /// Deterministic given (latent, prompt).
    virtual Image generate(const Latent& latent, const std::string& prompt) const = 0;
    virtual Latent invert(const Image& image) const = 0;
    /// False if calls on one instance must be serialized.
    virtual bool reentrant() const { return true; }
    virtual nlohmann::json metadata() const = 0;
};

/// Exactly invertible stand-in for a latent diffusion model. Every 2×2 pixel
/// block (12 values) is an orthogonal transform of a 12-vector whose first
/// `latent_channels` entries are the latent at that position and whose
/// remaining entries are zero for generated images:
///     block = 0.5 + contrast * T^T [z; 0].
/// The leading rows of T are mixtures of per-color block means and a
/// horizontal luminance gradient, so latents produce smooth-ish color fields.
/// Prompts are ignored.
class ToyGenerator : public LatentGenerator {
public:
    struct Options {
        std::uint64_t seed = 0x7011'6e4eULL;
        int latent_size = 32;
        double contrast = 0.08;
    };

    static constexpr int kLatentChannels = 4;
    static constexpr int kBlockDims = 12;

    ToyGenerator();
    explicit ToyGenerator(Options options);

    std::string backend() const override { return "toy"; }
    LatentShape latent_shape() const override;
    int image_size() const override { return 2 * options_.latent_size; }
    Latent sample_noise(std::uint64_t seed) const override;
    Image generate(const Latent& latent, const std::string& prompt) const override;
    Latent invert(const Image& image) const override;
    nlohmann::json metadata() const override;

    /// Full 12-channel block coefficients of an arbitrary image (exact analysis).
    Latent analyze(const Image& image) const;
    /// Exact inverse of analyze (before clamping).
    Image synthesize(const Latent& coefficients) const;

    const Options& options() const { return options_; }
    const Eigen::Matrix<double, kBlockDims, kBlockDims>& transform() const { return t_; }

private:
    Options options_;
    Eigen::Matrix<double, kBlockDims, kBlockDims> t_;  // orthogonal, rows are basis vectors
};

/// "toy" → ToyGenerator. Diffusion-model adapters are not part of this
/// build; requesting one raises GenerationFailed.
std::unique_ptr<LatentGenerator> make_generator(const std::string& backend);

struct TreeRingKey {
    LatentShape shape;
    int radius = 10;
    int channel = 0;
    /// H×W centered spectrum values; constant per ring, zero off the mask.
    std::vector<std::complex<double>> pattern;
    Mask mask;

    std::complex<double> at(int y, int x) const { return pattern[static_cast<std::size_t>(y) * shape.width + x]; }

    void save(const std::filesystem::path& path) const;
    static TreeRingKey load(const std::filesystem::path& path);
};

struct TreeRingConfig {
    int radius = 10;
    int channel = 0;
    double guidance_scale = 7.5;  // used by diffusion adapters only
    double p_cutoff = 0.01;
    std::string backend = "toy";
};

struct DetectionResult {
    double distance = 0.0;
    double score = 0.0;  // -distance
    double p_value = 1.0;
    bool detected = false;
};

/// Rings are {r-1 < d <= r} for r = 1..radius around the centered zero
/// frequency (ring 1 includes the center). Ring values are the real parts of
/// samples of the Fourier transform of a Gaussian draw, so the key is
/// Hermitian-symmetric and embedding keeps the latent real.
TreeRingKey make_key(const LatentShape& shape, int radius, int channel, Rng& rng);

Latent embed_key(const Latent& noise, const TreeRingKey& key);

struct TreeRingGenerated {
    Image image;
    Latent latent;  // watermarked initial noise
};

TreeRingGenerated tr_generate(const LatentGenerator& gen, const TreeRingKey& key, const std::string& prompt,
                              std::uint64_t seed);

/// Detection statistic on an already-inverted latent.
DetectionResult tr_detect_latent(const Latent& latent, const TreeRingKey& key, const TreeRingConfig& config);
DetectionResult tr_detect(const LatentGenerator& gen, const Image& image, const TreeRingKey& key,
                          const TreeRingConfig& config);

}  // namespace wmbench
