#pragma once

#include <cstdint>
#include <memory>
#include <optional>
#include <string>

#include <nlohmann/json.hpp>

#include "wmbench/image.hpp"
#include "wmbench/rng.hpp"
#include "wmbench/stegastamp.hpp"
#include "wmbench/treering.hpp"

namespace wmbench {

constexpr double kRotationDegrees = 75.0;
constexpr int kBlurAttackSize = 8;

Image attack_rotation(const Image& image, double degrees = kRotationDegrees);
/// 8×8 Gaussian, sigma = size/3.
Image attack_blur(const Image& image, int size = kBlurAttackSize);

/// Embedding/reconstruction pair used by regeneration: x̂ = A(φ(x) + N(0, σ²)).
class RegenerationBackend {
public:
    virtual ~RegenerationBackend() = default;
    virtual std::string name() const = 0;
    virtual Latent embed(const Image& image) const = 0;
    virtual Image reconstruct(const Latent& noisy, double sigma) const = 0;
    /// Backend-declared mapping from "strength" to σ.
    virtual double sigma_for_strength(double strength) const = 0;
    virtual nlohmann::json metadata() const = 0;
};

/// Toy backend: φ = exact block analysis of the toy generator (latent units),
/// A = per-coordinate Wiener shrinkage towards the unit-variance prior,
/// τ²/(τ²+σ²), followed by exact synthesis. σ = strength / 100.
class ToyRegeneration : public RegenerationBackend {
public:
    explicit ToyRegeneration(ToyGenerator::Options options = {}, double prior_variance = 1.0);

    std::string name() const override { return "toy"; }
    Latent embed(const Image& image) const override;
    Image reconstruct(const Latent& noisy, double sigma) const override;
    double sigma_for_strength(double strength) const override { return strength / 100.0; }
    nlohmann::json metadata() const override;

private:
    ToyGenerator gen_;
    double prior_variance_;
};

std::unique_ptr<RegenerationBackend> make_regeneration_backend(const std::string& name);

struct RegenConfig {
    std::optional<double> sigma;     // noise scale in backend units
    std::optional<double> strength;  // backend "timestep" units; mapped via the backend
    int iterations = 1;
    std::uint64_t seed = 0;
    std::string backend = "toy";

    double effective_sigma(const RegenerationBackend& backend) const;

    /// "[iterations]x[strength]", e.g. "2x20".
    static RegenConfig parse(const std::string& notation);
    std::string notation() const;
};

/// One embed/noise/reconstruct pass with noise seed derive_seed(seed, 0).
Image regeneration(const Image& image, const RegenConfig& config, const RegenerationBackend& backend);
/// `config.iterations` passes; pass i uses noise seed derive_seed(seed, i).
Image rinse(const Image& image, const RegenConfig& config, const RegenerationBackend& backend);

struct LBAConfig {
    double percentile = 50.0;
    int kernel = 31;
    double sigma = 0.0;  // 0 = kernel/3
    int layer = -1;      // decoder conv layer for GradCAM, -1 = last

    double kernel_sigma() const { return sigma > 0.0 ? sigma : kernel / 3.0; }
    nlohmann::json to_json() const;
};

struct AttackOutput {
    Image image;
    Mask mask;
    Heatmap heatmap;
};

AttackOutput lba(const Image& image, const StegaParams& stega, const LBAConfig& config);
/// LBA given a precomputed heatmap of `image`.
AttackOutput lba_from_heatmap(const Image& image, const Heatmap& heatmap, const LBAConfig& config);

/// Number of pixels a percentile-p mask covers in the budget-matched control.
std::size_t mask_budget(int height, int width, double percentile);
Mask random_mask(int height, int width, std::size_t count, std::uint64_t seed);
/// Uniformly random mask with coverage (100 - p)/100, blurred and composited like lba.
AttackOutput randomized_mask_attack(const Image& image, const LBAConfig& config, std::uint64_t seed);

}  // namespace wmbench
