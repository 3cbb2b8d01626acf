#include "wmbench/attacks.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

#include "wmbench/error.hpp"
#include "wmbench/saliency.hpp"

namespace wmbench {

Image attack_rotation(const Image& image, double degrees) { return rotate(image, degrees); }

Image attack_blur(const Image& image, int size) { return blur(image, gaussian_kernel(size, size / 3.0)); }

// ---------------------------------------------------------------------------
// Regeneration

ToyRegeneration::ToyRegeneration(ToyGenerator::Options options, double prior_variance)
    : gen_(options), prior_variance_(prior_variance) {
    require(prior_variance > 0.0, "prior variance must be positive");
}

Latent ToyRegeneration::embed(const Image& image) const {
    if (image.height() != gen_.image_size() || image.width() != gen_.image_size())
        fail(ErrorKind::AttackFailed, "toy regeneration requires " + std::to_string(gen_.image_size()) + "x" +
                                          std::to_string(gen_.image_size()) + " images");
    return gen_.analyze(image);
}

Image ToyRegeneration::reconstruct(const Latent& noisy, double sigma) const {
    Latent c = noisy;
    const double shrink = prior_variance_ / (prior_variance_ + sigma * sigma);
    for (auto& v : c.values) v *= shrink;
    return gen_.synthesize(c);
}

nlohmann::json ToyRegeneration::metadata() const {
    return {{"backend", "toy"},
            {"sigma_units", "latent"},
            {"strength_to_sigma", "sigma = strength / 100"},
            {"prior_variance", prior_variance_},
            {"generator", gen_.metadata()}};
}

std::unique_ptr<RegenerationBackend> make_regeneration_backend(const std::string& name) {
    if (name == "toy") return std::make_unique<ToyRegeneration>();
    if (name == "diffusion-adapter")
        fail(ErrorKind::AttackFailed, "the diffusion adapter backend is not available in this build");
    fail(ErrorKind::InvalidArgument, "unknown regeneration backend '" + name + "'");
}

double RegenConfig::effective_sigma(const RegenerationBackend& backend) const {
    require(!(sigma && strength), "specify either sigma or strength, not both");
    const double s = strength ? backend.sigma_for_strength(*strength) : sigma.value_or(0.0);
    require(s >= 0.0 && std::isfinite(s), "regeneration sigma must be finite and nonnegative");
    return s;
}

RegenConfig RegenConfig::parse(const std::string& notation) {
    const auto x = notation.find('x');
    require(x != std::string::npos && x > 0 && x + 1 < notation.size(),
            "regeneration notation must look like [iterations]x[strength], got '" + notation + "'");
    RegenConfig c;
    std::size_t used = 0;
    const std::string iters = notation.substr(0, x), strength = notation.substr(x + 1);
    try {
        c.iterations = std::stoi(iters, &used);
        require(used == iters.size(), "bad iteration count in '" + notation + "'");
        c.strength = std::stod(strength, &used);
        require(used == strength.size(), "bad strength in '" + notation + "'");
    } catch (const std::logic_error&) {
        fail(ErrorKind::InvalidArgument, "cannot parse regeneration notation '" + notation + "'");
    }
    require(c.iterations >= 1, "iterations must be at least 1");
    require(*c.strength >= 0.0, "strength must be nonnegative");
    return c;
}

std::string RegenConfig::notation() const {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%dx%g", iterations, strength.value_or(0.0));
    return buf;
}

namespace {

Image regeneration_pass(const Image& image, double sigma, std::uint64_t seed, const RegenerationBackend& backend) {
    Latent z;
    try {
        z = backend.embed(image);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::AttackFailed) throw;
        fail(ErrorKind::AttackFailed, e.what());
    }
    if (sigma > 0.0) {
        Rng rng(seed);
        std::normal_distribution<double> nd(0.0, sigma);
        for (auto& v : z.values) v += nd(rng);
    }
    return backend.reconstruct(z, sigma);
}

}  // namespace

Image regeneration(const Image& image, const RegenConfig& config, const RegenerationBackend& backend) {
    return regeneration_pass(image, config.effective_sigma(backend), derive_seed({config.seed, 0}), backend);
}

Image rinse(const Image& image, const RegenConfig& config, const RegenerationBackend& backend) {
    require(config.iterations >= 1, "rinse needs at least one iteration");
    const double sigma = config.effective_sigma(backend);
    Image cur = image;
    for (int i = 0; i < config.iterations; ++i)
        cur = regeneration_pass(cur, sigma, derive_seed({config.seed, static_cast<std::uint64_t>(i)}), backend);
    return cur;
}

// ---------------------------------------------------------------------------
// Localized blurring

nlohmann::json LBAConfig::to_json() const {
    return {{"percentile", percentile}, {"kernel", kernel}, {"sigma", kernel_sigma()}, {"layer", layer}};
}

namespace {

void check_lba(const LBAConfig& c) {
    require(c.percentile >= 0.0 && c.percentile < 100.0, "percentile must lie in [0,100)");
    require(c.kernel >= 1, "kernel size must be at least 1");
}

}  // namespace

AttackOutput lba_from_heatmap(const Image& image, const Heatmap& heatmap, const LBAConfig& config) {
    check_lba(config);
    require(heatmap.height == image.height() && heatmap.width == image.width(), "heatmap does not match the image");
    AttackOutput out;
    out.heatmap = heatmap;
    out.mask = percentile_threshold(heatmap, config.percentile);
    const Image blurred = blur(image, gaussian_kernel(config.kernel, config.kernel_sigma()));
    out.image = composite(image, blurred, out.mask);
    return out;
}

AttackOutput lba(const Image& image, const StegaParams& stega, const LBAConfig& config) {
    check_lba(config);
    return lba_from_heatmap(image, gradcam(stega, image, config.layer), config);
}

std::size_t mask_budget(int height, int width, double percentile) {
    require(percentile >= 0.0 && percentile < 100.0, "percentile must lie in [0,100)");
    const double total = static_cast<double>(height) * width;
    return static_cast<std::size_t>(std::llround((100.0 - percentile) / 100.0 * total));
}

Mask random_mask(int height, int width, std::size_t count, std::uint64_t seed) {
    const auto total = static_cast<std::size_t>(height) * width;
    require(count <= total, "mask budget exceeds the image");
    std::vector<std::size_t> idx(total);
    std::iota(idx.begin(), idx.end(), 0);
    Rng rng(seed);
    // Partial Fisher-Yates: the first `count` entries are a uniform sample.
    for (std::size_t i = 0; i < count; ++i) {
        std::uniform_int_distribution<std::size_t> pick(i, total - 1);
        std::swap(idx[i], idx[pick(rng)]);
    }
    Mask m(height, width);
    for (std::size_t i = 0; i < count; ++i) m.bits[idx[i]] = 1;
    return m;
}

AttackOutput randomized_mask_attack(const Image& image, const LBAConfig& config, std::uint64_t seed) {
    check_lba(config);
    AttackOutput out;
    out.mask = random_mask(image.height(), image.width(), mask_budget(image.height(), image.width(), config.percentile),
                           seed);
    const Image blurred = blur(image, gaussian_kernel(config.kernel, config.kernel_sigma()));
    out.image = composite(image, blurred, out.mask);
    return out;
}

}  // namespace wmbench
