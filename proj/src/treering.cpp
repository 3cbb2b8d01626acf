#include "wmbench/treering.hpp"

#include <boost/math/distributions/chi_squared.hpp>
#include <boost/math/distributions/non_central_chi_squared.hpp>

#include <algorithm>
#include <cmath>

#include "wmbench/array_io.hpp"
#include "wmbench/error.hpp"

namespace wmbench {

// ---------------------------------------------------------------------------
// Toy generator

ToyGenerator::ToyGenerator() : ToyGenerator(Options{}) {}

ToyGenerator::ToyGenerator(Options options) : options_(options) {
    require(options.latent_size >= 4, "toy generator latent size must be at least 4");
    require(options.contrast > 0.0, "toy generator contrast must be positive");
    constexpr int D = kBlockDims;
    // Block layout: index (dy*2 + dx)*3 + color.
    Eigen::Matrix<double, D, kLatentChannels> smooth = Eigen::Matrix<double, D, kLatentChannels>::Zero();
    for (int p = 0; p < 4; ++p) {
        const int dx = p % 2;
        for (int c = 0; c < 3; ++c) {
            smooth(p * 3 + c, c) = 0.5;
            smooth(p * 3 + c, 3) = (dx == 0 ? -1.0 : 1.0) / std::sqrt(12.0);
        }
    }
    Rng rng(options.seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Eigen::Matrix<double, kLatentChannels, kLatentChannels> mix;
    for (int i = 0; i < kLatentChannels; ++i)
        for (int j = 0; j < kLatentChannels; ++j) mix(i, j) = nd(rng);
    const Eigen::Matrix<double, kLatentChannels, kLatentChannels> rot =
        Eigen::HouseholderQR<Eigen::Matrix<double, kLatentChannels, kLatentChannels>>(mix).householderQ();

    Eigen::Matrix<double, D, D> basis;
    basis.leftCols(kLatentChannels) = smooth * rot;
    for (int i = 0; i < D; ++i)
        for (int j = kLatentChannels; j < D; ++j) basis(i, j) = nd(rng);
    // Gram-Schmidt keeps the leading (already orthonormal) columns unchanged.
    for (int j = kLatentChannels; j < D; ++j)
        for (int pass = 0; pass < 2; ++pass) {
            for (int k = 0; k < j; ++k) basis.col(j) -= basis.col(k).dot(basis.col(j)) * basis.col(k);
            basis.col(j).normalize();
        }
    t_ = basis.transpose();
}

LatentShape ToyGenerator::latent_shape() const {
    return {kLatentChannels, options_.latent_size, options_.latent_size};
}

Latent ToyGenerator::sample_noise(std::uint64_t seed) const {
    Rng rng(seed);
    std::normal_distribution<double> nd(0.0, 1.0);
    Latent z(kLatentChannels, options_.latent_size, options_.latent_size);
    for (auto& v : z.values) v = nd(rng);
    return z;
}

Latent ToyGenerator::analyze(const Image& image) const {
    require(image.height() == image_size() && image.width() == image_size() && image.channels() == 3,
            "toy generator expects " + std::to_string(image_size()) + "x" + std::to_string(image_size()) + " RGB");
    const int n = options_.latent_size;
    Latent out(kBlockDims, n, n);
    Eigen::Matrix<double, kBlockDims, 1> v;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            for (int p = 0; p < 4; ++p)
                for (int c = 0; c < 3; ++c)
                    v(p * 3 + c) = (image.at(2 * i + p / 2, 2 * j + p % 2, c) - 0.5) / options_.contrast;
            const Eigen::Matrix<double, kBlockDims, 1> coef = t_ * v;
            for (int k = 0; k < kBlockDims; ++k) out.at(k, i, j) = coef(k);
        }
    return out;
}

Image ToyGenerator::synthesize(const Latent& coefficients) const {
    const int n = options_.latent_size;
    require(coefficients.channels == kBlockDims && coefficients.height == n && coefficients.width == n,
            "coefficient field has the wrong shape");
    Image img(image_size(), image_size(), 3);
    Eigen::Matrix<double, kBlockDims, 1> coef;
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < n; ++j) {
            for (int k = 0; k < kBlockDims; ++k) coef(k) = coefficients.at(k, i, j);
            const Eigen::Matrix<double, kBlockDims, 1> v = t_.transpose() * coef;
            for (int p = 0; p < 4; ++p)
                for (int c = 0; c < 3; ++c)
                    img.at(2 * i + p / 2, 2 * j + p % 2, c) = static_cast<float>(0.5 + options_.contrast * v(p * 3 + c));
        }
    img.clamp();
    return img;
}

Image ToyGenerator::generate(const Latent& latent, const std::string& /*prompt*/) const {
    const auto shape = latent_shape();
    if (latent.channels != shape.channels || latent.height != shape.height || latent.width != shape.width)
        fail(ErrorKind::GenerationFailed, "latent shape does not match the toy generator");
    Latent full(kBlockDims, shape.height, shape.width);
    std::copy(latent.values.begin(), latent.values.end(), full.values.begin());
    return synthesize(full);
}

Latent ToyGenerator::invert(const Image& image) const {
    const auto full = analyze(image);
    const auto shape = latent_shape();
    Latent z(shape.channels, shape.height, shape.width);
    std::copy_n(full.values.begin(), z.values.size(), z.values.begin());
    return z;
}

nlohmann::json ToyGenerator::metadata() const {
    return {{"backend", "toy"},
            {"seed", options_.seed},
            {"latent_shape", {kLatentChannels, options_.latent_size, options_.latent_size}},
            {"image_size", image_size()},
            {"contrast", options_.contrast},
            {"noise_units", "latent (unit-variance initial noise)"}};
}

std::unique_ptr<LatentGenerator> make_generator(const std::string& backend) {
    if (backend == "toy") return std::make_unique<ToyGenerator>();
    if (backend == "diffusion-adapter")
        fail(ErrorKind::GenerationFailed, "the diffusion adapter backend is not available in this build");
    fail(ErrorKind::InvalidArgument, "unknown generator backend '" + backend + "'");
}

// ---------------------------------------------------------------------------
// Keys

namespace {

double center_distance(int y, int x, int h, int w) {
    const double dy = y - h / 2, dx = x - w / 2;
    return std::sqrt(dy * dy + dx * dx);
}

Latent channel_plane(const Latent& z, int channel) {
    Latent p(1, z.height, z.width);
    std::copy_n(z.values.begin() + static_cast<std::ptrdiff_t>(channel * z.plane()), z.plane(), p.values.begin());
    return p;
}

}  // namespace

TreeRingKey make_key(const LatentShape& shape, int radius, int channel, Rng& rng) {
    require(shape.channels > 0 && shape.height > 0 && shape.width > 0, "latent shape must be positive");
    require(radius >= 1 && radius <= std::min(shape.height, shape.width) / 2,
            "radius must be in [1, min(H,W)/2] for a " + std::to_string(shape.height) + "x" +
                std::to_string(shape.width) + " latent");
    require(channel >= 0 && channel < shape.channels, "key channel out of range");
    TreeRingKey key;
    key.shape = shape;
    key.radius = radius;
    key.channel = channel;
    key.mask = Mask(shape.height, shape.width);
    key.pattern.assign(static_cast<std::size_t>(shape.height) * shape.width, {});

    Latent g(1, shape.height, shape.width);
    std::normal_distribution<double> nd(0.0, 1.0);
    for (auto& v : g.values) v = nd(rng);
    const auto spectrum = fourier_forward(g);
    const int cy = shape.height / 2, cx = shape.width / 2;
    for (int r = radius; r >= 1; --r) {
        const double value = spectrum.at(0, cy, cx + r).real();
        for (int y = 0; y < shape.height; ++y)
            for (int x = 0; x < shape.width; ++x)
                if (center_distance(y, x, shape.height, shape.width) <= r) {
                    key.mask.set(y, x, true);
                    key.pattern[static_cast<std::size_t>(y) * shape.width + x] = value;
                }
    }
    return key;
}

void TreeRingKey::save(const std::filesystem::path& path) const {
    Bundle b;
    b.kind = "treering-key";
    b.version = 1;
    b.header = {{"shape", {shape.channels, shape.height, shape.width}}, {"radius", radius}, {"channel", channel}};
    const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(shape.height), static_cast<std::uint32_t>(shape.width)};
    b.arrays.emplace_back("pattern", NdArray::from_c64(dims, pattern));
    b.arrays.emplace_back("mask", NdArray::from_bool(dims, mask.bits));
    save_bundle(path, b);
}

TreeRingKey TreeRingKey::load(const std::filesystem::path& path) {
    const auto b = load_bundle(path);
    if (b.kind != "treering-key") fail(ErrorKind::IoError, path.string() + " is not a Tree-Ring key");
    TreeRingKey key;
    const auto& s = b.header.at("shape");
    key.shape = {s.at(0), s.at(1), s.at(2)};
    key.radius = b.header.at("radius");
    key.channel = b.header.at("channel");
    key.pattern = b.get("pattern").to_c64();
    key.mask = Mask(key.shape.height, key.shape.width);
    key.mask.bits = b.get("mask").to_bool();
    const auto n = static_cast<std::size_t>(key.shape.height) * key.shape.width;
    if (key.pattern.size() != n || key.mask.bits.size() != n) fail(ErrorKind::IoError, "key arrays have the wrong size");
    return key;
}

Latent embed_key(const Latent& noise, const TreeRingKey& key) {
    require(noise.channels == key.shape.channels && noise.height == key.shape.height && noise.width == key.shape.width,
            "latent shape does not match the key");
    auto spectrum = fourier_forward(channel_plane(noise, key.channel));
    for (int y = 0; y < noise.height; ++y)
        for (int x = 0; x < noise.width; ++x)
            if (key.mask.at(y, x)) spectrum.at(0, y, x) = key.at(y, x);
    const auto plane = fourier_inverse(spectrum);
    Latent out = noise;
    std::copy(plane.values.begin(), plane.values.end(),
              out.values.begin() + static_cast<std::ptrdiff_t>(key.channel * noise.plane()));
    return out;
}

TreeRingGenerated tr_generate(const LatentGenerator& gen, const TreeRingKey& key, const std::string& prompt,
                              std::uint64_t seed) {
    if (!(gen.latent_shape() == key.shape)) fail(ErrorKind::InvalidArgument, "key shape does not match the generator");
    TreeRingGenerated out;
    out.latent = embed_key(gen.sample_noise(seed), key);
    try {
        out.image = gen.generate(out.latent, prompt);
    } catch (const Error& e) {
        if (e.kind() == ErrorKind::GenerationFailed) throw;
        fail(ErrorKind::GenerationFailed, e.what());
    }
    return out;
}

// ---------------------------------------------------------------------------
// Detection

DetectionResult tr_detect_latent(const Latent& latent, const TreeRingKey& key, const TreeRingConfig& config) {
    require(latent.channels == key.shape.channels && latent.height == key.shape.height &&
                latent.width == key.shape.width,
            "latent shape does not match the key");
    require(config.p_cutoff > 0.0 && config.p_cutoff < 1.0, "p-value cutoff must be in (0,1)");
    const int h = latent.height, w = latent.width;
    const auto f = fourier_forward(channel_plane(latent, key.channel));
    const int cy = h / 2, cx = w / 2;

    double dist2 = 0.0;
    double stat = 0.0, nc = 0.0;
    int dof = 0;
    double off_sum = 0.0;
    std::size_t off_count = 0;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x) {
            // Conjugate-symmetric partner in centered coordinates.
            const int py = (2 * cy - y + h) % h, px = (2 * cx - x + w) % w;
            const bool self = py == y && px == x;
            const auto fv = f.at(0, y, x);
            if (!key.mask.at(y, x)) {
                if (!self) {
                    off_sum += std::norm(fv) / 2.0;
                    ++off_count;
                }
                continue;
            }
            const auto kv = key.at(y, x);
            const auto diff = fv - kv;
            dist2 += std::norm(diff);
            if (self) {
                // Real coefficient: its variance is twice the per-component variance.
                stat += diff.real() * diff.real() / 2.0;
                nc += kv.real() * kv.real() / 2.0;
                dof += 1;
            } else if (y * w + x < py * w + px) {
                stat += std::norm(diff);
                nc += std::norm(kv);
                dof += 2;
            }
        }
    // Unkeyed channels carry the same noise model and sharpen the estimate.
    for (int c = 0; c < latent.channels; ++c) {
        if (c == key.channel) continue;
        const auto fc = fourier_forward(channel_plane(latent, c));
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                const int py = (2 * cy - y + h) % h, px = (2 * cx - x + w) % w;
                if (py == y && px == x) continue;
                off_sum += std::norm(fc.at(0, y, x)) / 2.0;
                ++off_count;
            }
    }
    if (off_count == 0) fail(ErrorKind::DetectionUnavailable, "no off-mask coefficients to estimate the noise level");
    const double var = off_sum / static_cast<double>(off_count);

    DetectionResult r;
    r.distance = std::sqrt(dist2);
    r.score = -r.distance;
    if (!(var > 0.0)) {
        r.p_value = stat == 0.0 ? 0.0 : 1.0;
    } else {
        const double s = stat / var;
        const double lambda = nc / var;
        if (lambda > 0.0)
            r.p_value = boost::math::cdf(boost::math::non_central_chi_squared(dof, lambda), s);
        else
            r.p_value = boost::math::cdf(boost::math::chi_squared(dof), s);
    }
    r.p_value = std::clamp(r.p_value, 0.0, 1.0);
    r.detected = r.p_value < config.p_cutoff;
    return r;
}

DetectionResult tr_detect(const LatentGenerator& gen, const Image& image, const TreeRingKey& key,
                          const TreeRingConfig& config) {
    if (image.height() != gen.image_size() || image.width() != gen.image_size())
        fail(ErrorKind::DetectionUnavailable, "image does not match the generator resolution; cannot invert");
    Latent z;
    try {
        z = gen.invert(image);
    } catch (const std::exception& e) {
        fail(ErrorKind::DetectionUnavailable, std::string("inversion failed: ") + e.what());
    }
    return tr_detect_latent(z, key, config);
}

}  // namespace wmbench
