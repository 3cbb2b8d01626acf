#pragma once

#include <complex>
#include <cstdint>
#include <span>
#include <vector>

namespace wmbench {

/// RGB image, H×W×C interleaved, values clamped to [0,1].
class Image {
public:
    Image() = default;
    Image(int height, int width, int channels = 3, float fill = 0.0f);
    Image(int height, int width, int channels, std::vector<float> pixels);

    int height() const { return height_; }
    int width() const { return width_; }
    int channels() const { return channels_; }
    std::size_t size() const { return pixels_.size(); }
    bool empty() const { return pixels_.empty(); }

    float& at(int y, int x, int c) { return pixels_[index(y, x, c)]; }
    float at(int y, int x, int c) const { return pixels_[index(y, x, c)]; }

    std::span<float> pixels() { return pixels_; }
    std::span<const float> pixels() const { return pixels_; }

    /// Clamp every value into [0,1]; non-finite values become 0.
    void clamp();

    bool same_shape(const Image& other) const {
        return height_ == other.height_ && width_ == other.width_ && channels_ == other.channels_;
    }

    friend bool operator==(const Image&, const Image&) = default;

private:
    std::size_t index(int y, int x, int c) const {
        return (static_cast<std::size_t>(y) * width_ + x) * channels_ + c;
    }

    int height_ = 0;
    int width_ = 0;
    int channels_ = 0;
    std::vector<float> pixels_;
};

/// Normalized s×s filter kernel.
struct Kernel {
    int size = 1;
    double sigma = 1.0;
    std::vector<double> weights;  // row-major s×s

    double at(int i, int j) const { return weights[static_cast<std::size_t>(i) * size + j]; }
};

/// Binary H×W selection.
struct Mask {
    int height = 0;
    int width = 0;
    std::vector<std::uint8_t> bits;

    Mask() = default;
    Mask(int h, int w, bool value = false)
        : height(h), width(w), bits(static_cast<std::size_t>(h) * w, value ? 1 : 0) {}

    bool at(int y, int x) const { return bits[static_cast<std::size_t>(y) * width + x] != 0; }
    void set(int y, int x, bool v) { bits[static_cast<std::size_t>(y) * width + x] = v ? 1 : 0; }
    double coverage() const;
    std::size_t count() const;
};

/// Saliency map, H×W in [0,1].
struct Heatmap {
    int height = 0;
    int width = 0;
    std::vector<float> values;
    int source_layer = -1;
    const char* target = "decoded-bit-oriented-logit-sum";

    float at(int y, int x) const { return values[static_cast<std::size_t>(y) * width + x]; }
};

/// Real C×H×W field in double precision (latents, per-channel planes).
struct Latent {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<double> values;

    Latent() = default;
    Latent(int c, int h, int w, double fill = 0.0)
        : channels(c), height(h), width(w), values(static_cast<std::size_t>(c) * h * w, fill) {}

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    double& at(int c, int y, int x) { return values[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    double at(int c, int y, int x) const { return values[c * plane() + static_cast<std::size_t>(y) * width + x]; }
    bool same_shape(const Latent& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

/// Centered (zero frequency at (H/2, W/2)) 2-D spectrum per channel.
struct FourierField {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<std::complex<double>> coefficients;  // C×H×W

    std::size_t plane() const { return static_cast<std::size_t>(height) * width; }
    std::complex<double>& at(int c, int y, int x) {
        return coefficients[c * plane() + static_cast<std::size_t>(y) * width + x];
    }
    const std::complex<double>& at(int c, int y, int x) const {
        return coefficients[c * plane() + static_cast<std::size_t>(y) * width + x];
    }
};

Latent to_latent(const Image& image);
Image to_image(const Latent& planes);

Kernel gaussian_kernel(int size, double sigma);
Image blur(const Image& image, const Kernel& kernel);
Image rotate(const Image& image, double degrees);

FourierField fourier_forward(const Latent& field);
FourierField fourier_forward(const Image& image);
/// Throws NumericalInconsistency when the imaginary residual reaches 1e-6.
Latent fourier_inverse(const FourierField& field);

Mask percentile_threshold(const Heatmap& heatmap, double percentile);
Image composite(const Image& original, const Image& replacement, const Mask& mask);

double l2_distance(std::span<const float> a, std::span<const float> b);
double l2_distance(std::span<const double> a, std::span<const double> b);
double l2_distance(const Image& a, const Image& b);

/// Linear-interpolation percentile of `values` (p in [0,100]).
double percentile_value(std::vector<double> values, double percentile);

}  // namespace wmbench
