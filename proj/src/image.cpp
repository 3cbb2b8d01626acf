#include "wmbench/image.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <unsupported/Eigen/FFT>

#include "wmbench/error.hpp"

namespace wmbench {

const char* to_string(ErrorKind kind) {
    switch (kind) {
        case ErrorKind::InvalidArgument: return "invalid-argument";
        case ErrorKind::NumericalInconsistency: return "numerical-inconsistency";
        case ErrorKind::TrainingDiverged: return "training-diverged";
        case ErrorKind::GenerationFailed: return "generation-failed";
        case ErrorKind::DetectionUnavailable: return "detection-unavailable";
        case ErrorKind::AttackFailed: return "attack-failed";
        case ErrorKind::FeatureBackendMissing: return "feature-backend-missing";
        case ErrorKind::IngestionFailed: return "ingestion-failed";
        case ErrorKind::IoError: return "io-error";
    }
    return "unknown";
}

Image::Image(int height, int width, int channels, float fill)
    : height_(height), width_(width), channels_(channels) {
    require(height >= 8 && width >= 8 && channels > 0, "image must be at least 8x8 with positive channels");
    pixels_.assign(static_cast<std::size_t>(height) * width * channels, fill);
}

Image::Image(int height, int width, int channels, std::vector<float> pixels)
    : height_(height), width_(width), channels_(channels), pixels_(std::move(pixels)) {
    require(height >= 8 && width >= 8 && channels > 0, "image must be at least 8x8 with positive channels");
    require(pixels_.size() == static_cast<std::size_t>(height) * width * channels,
            "pixel buffer does not match image dimensions");
}

void Image::clamp() {
    for (auto& v : pixels_) {
        if (!std::isfinite(v)) v = 0.0f;
        v = std::clamp(v, 0.0f, 1.0f);
    }
}

double Mask::coverage() const {
    return bits.empty() ? 0.0 : static_cast<double>(count()) / static_cast<double>(bits.size());
}

std::size_t Mask::count() const {
    return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), std::uint8_t{1}));
}

Latent to_latent(const Image& image) {
    Latent out(image.channels(), image.height(), image.width());
    for (int y = 0; y < image.height(); ++y)
        for (int x = 0; x < image.width(); ++x)
            for (int c = 0; c < image.channels(); ++c) out.at(c, y, x) = image.at(y, x, c);
    return out;
}

Image to_image(const Latent& planes) {
    Image out(planes.height, planes.width, planes.channels);
    for (int y = 0; y < planes.height; ++y)
        for (int x = 0; x < planes.width; ++x)
            for (int c = 0; c < planes.channels; ++c)
                out.at(y, x, c) = static_cast<float>(planes.at(c, y, x));
    out.clamp();
    return out;
}

Kernel gaussian_kernel(int size, double sigma) {
    require(size >= 1, "kernel size must be >= 1");
    require(sigma > 0.0 && std::isfinite(sigma), "kernel sigma must be positive");
    Kernel k;
    k.size = size;
    k.sigma = sigma;
    k.weights.resize(static_cast<std::size_t>(size) * size);
    const double center = (size - 1) / 2.0;
    double total = 0.0;
    for (int i = 0; i < size; ++i) {
        for (int j = 0; j < size; ++j) {
            const double dy = i - center;
            const double dx = j - center;
            const double w = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma));
            k.weights[static_cast<std::size_t>(i) * size + j] = w;
            total += w;
        }
    }
    for (auto& w : k.weights) w /= total;
    return k;
}

namespace {

// Mirror without repeating the edge sample (dcb|abcd|cba).
int reflect_index(int i, int n) {
    if (n == 1) return 0;
    const int period = 2 * (n - 1);
    i %= period;
    if (i < 0) i += period;
    return i < n ? i : period - i;
}

}  // namespace

Image blur(const Image& image, const Kernel& kernel) {
    require(kernel.size >= 1 && kernel.weights.size() == static_cast<std::size_t>(kernel.size) * kernel.size,
            "malformed kernel");
    require(kernel.size <= image.height() && kernel.size <= image.width(), "kernel larger than image");
    const int s = kernel.size;
    if (s == 1) return image;
    const int anchor = (s - 1) / 2;
    const int h = image.height();
    const int w = image.width();
    const int ch = image.channels();

    // Precompute reflected row/column lookups.
    std::vector<int> rows(static_cast<std::size_t>(h) * s);
    std::vector<int> cols(static_cast<std::size_t>(w) * s);
    for (int y = 0; y < h; ++y)
        for (int i = 0; i < s; ++i) rows[static_cast<std::size_t>(y) * s + i] = reflect_index(y - i + anchor, h);
    for (int x = 0; x < w; ++x)
        for (int j = 0; j < s; ++j) cols[static_cast<std::size_t>(x) * s + j] = reflect_index(x - j + anchor, w);

    Image out(h, w, ch);
    std::vector<double> acc(ch);
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            std::fill(acc.begin(), acc.end(), 0.0);
            for (int i = 0; i < s; ++i) {
                const int sy = rows[static_cast<std::size_t>(y) * s + i];
                for (int j = 0; j < s; ++j) {
                    const double wt = kernel.weights[static_cast<std::size_t>(i) * s + j];
                    const int sx = cols[static_cast<std::size_t>(x) * s + j];
                    for (int c = 0; c < ch; ++c) acc[c] += wt * image.at(sy, sx, c);
                }
            }
            for (int c = 0; c < ch; ++c) out.at(y, x, c) = static_cast<float>(acc[c]);
        }
    }
    out.clamp();
    return out;
}

Image rotate(const Image& image, double degrees) {
    require(std::isfinite(degrees), "rotation angle must be finite");
    if (std::fmod(degrees, 360.0) == 0.0) return image;
    const int h = image.height();
    const int w = image.width();
    const int ch = image.channels();
    const double theta = degrees * std::acos(-1.0) / 180.0;
    const double cs = std::cos(theta);
    const double sn = std::sin(theta);
    const double cx = (w - 1) / 2.0;
    const double cy = (h - 1) / 2.0;

    Image out(h, w, ch, 0.0f);
    auto sample = [&](int yy, int xx, int c) -> double {
        if (yy < 0 || yy >= h || xx < 0 || xx >= w) return 0.0;
        return image.at(yy, xx, c);
    };
    for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
            // Counter-clockwise on screen (y down): inverse-map output to source.
            const double dx = x - cx;
            const double dy = y - cy;
            double sx = cs * dx - sn * dy + cx;
            double sy = sn * dx + cs * dy + cy;
            const double rx = std::round(sx);
            const double ry = std::round(sy);
            if (std::abs(sx - rx) < 1e-9) sx = rx;
            if (std::abs(sy - ry) < 1e-9) sy = ry;
            if (sx <= -1.0 || sy <= -1.0 || sx >= w || sy >= h) continue;
            const int x0 = static_cast<int>(std::floor(sx));
            const int y0 = static_cast<int>(std::floor(sy));
            const double fx = sx - x0;
            const double fy = sy - y0;
            for (int c = 0; c < ch; ++c) {
                const double v = (1 - fy) * ((1 - fx) * sample(y0, x0, c) + fx * sample(y0, x0 + 1, c)) +
                                 fy * ((1 - fx) * sample(y0 + 1, x0, c) + fx * sample(y0 + 1, x0 + 1, c));
                out.at(y, x, c) = static_cast<float>(v);
            }
        }
    }
    out.clamp();
    return out;
}

namespace {

void fft2_plane(std::vector<std::complex<double>>& plane, int h, int w, bool inverse) {
    Eigen::FFT<double> fft;
    std::vector<std::complex<double>> line_in, line_out;
    line_in.resize(w);
    for (int y = 0; y < h; ++y) {
        std::copy_n(plane.begin() + static_cast<std::ptrdiff_t>(y) * w, w, line_in.begin());
        if (inverse)
            fft.inv(line_out, line_in);
        else
            fft.fwd(line_out, line_in);
        std::copy_n(line_out.begin(), w, plane.begin() + static_cast<std::ptrdiff_t>(y) * w);
    }
    line_in.resize(h);
    for (int x = 0; x < w; ++x) {
        for (int y = 0; y < h; ++y) line_in[y] = plane[static_cast<std::size_t>(y) * w + x];
        if (inverse)
            fft.inv(line_out, line_in);
        else
            fft.fwd(line_out, line_in);
        for (int y = 0; y < h; ++y) plane[static_cast<std::size_t>(y) * w + x] = line_out[y];
    }
}

// shift = +1 moves zero frequency to the center, -1 undoes it.
void shift_plane(std::vector<std::complex<double>>& plane, int h, int w, int direction) {
    std::vector<std::complex<double>> tmp(plane.size());
    const int oy = direction > 0 ? h / 2 : (h + 1) / 2;
    const int ox = direction > 0 ? w / 2 : (w + 1) / 2;
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < w; ++x)
            tmp[static_cast<std::size_t>((y + oy) % h) * w + (x + ox) % w] = plane[static_cast<std::size_t>(y) * w + x];
    plane.swap(tmp);
}

}  // namespace

FourierField fourier_forward(const Latent& field) {
    require(field.channels > 0 && field.height > 0 && field.width > 0, "empty field");
    FourierField out;
    out.channels = field.channels;
    out.height = field.height;
    out.width = field.width;
    out.coefficients.resize(field.values.size());
    const std::size_t n = field.plane();
    std::vector<std::complex<double>> plane(n);
    for (int c = 0; c < field.channels; ++c) {
        for (std::size_t i = 0; i < n; ++i) plane[i] = field.values[c * n + i];
        fft2_plane(plane, field.height, field.width, false);
        shift_plane(plane, field.height, field.width, +1);
        std::copy(plane.begin(), plane.end(), out.coefficients.begin() + static_cast<std::ptrdiff_t>(c * n));
    }
    return out;
}

FourierField fourier_forward(const Image& image) { return fourier_forward(to_latent(image)); }

Latent fourier_inverse(const FourierField& field) {
    Latent out(field.channels, field.height, field.width);
    const std::size_t n = field.plane();
    std::vector<std::complex<double>> plane(n);
    double max_imag = 0.0;
    for (int c = 0; c < field.channels; ++c) {
        std::copy_n(field.coefficients.begin() + static_cast<std::ptrdiff_t>(c * n), n, plane.begin());
        shift_plane(plane, field.height, field.width, -1);
        fft2_plane(plane, field.height, field.width, true);
        for (std::size_t i = 0; i < n; ++i) {
            out.values[c * n + i] = plane[i].real();
            max_imag = std::max(max_imag, std::abs(plane[i].imag()));
        }
    }
    if (!(max_imag < 1e-6))
        fail(ErrorKind::NumericalInconsistency,
             "inverse transform left an imaginary residual of " + std::to_string(max_imag));
    return out;
}

double percentile_value(std::vector<double> values, double percentile) {
    require(!values.empty(), "percentile of empty set");
    std::sort(values.begin(), values.end());
    const double pos = percentile / 100.0 * static_cast<double>(values.size() - 1);
    const auto lo = static_cast<std::size_t>(std::floor(pos));
    const auto hi = std::min(lo + 1, values.size() - 1);
    const double frac = pos - static_cast<double>(lo);
    return values[lo] + frac * (values[hi] - values[lo]);
}

Mask percentile_threshold(const Heatmap& heatmap, double percentile) {
    require(percentile >= 0.0 && percentile < 100.0, "percentile must lie in [0,100)");
    require(heatmap.values.size() == static_cast<std::size_t>(heatmap.height) * heatmap.width && !heatmap.values.empty(),
            "malformed heatmap");
    Mask mask(heatmap.height, heatmap.width);
    if (percentile == 0.0) {
        std::fill(mask.bits.begin(), mask.bits.end(), std::uint8_t{1});
        return mask;
    }
    const double t = percentile_value(std::vector<double>(heatmap.values.begin(), heatmap.values.end()), percentile);
    for (std::size_t i = 0; i < heatmap.values.size(); ++i) mask.bits[i] = heatmap.values[i] >= t ? 1 : 0;
    return mask;
}

Image composite(const Image& original, const Image& replacement, const Mask& mask) {
    require(original.same_shape(replacement), "composite: image shapes differ");
    require(mask.height == original.height() && mask.width == original.width(), "composite: mask shape differs");
    Image out = original;
    for (int y = 0; y < original.height(); ++y)
        for (int x = 0; x < original.width(); ++x)
            if (mask.at(y, x))
                for (int c = 0; c < original.channels(); ++c) out.at(y, x, c) = replacement.at(y, x, c);
    return out;
}

double l2_distance(std::span<const float> a, std::span<const float> b) {
    require(a.size() == b.size(), "l2_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = static_cast<double>(a[i]) - static_cast<double>(b[i]);
        s += d * d;
    }
    return std::sqrt(s);
}

double l2_distance(std::span<const double> a, std::span<const double> b) {
    require(a.size() == b.size(), "l2_distance: shape mismatch");
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += (a[i] - b[i]) * (a[i] - b[i]);
    return std::sqrt(s);
}

double l2_distance(const Image& a, const Image& b) {
    require(a.same_shape(b), "l2_distance: shape mismatch");
    return l2_distance(a.pixels(), b.pixels());
}

}  // namespace wmbench
