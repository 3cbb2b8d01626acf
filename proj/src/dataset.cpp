#include "wmbench/dataset.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>

#include "wmbench/array_io.hpp"
#include "wmbench/error.hpp"
#include "wmbench/hash.hpp"
#include "wmbench/nn/layers.hpp"
#include "wmbench/rng.hpp"

namespace wmbench {

namespace {

using Color = std::array<float, 3>;

Color random_color(Rng& rng) {
    std::uniform_real_distribution<float> u(0.05f, 0.95f);
    return {u(rng), u(rng), u(rng)};
}

bool inside_triangle(double px, double py, const std::array<double, 6>& t) {
    auto edge = [&](int a, int b) {
        return (t[2 * b] - t[2 * a]) * (py - t[2 * a + 1]) - (t[2 * b + 1] - t[2 * a + 1]) * (px - t[2 * a]);
    };
    const double e0 = edge(0, 1), e1 = edge(1, 2), e2 = edge(2, 0);
    return (e0 >= 0 && e1 >= 0 && e2 >= 0) || (e0 <= 0 && e1 <= 0 && e2 <= 0);
}

}  // namespace

Image procedural_image(std::uint64_t seed, int size) {
    require(size >= 8, "procedural image size must be at least 8");
    Rng rng(seed);
    std::uniform_real_distribution<double> u(0.0, 1.0);
    Image img(size, size, 3);

    const Color c0 = random_color(rng), c1 = random_color(rng);
    const double angle = 2.0 * std::numbers::pi * u(rng);
    const double dx = std::cos(angle), dy = std::sin(angle);
    // A few random low-frequency sinusoids for shading.
    struct Wave {
        double fx, fy, phase, amp;
    };
    std::array<Wave, 3> waves{};
    for (auto& w : waves) w = {(u(rng) - 0.5) * 6.0, (u(rng) - 0.5) * 6.0, 2 * std::numbers::pi * u(rng), 0.04 + 0.06 * u(rng)};

    for (int y = 0; y < size; ++y)
        for (int x = 0; x < size; ++x) {
            const double nx = (x + 0.5) / size, ny = (y + 0.5) / size;
            const double t = std::clamp(0.5 + (nx - 0.5) * dx + (ny - 0.5) * dy, 0.0, 1.0);
            double shade = 0.0;
            for (const auto& w : waves) shade += w.amp * std::sin(2 * std::numbers::pi * (w.fx * nx + w.fy * ny) + w.phase);
            for (int c = 0; c < 3; ++c)
                img.at(y, x, c) = static_cast<float>((1 - t) * c0[c] + t * c1[c] + shade);
        }

    const int shapes = 3 + static_cast<int>(u(rng) * 4);
    for (int s = 0; s < shapes; ++s) {
        const Color col = random_color(rng);
        const int kind = static_cast<int>(u(rng) * 3);
        const double cx = u(rng) * size, cy = u(rng) * size;
        const double r = size * (0.08 + 0.22 * u(rng));
        const double alpha = 0.6 + 0.4 * u(rng);
        std::array<double, 6> tri{};
        for (int i = 0; i < 3; ++i) {
            const double a = 2 * std::numbers::pi * u(rng);
            tri[2 * i] = cx + r * std::cos(a);
            tri[2 * i + 1] = cy + r * std::sin(a);
        }
        const double rw = r * (0.5 + u(rng)), rh = r * (0.5 + u(rng));
        for (int y = 0; y < size; ++y)
            for (int x = 0; x < size; ++x) {
                const double px = x + 0.5, py = y + 0.5;
                bool in = false;
                if (kind == 0)
                    in = (px - cx) * (px - cx) + (py - cy) * (py - cy) <= r * r;
                else if (kind == 1)
                    in = std::abs(px - cx) <= rw && std::abs(py - cy) <= rh;
                else
                    in = inside_triangle(px, py, tri);
                if (!in) continue;
                for (int c = 0; c < 3; ++c)
                    img.at(y, x, c) = static_cast<float>((1 - alpha) * img.at(y, x, c) + alpha * col[c]);
            }
    }

    std::normal_distribution<float> grain(0.0f, 0.015f);
    for (auto& v : img.pixels()) v += grain(rng);
    img.clamp();
    return img;
}

std::vector<Image> procedural_corpus(std::uint64_t seed, std::size_t count, int size) {
    std::vector<Image> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) out.push_back(procedural_image(derive_seed({seed, i}), size));
    return out;
}

std::string image_sha256(const Image& image) {
    const auto px = image.pixels();
    return sha256_hex(px.data(), px.size_bytes());
}

std::vector<DatasetEntry> ingest_directory(const std::filesystem::path& dir, int size) {
    if (!std::filesystem::is_directory(dir)) fail(ErrorKind::IngestionFailed, dir.string() + " is not a directory");
    std::vector<std::filesystem::path> files;
    for (const auto& e : std::filesystem::directory_iterator(dir))
        if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    std::sort(files.begin(), files.end());
    std::vector<DatasetEntry> out;
    for (const auto& f : files) {
        Image img;
        try {
            img = load_png(f);
        } catch (const Error& e) {
            fail(ErrorKind::IngestionFailed, "cannot read " + f.string() + ": " + e.what());
        }
        if (img.height() != size || img.width() != size) {
            const auto t = nn::resize_bilinear(nn::image_to_tensor(img), size, size);
            img = nn::tensor_to_image(t);
        }
        out.push_back({f.stem().string(), image_sha256(img), std::move(img)});
    }
    if (out.empty()) fail(ErrorKind::IngestionFailed, "no PNG images found in " + dir.string());
    return out;
}

}  // namespace wmbench
