#include "wmbench/plot.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "wmbench/array_io.hpp"
#include "wmbench/error.hpp"

namespace wmbench {

namespace {

constexpr int kMargin = 32;

void put(Image& img, int x, int y, const std::array<float, 3>& rgb) {
    if (x < 0 || y < 0 || x >= img.width() || y >= img.height()) return;
    for (int c = 0; c < 3; ++c) img.at(y, x, c) = rgb[static_cast<std::size_t>(c)];
}

void line(Image& img, int x0, int y0, int x1, int y1, const std::array<float, 3>& rgb, bool solid, int thick = 2) {
    const int dx = std::abs(x1 - x0), dy = -std::abs(y1 - y0);
    const int sx = x0 < x1 ? 1 : -1, sy = y0 < y1 ? 1 : -1;
    int err = dx + dy, step = 0;
    for (;;) {
        if (solid || (step / 6) % 2 == 0)
            for (int oy = 0; oy < thick; ++oy)
                for (int ox = 0; ox < thick; ++ox) put(img, x0 + ox, y0 + oy, rgb);
        ++step;
        if (x0 == x1 && y0 == y1) break;
        const int e2 = 2 * err;
        if (e2 >= dy) {
            err += dy;
            x0 += sx;
        }
        if (e2 <= dx) {
            err += dx;
            y0 += sy;
        }
    }
}

void axes(Image& img) {
    const std::array<float, 3> black{0.0f, 0.0f, 0.0f}, grid{0.85f, 0.85f, 0.85f};
    const int w = img.width(), h = img.height();
    for (int i = 1; i < 4; ++i) {
        const int y = kMargin + (h - 2 * kMargin) * i / 4;
        const int x = kMargin + (w - 2 * kMargin) * i / 4;
        line(img, kMargin, y, w - kMargin, y, grid, true, 1);
        line(img, x, kMargin, x, h - kMargin, grid, true, 1);
    }
    line(img, kMargin, h - kMargin, w - kMargin, h - kMargin, black, true, 1);
    line(img, kMargin, kMargin, kMargin, h - kMargin, black, true, 1);
}

void write_legend(const std::filesystem::path& png, const nlohmann::json& legend) {
    auto path = png;
    path.replace_extension(".legend.json");
    std::ofstream out(path);
    if (!out) fail(ErrorKind::IoError, "cannot write " + path.string());
    out << legend.dump(2) << "\n";
}

}  // namespace

std::array<float, 3> palette_color(std::size_t i) {
    static const std::array<std::array<float, 3>, 8> colors = {{{0.12f, 0.47f, 0.71f},
                                                                {1.00f, 0.50f, 0.05f},
                                                                {0.17f, 0.63f, 0.17f},
                                                                {0.84f, 0.15f, 0.16f},
                                                                {0.58f, 0.40f, 0.74f},
                                                                {0.55f, 0.34f, 0.29f},
                                                                {0.89f, 0.47f, 0.76f},
                                                                {0.50f, 0.50f, 0.50f}}};
    return colors[i % colors.size()];
}

LinePlot::LinePlot(double x_min, double x_max, double y_min, double y_max, int width, int height)
    : x_min_(x_min), x_max_(x_max), y_min_(y_min), y_max_(y_max), width_(width), height_(height) {
    require(x_max > x_min && y_max > y_min, "plot ranges must be nonempty");
    require(width > 2 * kMargin && height > 2 * kMargin, "plot is too small");
}

void LinePlot::add_series(const std::string& name, const std::vector<std::pair<double, double>>& points, bool solid) {
    series_.push_back({name, points, solid});
}

Image LinePlot::render() const {
    Image img(height_, width_, 3, 1.0f);
    axes(img);
    const auto px = [&](double x) {
        return kMargin + static_cast<int>(std::lround((x - x_min_) / (x_max_ - x_min_) * (width_ - 2 * kMargin)));
    };
    const auto py = [&](double y) {
        return height_ - kMargin -
               static_cast<int>(std::lround((y - y_min_) / (y_max_ - y_min_) * (height_ - 2 * kMargin)));
    };
    for (std::size_t s = 0; s < series_.size(); ++s) {
        const auto& pts = series_[s].points;
        const auto color = palette_color(s);
        for (std::size_t i = 0; i + 1 < pts.size(); ++i)
            line(img, px(pts[i].first), py(pts[i].second), px(pts[i + 1].first), py(pts[i + 1].second), color,
                 series_[s].solid);
        for (const auto& [x, y] : pts)
            for (int oy = -2; oy <= 2; ++oy)
                for (int ox = -2; ox <= 2; ++ox) put(img, px(x) + ox, py(y) + oy, color);
    }
    return img;
}

void LinePlot::save(const std::filesystem::path& path) const {
    save_png(path, render());
    nlohmann::json legend = {{"x_range", {x_min_, x_max_}}, {"y_range", {y_min_, y_max_}}, {"series", nlohmann::json::array()}};
    for (std::size_t s = 0; s < series_.size(); ++s)
        legend["series"].push_back({{"name", series_[s].name},
                                    {"color", palette_color(s)},
                                    {"style", series_[s].solid ? "solid" : "dashed"}});
    write_legend(path, legend);
}

void save_bar_chart(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& values,
                    int width, int height) {
    require(!values.empty(), "bar chart needs at least one value");
    double top = 0.0;
    for (const auto& [_, v] : values) top = std::max(top, v);
    if (top <= 0.0) top = 1.0;
    Image img(height, width, 3, 1.0f);
    axes(img);
    const int plot_w = width - 2 * kMargin, plot_h = height - 2 * kMargin;
    const int slot = std::max(1, plot_w / static_cast<int>(values.size()));
    nlohmann::json legend = {{"y_max", top}, {"bars", nlohmann::json::array()}};
    for (std::size_t i = 0; i < values.size(); ++i) {
        const int x0 = kMargin + static_cast<int>(i) * slot + slot / 6;
        const int x1 = kMargin + static_cast<int>(i + 1) * slot - slot / 6;
        const int bar_h = static_cast<int>(std::lround(std::max(0.0, values[i].second) / top * plot_h));
        const auto color = palette_color(i);
        for (int y = height - kMargin - bar_h; y < height - kMargin; ++y)
            for (int x = x0; x < x1; ++x) put(img, x, y, color);
        legend["bars"].push_back({{"label", values[i].first}, {"value", values[i].second}, {"color", color}});
    }
    save_png(path, img);
    write_legend(path, legend);
}

}  // namespace wmbench
