#pragma once

#include <array>
#include <filesystem>
#include <string>
#include <utility>
#include <vector>

#include "wmbench/image.hpp"

namespace wmbench {

/// Minimal raster line chart. Series colours come from a fixed palette; the
/// legend is written next to the PNG as <name>.legend.json.
class LinePlot {
public:
    LinePlot(double x_min, double x_max, double y_min, double y_max, int width = 480, int height = 320);

    void add_series(const std::string& name, const std::vector<std::pair<double, double>>& points, bool solid = true);
    Image render() const;
    void save(const std::filesystem::path& path) const;

private:
    struct Series {
        std::string name;
        std::vector<std::pair<double, double>> points;
        bool solid;
    };
    double x_min_, x_max_, y_min_, y_max_;
    int width_, height_;
    std::vector<Series> series_;
};

void save_bar_chart(const std::filesystem::path& path, const std::vector<std::pair<std::string, double>>& values,
                    int width = 480, int height = 320);

/// RGB in [0,1] for palette slot i.
std::array<float, 3> palette_color(std::size_t i);

}  // namespace wmbench
