#pragma once

#include <complex>
#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmbench/image.hpp"

namespace wmbench {

enum class DType : std::uint8_t { F32 = 1, F64 = 2, Bool = 3, C64 = 4 };

std::size_t dtype_size(DType t);

/// Dense row-major array in the on-disk "WMF1" layout:
///   "WMF1" | dtype (u8) | rank (u8) | dims (u32 LE each) | payload (LE).
struct NdArray {
    DType dtype = DType::F32;
    std::vector<std::uint32_t> dims;
    std::vector<std::uint8_t> payload;

    std::size_t element_count() const;

    static NdArray from_f32(std::vector<std::uint32_t> dims, const std::vector<float>& values);
    static NdArray from_f64(std::vector<std::uint32_t> dims, const std::vector<double>& values);
    static NdArray from_bool(std::vector<std::uint32_t> dims, const std::vector<std::uint8_t>& values);
    static NdArray from_c64(std::vector<std::uint32_t> dims, const std::vector<std::complex<double>>& values);

    std::vector<float> to_f32() const;
    std::vector<double> to_f64() const;
    std::vector<std::uint8_t> to_bool() const;
    std::vector<std::complex<double>> to_c64() const;

    friend bool operator==(const NdArray&, const NdArray&) = default;
};

void write_array(std::ostream& out, const NdArray& array);
NdArray read_array(std::istream& in);
void save_array(const std::filesystem::path& path, const NdArray& array);
NdArray load_array(const std::filesystem::path& path);

/// Versioned container: a JSON header followed by named WMF1 arrays.
/// Used for model checkpoints and Tree-Ring keys.
struct Bundle {
    std::string kind;
    int version = 1;
    nlohmann::json header;
    std::vector<std::pair<std::string, NdArray>> arrays;

    const NdArray& get(const std::string& name) const;
};

void save_bundle(const std::filesystem::path& path, const Bundle& bundle);
Bundle load_bundle(const std::filesystem::path& path);

/// 8-bit RGB PNG. Values are quantized with round-to-nearest.
void save_png(const std::filesystem::path& path, const Image& image);
Image load_png(const std::filesystem::path& path);

/// Convenience wrappers for single-array files.
void save_heatmap(const std::filesystem::path& path, const Heatmap& heatmap);
Heatmap load_heatmap(const std::filesystem::path& path);
void save_mask(const std::filesystem::path& path, const Mask& mask);
Mask load_mask(const std::filesystem::path& path);
void save_latent(const std::filesystem::path& path, const Latent& latent);
Latent load_latent(const std::filesystem::path& path);

}  // namespace wmbench
