#include "wmbench/array_io.hpp"

#include <png.h>

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <memory>

#include "wmbench/error.hpp"

namespace wmbench {

static_assert(std::endian::native == std::endian::little, "WMF1 payloads are written in native little-endian order");

namespace {

constexpr char kMagic[4] = {'W', 'M', 'F', '1'};
constexpr char kBundleMagic[8] = {'W', 'M', 'B', 'U', 'N', 'D', 'L', '1'};

template <typename T>
std::vector<std::uint8_t> to_bytes(const T* data, std::size_t n) {
    std::vector<std::uint8_t> out(n * sizeof(T));
    std::memcpy(out.data(), data, out.size());
    return out;
}

template <typename T>
std::vector<T> from_bytes(const std::vector<std::uint8_t>& bytes) {
    std::vector<T> out(bytes.size() / sizeof(T));
    std::memcpy(out.data(), bytes.data(), out.size() * sizeof(T));
    return out;
}

void write_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t read_u32(std::istream& in) {
    std::uint32_t v = 0;
    in.read(reinterpret_cast<char*>(&v), 4);
    if (!in) fail(ErrorKind::IoError, "truncated array header");
    return v;
}

std::size_t product(const std::vector<std::uint32_t>& dims) {
    std::size_t n = 1;
    for (auto d : dims) n *= d;
    return n;
}

}  // namespace

std::size_t dtype_size(DType t) {
    switch (t) {
        case DType::F32: return 4;
        case DType::F64: return 8;
        case DType::Bool: return 1;
        case DType::C64: return 8;
    }
    fail(ErrorKind::IoError, "unknown dtype code");
}

std::size_t NdArray::element_count() const { return product(dims); }

NdArray NdArray::from_f32(std::vector<std::uint32_t> dims, const std::vector<float>& values) {
    require(product(dims) == values.size(), "array dims do not match value count");
    return {DType::F32, std::move(dims), to_bytes(values.data(), values.size())};
}

NdArray NdArray::from_f64(std::vector<std::uint32_t> dims, const std::vector<double>& values) {
    require(product(dims) == values.size(), "array dims do not match value count");
    return {DType::F64, std::move(dims), to_bytes(values.data(), values.size())};
}

NdArray NdArray::from_bool(std::vector<std::uint32_t> dims, const std::vector<std::uint8_t>& values) {
    require(product(dims) == values.size(), "array dims do not match value count");
    std::vector<std::uint8_t> bytes(values.size());
    for (std::size_t i = 0; i < values.size(); ++i) bytes[i] = values[i] ? 1 : 0;
    return {DType::Bool, std::move(dims), std::move(bytes)};
}

NdArray NdArray::from_c64(std::vector<std::uint32_t> dims, const std::vector<std::complex<double>>& values) {
    require(product(dims) == values.size(), "array dims do not match value count");
    std::vector<std::complex<float>> narrowed(values.begin(), values.end());
    return {DType::C64, std::move(dims), to_bytes(narrowed.data(), narrowed.size())};
}

std::vector<float> NdArray::to_f32() const {
    if (dtype == DType::F32) return from_bytes<float>(payload);
    if (dtype == DType::F64) {
        auto d = from_bytes<double>(payload);
        return {d.begin(), d.end()};
    }
    fail(ErrorKind::IoError, "array is not real-valued");
}

std::vector<double> NdArray::to_f64() const {
    if (dtype == DType::F64) return from_bytes<double>(payload);
    if (dtype == DType::F32) {
        auto f = from_bytes<float>(payload);
        return {f.begin(), f.end()};
    }
    fail(ErrorKind::IoError, "array is not real-valued");
}

std::vector<std::uint8_t> NdArray::to_bool() const {
    if (dtype != DType::Bool) fail(ErrorKind::IoError, "array is not boolean");
    return payload;
}

std::vector<std::complex<double>> NdArray::to_c64() const {
    if (dtype != DType::C64) fail(ErrorKind::IoError, "array is not complex");
    auto f = from_bytes<std::complex<float>>(payload);
    return {f.begin(), f.end()};
}

void write_array(std::ostream& out, const NdArray& array) {
    require(array.dims.size() <= 255, "array rank exceeds 255");
    require(array.payload.size() == array.element_count() * dtype_size(array.dtype), "array payload size mismatch");
    out.write(kMagic, 4);
    out.put(static_cast<char>(array.dtype));
    out.put(static_cast<char>(array.dims.size()));
    for (auto d : array.dims) write_u32(out, d);
    out.write(reinterpret_cast<const char*>(array.payload.data()), static_cast<std::streamsize>(array.payload.size()));
    if (!out) fail(ErrorKind::IoError, "failed writing array");
}

NdArray read_array(std::istream& in) {
    char magic[4];
    in.read(magic, 4);
    if (!in || std::memcmp(magic, kMagic, 4) != 0) fail(ErrorKind::IoError, "missing WMF1 magic");
    NdArray a;
    const int code = in.get();
    const int rank = in.get();
    if (!in || code < 1 || code > 4) fail(ErrorKind::IoError, "bad dtype code");
    a.dtype = static_cast<DType>(code);
    a.dims.resize(static_cast<std::size_t>(rank));
    for (auto& d : a.dims) d = read_u32(in);
    a.payload.resize(a.element_count() * dtype_size(a.dtype));
    in.read(reinterpret_cast<char*>(a.payload.data()), static_cast<std::streamsize>(a.payload.size()));
    if (!in) fail(ErrorKind::IoError, "truncated array payload");
    return a;
}

void save_array(const std::filesystem::path& path, const NdArray& array) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    write_array(out, array);
}

NdArray load_array(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    return read_array(in);
}

const NdArray& Bundle::get(const std::string& name) const {
    for (const auto& [n, a] : arrays)
        if (n == name) return a;
    fail(ErrorKind::IoError, "bundle has no array named '" + name + "'");
}

void save_bundle(const std::filesystem::path& path, const Bundle& bundle) {
    std::ofstream out(path, std::ios::binary);
    if (!out) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    nlohmann::json head = {{"kind", bundle.kind}, {"version", bundle.version}, {"header", bundle.header}};
    nlohmann::json names = nlohmann::json::array();
    for (const auto& [n, a] : bundle.arrays) names.push_back(n);
    head["arrays"] = names;
    const std::string text = head.dump(2) + "\n";
    out.write(kBundleMagic, 8);
    write_u32(out, static_cast<std::uint32_t>(text.size()));
    out.write(text.data(), static_cast<std::streamsize>(text.size()));
    for (const auto& [n, a] : bundle.arrays) write_array(out, a);
    if (!out) fail(ErrorKind::IoError, "failed writing " + path.string());
}

Bundle load_bundle(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    char magic[8];
    in.read(magic, 8);
    if (!in || std::memcmp(magic, kBundleMagic, 8) != 0) fail(ErrorKind::IoError, path.string() + " is not a bundle");
    const auto len = read_u32(in);
    std::string text(len, '\0');
    in.read(text.data(), len);
    if (!in) fail(ErrorKind::IoError, "truncated bundle header");
    nlohmann::json head;
    try {
        head = nlohmann::json::parse(text);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::IoError, std::string("bad bundle header: ") + e.what());
    }
    Bundle b;
    b.kind = head.at("kind").get<std::string>();
    b.version = head.at("version").get<int>();
    b.header = head.at("header");
    for (const auto& n : head.at("arrays")) b.arrays.emplace_back(n.get<std::string>(), read_array(in));
    return b;
}

namespace {

struct FileCloser {
    void operator()(std::FILE* f) const {
        if (f) std::fclose(f);
    }
};

// Keeps libpng quiet on stderr; the message ends up in the thrown error.
void png_error_to_string(png_structp png, png_const_charp msg) {
    if (auto* out = static_cast<std::string*>(png_get_error_ptr(png))) *out = msg;
    png_longjmp(png, 1);
}

void png_ignore_warning(png_structp, png_const_charp) {}

}  // namespace

void save_png(const std::filesystem::path& path, const Image& image) {
    require(image.channels() == 3 || image.channels() == 1, "PNG export needs 1 or 3 channels");
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "wb"));
    if (!fp) fail(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
    std::string png_message;
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, &png_message, png_error_to_string, png_ignore_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::IoError, "libpng initialization failed");
    }
    const int h = image.height();
    const int w = image.width();
    const int ch = image.channels();
    std::vector<png_byte> buffer(static_cast<std::size_t>(h) * w * ch);
    auto px = image.pixels();
    for (std::size_t i = 0; i < buffer.size(); ++i) {
        const float v = std::clamp(px[i], 0.0f, 1.0f);
        buffer[i] = static_cast<png_byte>(std::lround(v * 255.0f));
    }
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * ch;
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_write_struct(&png, &info);
        fail(ErrorKind::IoError, "failed writing PNG " + path.string() + ": " + png_message);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, w, h, 8, ch == 3 ? PNG_COLOR_TYPE_RGB : PNG_COLOR_TYPE_GRAY, PNG_INTERLACE_NONE,
                 PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
}

Image load_png(const std::filesystem::path& path) {
    std::unique_ptr<std::FILE, FileCloser> fp(std::fopen(path.c_str(), "rb"));
    if (!fp) fail(ErrorKind::IoError, "cannot open " + path.string());
    std::string png_message;
    png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, &png_message, png_error_to_string, png_ignore_warning);
    png_infop info = png ? png_create_info_struct(png) : nullptr;
    if (!png || !info) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::IoError, "libpng initialization failed");
    }
    if (setjmp(png_jmpbuf(png))) {
        png_destroy_read_struct(&png, &info, nullptr);
        fail(ErrorKind::IoError, "failed reading PNG " + path.string() + ": " + png_message);
    }
    png_init_io(png, fp.get());
    png_read_info(png, info);
    // Normalize everything to 8-bit RGB.
    png_set_strip_16(png);
    png_set_strip_alpha(png);
    png_set_packing(png);
    const auto color = png_get_color_type(png, info);
    if (color == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
    if (color == PNG_COLOR_TYPE_GRAY || color == PNG_COLOR_TYPE_GRAY_ALPHA) {
        if (png_get_bit_depth(png, info) < 8) png_set_expand_gray_1_2_4_to_8(png);
        png_set_gray_to_rgb(png);
    }
    png_read_update_info(png, info);
    const int h = static_cast<int>(png_get_image_height(png, info));
    const int w = static_cast<int>(png_get_image_width(png, info));
    const int ch = png_get_channels(png, info);
    std::vector<png_byte> buffer(static_cast<std::size_t>(h) * w * ch);
    std::vector<png_bytep> rows(h);
    for (int y = 0; y < h; ++y) rows[y] = buffer.data() + static_cast<std::size_t>(y) * w * ch;
    png_read_image(png, rows.data());
    png_read_end(png, nullptr);
    png_destroy_read_struct(&png, &info, nullptr);
    if (ch != 3) fail(ErrorKind::IoError, "unsupported PNG channel layout in " + path.string());
    std::vector<float> px(buffer.size());
    for (std::size_t i = 0; i < buffer.size(); ++i) px[i] = static_cast<float>(buffer[i]) / 255.0f;
    return Image(h, w, 3, std::move(px));
}

void save_heatmap(const std::filesystem::path& path, const Heatmap& heatmap) {
    save_array(path, NdArray::from_f32({static_cast<std::uint32_t>(heatmap.height),
                                        static_cast<std::uint32_t>(heatmap.width)},
                                       heatmap.values));
}

Heatmap load_heatmap(const std::filesystem::path& path) {
    const auto a = load_array(path);
    if (a.dims.size() != 2) fail(ErrorKind::IoError, "heatmap must be rank 2");
    Heatmap h;
    h.height = static_cast<int>(a.dims[0]);
    h.width = static_cast<int>(a.dims[1]);
    h.values = a.to_f32();
    return h;
}

void save_mask(const std::filesystem::path& path, const Mask& mask) {
    save_array(path, NdArray::from_bool({static_cast<std::uint32_t>(mask.height), static_cast<std::uint32_t>(mask.width)},
                                        mask.bits));
}

Mask load_mask(const std::filesystem::path& path) {
    const auto a = load_array(path);
    if (a.dims.size() != 2) fail(ErrorKind::IoError, "mask must be rank 2");
    Mask m;
    m.height = static_cast<int>(a.dims[0]);
    m.width = static_cast<int>(a.dims[1]);
    m.bits = a.to_bool();
    return m;
}

void save_latent(const std::filesystem::path& path, const Latent& latent) {
    save_array(path, NdArray::from_f64({static_cast<std::uint32_t>(latent.channels),
                                        static_cast<std::uint32_t>(latent.height),
                                        static_cast<std::uint32_t>(latent.width)},
                                       latent.values));
}

Latent load_latent(const std::filesystem::path& path) {
    const auto a = load_array(path);
    if (a.dims.size() != 3) fail(ErrorKind::IoError, "latent must be rank 3");
    Latent l(static_cast<int>(a.dims[0]), static_cast<int>(a.dims[1]), static_cast<int>(a.dims[2]));
    l.values = a.to_f64();
    return l;
}

}  // namespace wmbench
