#include "wmbench/nn/tensor.hpp"

#include <algorithm>

#include "wmbench/error.hpp"

namespace wmbench::nn {

Tensor images_to_tensor(std::span<const Image> images) {
    require(!images.empty(), "empty image batch");
    const auto& first = images.front();
    Tensor t(static_cast<int>(images.size()), first.channels(), first.height(), first.width());
    for (int b = 0; b < t.n; ++b) {
        const auto& img = images[static_cast<std::size_t>(b)];
        require(img.same_shape(first), "image batch has mixed shapes");
        for (int y = 0; y < t.h; ++y)
            for (int x = 0; x < t.w; ++x)
                for (int c = 0; c < t.c; ++c) t.at(b, c, y, x) = img.at(y, x, c);
    }
    return t;
}

Tensor image_to_tensor(const Image& image) { return images_to_tensor(std::span<const Image>(&image, 1)); }

Image tensor_to_image(const Tensor& t, int index) {
    require(index >= 0 && index < t.n, "tensor sample index out of range");
    Image img(t.h, t.w, t.c);
    for (int y = 0; y < t.h; ++y)
        for (int x = 0; x < t.w; ++x)
            for (int c = 0; c < t.c; ++c) img.at(y, x, c) = t.at(index, c, y, x);
    img.clamp();
    return img;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    require(a.n == b.n && a.h == b.h && a.w == b.w, "concat shape mismatch");
    Tensor t(a.n, a.c + b.c, a.h, a.w);
    for (int i = 0; i < a.n; ++i) {
        std::copy_n(a.sample(i), a.sample_size(), t.sample(i));
        std::copy_n(b.sample(i), b.sample_size(), t.sample(i) + a.sample_size());
    }
    return t;
}

void split_channels(const Tensor& t, int channels_a, Tensor& a, Tensor& b) {
    a = Tensor(t.n, channels_a, t.h, t.w);
    b = Tensor(t.n, t.c - channels_a, t.h, t.w);
    for (int i = 0; i < t.n; ++i) {
        std::copy_n(t.sample(i), a.sample_size(), a.sample(i));
        std::copy_n(t.sample(i) + a.sample_size(), b.sample_size(), b.sample(i));
    }
}

void add_inplace(Tensor& dst, const Tensor& src, float scale) {
    require(dst.size() == src.size(), "add_inplace size mismatch");
    for (std::size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += scale * src.data[i];
}

}  // namespace wmbench::nn
