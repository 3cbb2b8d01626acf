#include "wmbench/saliency.hpp"

#include <algorithm>
#include <charconv>

#include "wmbench/error.hpp"
#include "wmbench/nn/layers.hpp"

namespace wmbench {

int parse_layer(const std::string& name, const StegaParams& stega) {
    const int layers = stega.decoder.conv_layers();
    if (name == "last-conv") return layers - 1;
    std::string digits = name.rfind("conv", 0) == 0 ? name.substr(4) : name;
    int value = 0;
    const auto [ptr, ec] = std::from_chars(digits.data(), digits.data() + digits.size(), value);
    if (ec != std::errc() || ptr != digits.data() + digits.size() || digits.empty())
        fail(ErrorKind::InvalidArgument, "invalid layer id '" + name + "'");
    if (value < 0 || value >= layers)
        fail(ErrorKind::InvalidArgument,
             "layer id '" + name + "' is not a conv layer (decoder has " + std::to_string(layers) + ")");
    return value;
}

CamInputs gradcam_inputs(const StegaParams& stega, std::span<const Image> images, int layer) {
    const int layers = stega.decoder.conv_layers();
    if (layer == kLastConvLayer) layer = layers - 1;
    if (layer < 0 || layer >= layers) fail(ErrorKind::InvalidArgument, "invalid GradCAM layer " + std::to_string(layer));
    require(!images.empty(), "gradcam needs at least one image");
    for (const auto& img : images)
        require(img.height() == stega.arch.resolution && img.width() == stega.arch.resolution && img.channels() == 3,
                "image does not match the decoder resolution");

    const auto trace = stega.decoder.forward(nn::images_to_tensor(images));
    CamInputs out;
    out.layer = layer;
    out.signs.resize(trace.logits.size());
    nn::Tensor dlogits(trace.logits.n, trace.logits.c, 1, 1);
    for (std::size_t i = 0; i < trace.logits.size(); ++i) {
        out.signs[i] = trace.logits.data[i] >= 0.0f ? 1.0f : -1.0f;
        dlogits.data[i] = out.signs[i];
    }
    std::vector<nn::Tensor> conv_grads;
    stega.decoder.backward(trace, dlogits, false, &conv_grads);
    out.activation = trace.conv_out[static_cast<std::size_t>(layer)];
    out.gradient = std::move(conv_grads[static_cast<std::size_t>(layer)]);
    return out;
}

Heatmap cam_heatmap(const CamInputs& in, int sample, int height, int width) {
    const auto& a = in.activation;
    const auto plane = a.plane();
    nn::Tensor cam(1, 1, a.h, a.w);
    for (int c = 0; c < a.c; ++c) {
        const float* g = in.gradient.sample(sample) + static_cast<std::size_t>(c) * plane;
        const float* act = a.sample(sample) + static_cast<std::size_t>(c) * plane;
        double mean = 0.0;
        for (std::size_t i = 0; i < plane; ++i) mean += g[i];
        const auto weight = static_cast<float>(mean / static_cast<double>(plane));
        for (std::size_t i = 0; i < plane; ++i) cam.data[i] += weight * act[i];
    }
    for (auto& v : cam.data) v = std::max(v, 0.0f);

    Heatmap hm;
    hm.height = height;
    hm.width = width;
    hm.source_layer = in.layer;
    hm.values.assign(static_cast<std::size_t>(height) * width, 0.0f);
    const auto [lo_it, hi_it] = std::minmax_element(cam.data.begin(), cam.data.end());
    if (*lo_it == *hi_it) return hm;
    const auto up = nn::resize_bilinear(cam, height, width);
    const auto [ulo, uhi] = std::minmax_element(up.data.begin(), up.data.end());
    const float lo = *ulo, range = *uhi - *ulo;
    if (!(range > 0.0f)) return hm;
    for (std::size_t i = 0; i < hm.values.size(); ++i) hm.values[i] = std::clamp((up.data[i] - lo) / range, 0.0f, 1.0f);
    return hm;
}

std::vector<Heatmap> gradcam_batch(const StegaParams& stega, std::span<const Image> images, int layer) {
    std::vector<Heatmap> out;
    out.reserve(images.size());
    constexpr std::size_t chunk = 32;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const auto part = images.subspan(start, std::min(chunk, images.size() - start));
        const auto in = gradcam_inputs(stega, part, layer);
        for (std::size_t b = 0; b < part.size(); ++b)
            out.push_back(cam_heatmap(in, static_cast<int>(b), part[b].height(), part[b].width()));
    }
    return out;
}

Heatmap gradcam(const StegaParams& stega, const Image& image, int layer) {
    return std::move(gradcam_batch(stega, std::span<const Image>(&image, 1), layer).front());
}

}  // namespace wmbench
