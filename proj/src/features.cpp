#include "wmbench/features.hpp"

#include "wmbench/error.hpp"

namespace wmbench {

FixedFeatureNet::FixedFeatureNet(std::uint64_t seed, std::vector<Stage> stages, int in_channels) : seed_(seed) {
    Rng rng(seed);
    int in = in_channels;
    for (const auto& s : stages) {
        convs_.emplace_back(in, s.channels, 3, s.stride);
        convs_.back().init_he(rng);
        in = s.channels;
    }
}

std::vector<nn::Tensor> FixedFeatureNet::forward(const nn::Tensor& x) const {
    std::vector<nn::Tensor> acts;
    const nn::Tensor* cur = &x;
    for (const auto& conv : convs_) {
        acts.push_back(nn::relu(conv.forward(*cur)));
        cur = &acts.back();
    }
    return acts;
}

nn::Tensor FixedFeatureNet::backward(const nn::Tensor& x, const std::vector<nn::Tensor>& acts,
                                     const std::vector<nn::Tensor>& grads) const {
    nn::Tensor g = grads.back();
    for (int i = static_cast<int>(convs_.size()) - 1; i >= 0; --i) {
        const nn::Tensor& input = i == 0 ? x : acts[static_cast<std::size_t>(i - 1)];
        g = convs_[static_cast<std::size_t>(i)].backward(input, nn::relu_backward(acts[static_cast<std::size_t>(i)], g),
                                                         false);
        if (i > 0) nn::add_inplace(g, grads[static_cast<std::size_t>(i - 1)]);
    }
    return g;
}

double perceptual_distance(const FixedFeatureNet& net, const nn::Tensor& a, const nn::Tensor& b, nn::Tensor* grad_a) {
    require(a.same_shape(b), "perceptual distance: shape mismatch");
    const auto fa = net.forward(a);
    const auto fb = net.forward(b);
    double total = 0.0;
    std::vector<nn::Tensor> grads;
    for (std::size_t l = 0; l < fa.size(); ++l) {
        const double inv = 1.0 / static_cast<double>(fa[l].size());
        double s = 0.0;
        nn::Tensor g(fa[l].n, fa[l].c, fa[l].h, fa[l].w);
        for (std::size_t i = 0; i < fa[l].size(); ++i) {
            const double d = static_cast<double>(fa[l].data[i]) - fb[l].data[i];
            s += d * d;
            g.data[i] = static_cast<float>(2.0 * d * inv);
        }
        total += s * inv;
        grads.push_back(std::move(g));
    }
    if (grad_a) *grad_a = net.backward(a, fa, grads);
    return total;
}

const FixedFeatureNet& default_perceptual_net() {
    static const FixedFeatureNet net(0x5eed'1995ULL, {{16, 1}, {32, 2}});
    return net;
}

}  // namespace wmbench
