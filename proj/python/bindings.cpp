#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include <cstring>

#include "wmbench/array_io.hpp"
#include "wmbench/attacks.hpp"
#include "wmbench/dataset.hpp"
#include "wmbench/error.hpp"
#include "wmbench/evaluate.hpp"
#include "wmbench/harness.hpp"
#include "wmbench/metrics.hpp"
#include "wmbench/remover.hpp"
#include "wmbench/saliency.hpp"
#include "wmbench/stegastamp.hpp"
#include "wmbench/treering.hpp"

namespace py = pybind11;
using namespace wmbench;

namespace {

using FloatArray = py::array_t<float, py::array::c_style | py::array::forcecast>;

// Images cross the boundary as H×W×C float32 arrays in [0, 1].
Image to_image(const FloatArray& a) {
    if (a.ndim() != 3) throw py::value_error("expected an H x W x C array");
    Image img(static_cast<int>(a.shape(0)), static_cast<int>(a.shape(1)), static_cast<int>(a.shape(2)));
    std::memcpy(img.pixels().data(), a.data(), img.size() * sizeof(float));
    return img;
}

FloatArray to_array(const Image& img) {
    FloatArray a({img.height(), img.width(), img.channels()});
    std::memcpy(a.mutable_data(), img.pixels().data(), img.size() * sizeof(float));
    return a;
}

FloatArray heatmap_array(const Heatmap& h) {
    FloatArray a({h.height, h.width});
    std::memcpy(a.mutable_data(), h.values.data(), h.values.size() * sizeof(float));
    return a;
}

py::array_t<bool> mask_array(const Mask& m) {
    py::array_t<bool> a({m.height, m.width});
    auto* out = a.mutable_data();
    for (std::size_t i = 0; i < m.bits.size(); ++i) out[i] = m.bits[i] != 0;
    return a;
}

py::dict attack_dict(const AttackOutput& o) {
    py::dict d;
    d["image"] = to_array(o.image);
    d["mask"] = mask_array(o.mask);
    if (!o.heatmap.values.empty()) d["heatmap"] = heatmap_array(o.heatmap);
    return d;
}

py::dict detection_dict(const DetectionResult& r) {
    py::dict d;
    d["distance"] = r.distance;
    d["score"] = r.score;
    d["p_value"] = r.p_value;
    d["detected"] = r.detected;
    return d;
}

LBAConfig lba_config(double percentile, int kernel) {
    LBAConfig c;
    c.percentile = percentile;
    c.kernel = kernel;
    return c;
}

}  // namespace

PYBIND11_MODULE(_core, m) {
    m.doc() = "Watermark embedding, removal, attack and evaluation workbench";

    py::register_exception<Error>(m, "Error", PyExc_RuntimeError);

    // Image primitives
    m.def("gaussian_kernel", [](int size, double sigma) {
        const auto k = gaussian_kernel(size, sigma);
        py::array_t<double> a({k.size, k.size});
        std::memcpy(a.mutable_data(), k.weights.data(), k.weights.size() * sizeof(double));
        return a;
    });
    m.def("blur", [](const FloatArray& img, int size, double sigma) { return to_array(blur(to_image(img), gaussian_kernel(size, sigma))); },
          py::arg("image"), py::arg("size"), py::arg("sigma"));
    m.def("rotate", [](const FloatArray& img, double deg) { return to_array(rotate(to_image(img), deg)); });
    m.def("load_png", [](const std::filesystem::path& p) { return to_array(load_png(p)); });
    m.def("save_png", [](const std::filesystem::path& p, const FloatArray& img) { save_png(p, to_image(img)); });
    m.def("procedural_image", [](std::uint64_t seed, int size) { return to_array(procedural_image(seed, size)); },
          py::arg("seed"), py::arg("size") = 64);

    // StegaStamp
    py::class_<StegaParams>(m, "StegaParams")
        .def_static("load", &StegaParams::load)
        .def("save", &StegaParams::save)
        .def_property_readonly("bits", [](const StegaParams& p) { return p.arch.bits; })
        .def_property_readonly("resolution", [](const StegaParams& p) { return p.arch.resolution; })
        .def_property_readonly("arch", [](const StegaParams& p) { return p.arch.to_json().dump(); });
    m.def("stega_create", [](int resolution, int bits, std::uint64_t seed) {
        StegaArch a;
        a.resolution = resolution;
        a.bits = bits;
        return StegaParams::create(a, seed);
    }, py::arg("resolution") = 64, py::arg("bits") = 32, py::arg("seed") = 1);
    m.def("stega_encode", [](const FloatArray& img, const std::string& hex, const StegaParams& p) {
        return to_array(stega_encode(to_image(img), BitMessage::from_hex(hex, p.arch.bits), p).encoded);
    });
    m.def("stega_decode", [](const FloatArray& img, const StegaParams& p) {
        const auto d = stega_decode(to_image(img), p);
        return py::make_tuple(d.message.to_hex(), d.logits);
    });
    m.def("gradcam", [](const StegaParams& p, const FloatArray& img, int layer) { return heatmap_array(gradcam(p, to_image(img), layer)); },
          py::arg("params"), py::arg("image"), py::arg("layer") = kLastConvLayer);

    // Tree-Ring
    py::class_<TreeRingKey>(m, "TreeRingKey")
        .def_static("load", &TreeRingKey::load)
        .def("save", &TreeRingKey::save)
        .def_readonly("radius", &TreeRingKey::radius)
        .def_readonly("channel", &TreeRingKey::channel);
    py::class_<LatentGenerator>(m, "LatentGenerator")
        .def_property_readonly("backend", &LatentGenerator::backend)
        .def_property_readonly("image_size", &LatentGenerator::image_size);
    m.def("make_generator", &make_generator, py::arg("backend") = "toy");
    m.def("make_key", [](const LatentGenerator& gen, int radius, int channel, std::uint64_t seed) {
        Rng rng(seed);
        return make_key(gen.latent_shape(), radius, channel, rng);
    }, py::arg("generator"), py::arg("radius") = 10, py::arg("channel") = 0, py::arg("seed") = 7);
    m.def("tr_generate", [](const LatentGenerator& gen, const TreeRingKey& key, std::uint64_t seed) {
        return to_array(tr_generate(gen, key, "", seed).image);
    });
    m.def("generate", [](const LatentGenerator& gen, std::uint64_t seed) {
        return to_array(gen.generate(gen.sample_noise(seed), ""));
    });
    m.def("tr_detect", [](const LatentGenerator& gen, const FloatArray& img, const TreeRingKey& key) {
        TreeRingConfig cfg;
        cfg.radius = key.radius;
        cfg.channel = key.channel;
        cfg.backend = gen.backend();
        return detection_dict(tr_detect(gen, to_image(img), key, cfg));
    });

    // Remover
    py::class_<RemoverParams>(m, "RemoverParams")
        .def_static("load", &RemoverParams::load)
        .def("save", &RemoverParams::save);
    m.def("remove", [](const FloatArray& img, const RemoverParams& p) { return to_array(remove(to_image(img), p)); });

    // Attacks
    m.def("attack_blur", [](const FloatArray& img) { return to_array(attack_blur(to_image(img))); });
    m.def("attack_rotation", [](const FloatArray& img, double deg) { return to_array(attack_rotation(to_image(img), deg)); },
          py::arg("image"), py::arg("degrees") = kRotationDegrees);
    m.def("lba", [](const FloatArray& img, const StegaParams& p, double percentile, int kernel) {
        return attack_dict(lba(to_image(img), p, lba_config(percentile, kernel)));
    }, py::arg("image"), py::arg("params"), py::arg("percentile") = 50.0, py::arg("kernel") = 31);
    m.def("random_mask_attack", [](const FloatArray& img, double percentile, int kernel, std::uint64_t seed) {
        return attack_dict(randomized_mask_attack(to_image(img), lba_config(percentile, kernel), seed));
    }, py::arg("image"), py::arg("percentile") = 50.0, py::arg("kernel") = 31, py::arg("seed") = 1);
    m.def("regenerate", [](const FloatArray& img, double sigma, int iterations, std::uint64_t seed, const std::string& backend) {
        RegenConfig c;
        c.sigma = sigma;
        c.iterations = iterations;
        c.seed = seed;
        return to_array(rinse(to_image(img), c, *make_regeneration_backend(backend)));
    }, py::arg("image"), py::arg("sigma"), py::arg("iterations") = 1, py::arg("seed") = 1, py::arg("backend") = "toy");

    // Metrics
    m.def("roc_auc", [](const std::vector<double>& pos, const std::vector<double>& neg) {
        const auto r = roc_auc(pos, neg);
        return py::make_tuple(r.fpr, r.tpr, r.auc);
    });
    m.def("tpr_at_fpr", [](const std::vector<double>& pos, const std::vector<double>& neg, double target) {
        return tpr_at_fpr(roc_auc(pos, neg), target);
    });
    m.def("detection_threshold", &detection_threshold);
    m.def("bit_accuracy", [](const std::string& a, const std::string& b, int bits) {
        return bit_accuracy(BitMessage::from_hex(a, bits), BitMessage::from_hex(b, bits));
    });
    m.def("fid", [](const std::vector<FloatArray>& a, const std::vector<FloatArray>& b) {
        std::vector<Image> ia, ib;
        for (const auto& x : a) ia.push_back(to_image(x));
        for (const auto& x : b) ib.push_back(to_image(x));
        return fid(ia, ib, *make_feature_extractor("proxy"));
    });

    // Harness
    m.def("run_experiment", [](const std::filesystem::path& config, const std::filesystem::path& out) {
        const auto cfg = load_config(config);
        const auto table = run_experiment(cfg);
        emit_report(table, out, cfg.plots);
        return report_csv(table);
    }, py::arg("config"), py::arg("out"), "Runs a YAML experiment config, writes the report and returns results.csv text");
    m.def("evaluate", [](const std::filesystem::path& pred, const std::filesystem::path& truth, const std::vector<std::string>& metrics) {
        return eval_csv(evaluate_predictions(load_truth_manifest(truth), pred, metrics));
    });
}
