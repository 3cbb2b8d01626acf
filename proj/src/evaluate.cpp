#include "wmbench/evaluate.hpp"

#include <cstdio>
#include <fstream>

#include "wmbench/array_io.hpp"
#include "wmbench/error.hpp"

namespace wmbench {

namespace fs = std::filesystem;

namespace {

nlohmann::json read_json(const fs::path& path) {
    std::ifstream in(path);
    if (!in) fail(ErrorKind::IoError, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, path.string() + ": " + e.what());
    }
}

std::string number(double v) {
    char buf[64];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

double parse_tpr_target(const std::string& m) {
    std::size_t used = 0;
    double v = -1.0;
    try {
        v = std::stod(m.substr(4), &used);
    } catch (const std::exception&) {
    }
    if (used == 0 || used != m.size() - 4 || !(v > 0.0 && v < 1.0))
        fail(ErrorKind::InvalidArgument, "invalid metric '" + m + "' (expected tpr@<fpr> with 0 < fpr < 1)");
    return v;
}

}  // namespace

TruthManifest parse_truth_manifest(const nlohmann::json& j, const fs::path& base_dir) {
    try {
        TruthManifest t;
        t.bits = j.value("bits", 0);
        require(t.bits >= 0, "manifest bits must be non-negative");
        require(j.contains("images") && j["images"].is_array(), "manifest needs an 'images' array");
        for (const auto& e : j["images"]) {
            TruthEntry te;
            te.id = e.at("id").get<std::string>();
            require(!te.id.empty(), "manifest entry with empty id");
            if (e.contains("message")) {
                require(t.bits > 0, "manifest has messages but no 'bits'");
                te.message = BitMessage::from_hex(e["message"].get<std::string>(), t.bits);
            }
            te.watermarked = e.value("watermarked", true);
            if (e.contains("reference")) {
                fs::path ref = e["reference"].get<std::string>();
                te.reference = ref.is_absolute() ? ref : base_dir / ref;
            }
            t.images.push_back(std::move(te));
        }
        require(!t.images.empty(), "manifest has no images");
        return t;
    } catch (const nlohmann::json::exception& e) {
        fail(ErrorKind::InvalidArgument, std::string("malformed truth manifest: ") + e.what());
    }
}

TruthManifest load_truth_manifest(const fs::path& path) {
    return parse_truth_manifest(read_json(path), path.parent_path());
}

Prediction load_prediction(const fs::path& dir, const std::string& id, int bits) {
    Prediction p;
    const auto side = dir / (id + ".json");
    if (fs::exists(side)) {
        const auto j = read_json(side);
        try {
            if (j.contains("message") && bits > 0) p.message = BitMessage::from_hex(j["message"].get<std::string>(), bits);
            if (j.contains("score")) p.score = j["score"].get<double>();
            if (j.contains("detected")) p.detected = j["detected"].get<bool>();
        } catch (const nlohmann::json::exception& e) {
            fail(ErrorKind::InvalidArgument, side.string() + ": " + e.what());
        }
    }
    const auto png = dir / (id + ".png");
    if (fs::exists(png)) p.image = png;
    return p;
}

EvalResult evaluate_predictions(const TruthManifest& truth, const fs::path& pred_dir,
                                const std::vector<std::string>& metrics) {
    require(fs::is_directory(pred_dir), "prediction directory does not exist: " + pred_dir.string());
    require(!metrics.empty(), "no metrics requested");
    std::vector<Prediction> preds;
    for (const auto& e : truth.images) preds.push_back(load_prediction(pred_dir, e.id, truth.bits));

    const auto accuracy = [&](std::size_t i) -> std::optional<double> {
        const auto& t = truth.images[i].message;
        const auto& p = preds[i].message;
        if (!t || !p) return std::nullopt;
        return bit_accuracy(*p, *t);
    };

    EvalResult out;
    const auto roc = [&]() -> const ROC& {
        if (out.roc) return *out.roc;
        std::vector<double> pos, neg;
        for (std::size_t i = 0; i < preds.size(); ++i) {
            std::optional<double> s = preds[i].score;
            if (!s) s = accuracy(i);
            if (!s) fail(ErrorKind::InvalidArgument, "no score or message for '" + truth.images[i].id + "'");
            (truth.images[i].watermarked ? pos : neg).push_back(*s);
        }
        require(!pos.empty() && !neg.empty(), "ROC metrics need both watermarked and clean entries");
        out.roc = roc_auc(pos, neg);
        return *out.roc;
    };

    for (const auto& m : metrics) {
        EvalRow row{m, 0.0, 0};
        if (m == "bitacc") {
            double total = 0.0;
            for (std::size_t i = 0; i < preds.size(); ++i)
                if (truth.images[i].watermarked)
                    if (const auto a = accuracy(i)) {
                        total += *a;
                        ++row.n;
                    }
            require(row.n > 0, "bitacc needs watermarked entries with truth and predicted messages");
            row.value = total / static_cast<double>(row.n);
        } else if (m == "det") {
            std::size_t hits = 0;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                if (!truth.images[i].watermarked) continue;
                bool d = false;
                if (preds[i].detected) {
                    d = *preds[i].detected;
                } else if (const auto a = accuracy(i)) {
                    d = stega_detected(*a, truth.bits);
                } else {
                    fail(ErrorKind::InvalidArgument, "no verdict or message for '" + truth.images[i].id + "'");
                }
                hits += d;
                ++row.n;
            }
            require(row.n > 0, "det needs watermarked entries");
            row.value = static_cast<double>(hits) / static_cast<double>(row.n);
        } else if (m == "auc") {
            row.value = roc().auc;
            row.n = preds.size();
        } else if (m.rfind("tpr@", 0) == 0) {
            row.value = tpr_at_fpr(roc(), parse_tpr_target(m));
            row.n = preds.size();
        } else if (m == "fid") {
            std::vector<Image> a, b;
            for (std::size_t i = 0; i < preds.size(); ++i) {
                if (!preds[i].image || !truth.images[i].reference) continue;
                a.push_back(load_png(*preds[i].image));
                b.push_back(load_png(*truth.images[i].reference));
            }
            require(a.size() >= 2, "fid needs at least two predicted PNGs with references");
            row.value = fid(a, b, *make_feature_extractor("proxy"));
            row.n = a.size();
        } else {
            fail(ErrorKind::InvalidArgument, "unknown metric '" + m + "'");
        }
        out.rows.push_back(row);
    }
    return out;
}

std::string eval_csv(const EvalResult& result) {
    std::string s = "metric,value,n\n";
    for (const auto& r : result.rows) s += r.metric + "," + number(r.value) + "," + std::to_string(r.n) + "\n";
    return s;
}

std::string roc_csv(const ROC& roc) {
    std::string s = "threshold,fpr,tpr\n";
    for (std::size_t i = 0; i < roc.fpr.size(); ++i) {
        const std::string thr = i == 0 ? "inf" : number(roc.thresholds[i - 1]);
        s += thr + "," + number(roc.fpr[i]) + "," + number(roc.tpr[i]) + "\n";
    }
    return s;
}

}  // namespace wmbench
