#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "wmbench/metrics.hpp"
#include "wmbench/stegastamp.hpp"

namespace wmbench {

/// One entry of a truth manifest:
///   {"bits": 32, "images": [{"id": "a", "message": "<hex>", "watermarked": true,
///                            "reference": "clean/a.png"}, ...]}
/// `message` and `reference` are optional; `watermarked` defaults to true.
struct TruthEntry {
    std::string id;
    std::optional<BitMessage> message;
    bool watermarked = true;
    std::optional<std::filesystem::path> reference;
};

struct TruthManifest {
    int bits = 0;
    std::vector<TruthEntry> images;
};

/// Relative reference paths resolve against `base_dir`.
TruthManifest parse_truth_manifest(const nlohmann::json& j, const std::filesystem::path& base_dir = ".");
TruthManifest load_truth_manifest(const std::filesystem::path& path);

/// Decoder output for one image, read from `<id>.json` in the prediction
/// directory: {"message": "<hex>", "score": s, "detected": b}, all optional.
/// `<id>.png` next to it is used for FID.
struct Prediction {
    std::optional<BitMessage> message;
    std::optional<double> score;
    std::optional<bool> detected;
    std::optional<std::filesystem::path> image;
};

Prediction load_prediction(const std::filesystem::path& dir, const std::string& id, int bits);

struct EvalRow {
    std::string metric;
    double value = 0.0;
    std::size_t n = 0;
};

struct EvalResult {
    std::vector<EvalRow> rows;
    std::optional<ROC> roc;
};

/// Metrics: bitacc | det | auc | tpr@<fpr> | fid.
///
/// bitacc averages over watermarked entries with both a truth and a predicted
/// message. det is the detection rate over watermarked entries, taken from
/// the predicted verdict or else from the bit-accuracy threshold. auc and
/// tpr use watermarked entries as positives; the score is the predicted
/// score, or bit accuracy against the truth message when absent. fid compares
/// predicted PNGs with the manifest references using the proxy extractor.
EvalResult evaluate_predictions(const TruthManifest& truth, const std::filesystem::path& pred_dir,
                                const std::vector<std::string>& metrics);

std::string eval_csv(const EvalResult& result);
std::string roc_csv(const ROC& roc);

}  // namespace wmbench
