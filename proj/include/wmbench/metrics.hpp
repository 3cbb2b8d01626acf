#pragma once

#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "wmbench/features.hpp"
#include "wmbench/image.hpp"
#include "wmbench/stegastamp.hpp"

namespace wmbench {

double bit_accuracy(const BitMessage& pred, const BitMessage& truth);

/// Fraction of true verdicts.
double detection_rate(const std::vector<bool>& verdicts);

/// Bit-accuracy threshold for a StegaStamp "successful decode": 0.90 for
/// k = 32 and 0.75 for k = 100; for other k the smallest m/k whose binomial
/// tail P(X >= m | p = 1/2) is below 1e-6.
double detection_threshold(int k);
bool stega_detected(double accuracy, int k);

struct ROC {
    std::vector<double> thresholds;  // descending; point i uses score >= thresholds[i-1]
    std::vector<double> fpr;         // starts at 0, ends at 1
    std::vector<double> tpr;
    double auc = 0.0;
};

/// Exact ROC by threshold sweep (higher score = more positive); AUC by the
/// trapezoid rule, which equals the Mann-Whitney statistic with ties as 1/2.
ROC roc_auc(std::span<const double> pos_scores, std::span<const double> neg_scores);

/// TPR at the largest achievable FPR <= target (step convention).
double tpr_at_fpr(const ROC& roc, double fpr_target);

struct FeatureStats {
    Eigen::VectorXd mu;
    Eigen::MatrixXd sigma;
    std::size_t n = 0;
};

/// Rows of `features` are samples; covariance uses the unbiased (n-1) normalization.
FeatureStats feature_stats(const Eigen::MatrixXd& features);

/// Frechet distance between two Gaussians.
double fid(const FeatureStats& a, const FeatureStats& b);

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual int dims() const = 0;
    virtual Eigen::MatrixXd extract(std::span<const Image> images) const = 0;
};

/// Fixed seeded conv stack with per-channel global mean and standard-deviation
/// pooling of the deepest stage.
class ProxyFeatureExtractor : public FeatureExtractor {
public:
    ProxyFeatureExtractor();

    std::string name() const override { return "proxy-conv-v1"; }
    int dims() const override { return 2 * channels_; }
    Eigen::MatrixXd extract(std::span<const Image> images) const override;

private:
    int channels_;
    FixedFeatureNet net_;
};

/// "proxy" → ProxyFeatureExtractor; "inception" raises FeatureBackendMissing.
std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& name);

double fid(std::span<const Image> a, std::span<const Image> b, const FeatureExtractor& extractor);

}  // namespace wmbench
