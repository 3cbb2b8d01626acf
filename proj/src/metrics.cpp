#include "wmbench/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include <Eigen/Eigenvalues>

#include "wmbench/error.hpp"
#include "wmbench/nn/tensor.hpp"

namespace wmbench {

double bit_accuracy(const BitMessage& pred, const BitMessage& truth) {
    require(pred.size() == truth.size(), "bit_accuracy: message lengths differ");
    require(truth.size() > 0, "bit_accuracy: empty messages");
    std::size_t same = 0;
    for (std::size_t i = 0; i < truth.bits.size(); ++i) same += pred.bits[i] == truth.bits[i] ? 1 : 0;
    return static_cast<double>(same) / static_cast<double>(truth.bits.size());
}

double detection_rate(const std::vector<bool>& verdicts) {
    require(!verdicts.empty(), "detection_rate: no verdicts");
    const auto hits = std::count(verdicts.begin(), verdicts.end(), true);
    return static_cast<double>(hits) / static_cast<double>(verdicts.size());
}

double detection_threshold(int k) {
    require(k > 0, "message length must be positive");
    if (k == 32) return 0.90;
    if (k == 100) return 0.75;
    // Upper tail of Binomial(k, 1/2), accumulated in log space.
    std::vector<double> log_pmf(static_cast<std::size_t>(k) + 1);
    for (int m = 0; m <= k; ++m)
        log_pmf[static_cast<std::size_t>(m)] =
            std::lgamma(k + 1.0) - std::lgamma(m + 1.0) - std::lgamma(k - m + 1.0) - k * std::log(2.0);
    double tail = 0.0;
    int m = k + 1;
    while (m > 0) {
        const double next = tail + std::exp(log_pmf[static_cast<std::size_t>(m - 1)]);
        if (next >= 1e-6) break;
        tail = next;
        --m;
    }
    return static_cast<double>(m) / k;
}

bool stega_detected(double accuracy, int k) { return accuracy >= detection_threshold(k); }

ROC roc_auc(std::span<const double> pos, std::span<const double> neg) {
    require(!pos.empty() && !neg.empty(), "roc_auc: both classes must be nonempty");
    std::vector<double> p(pos.begin(), pos.end()), n(neg.begin(), neg.end());
    for (double v : p) require(!std::isnan(v), "roc_auc: NaN score");
    for (double v : n) require(!std::isnan(v), "roc_auc: NaN score");
    std::sort(p.begin(), p.end(), std::greater<>());
    std::sort(n.begin(), n.end(), std::greater<>());
    std::vector<double> all;
    all.reserve(p.size() + n.size());
    all.insert(all.end(), p.begin(), p.end());
    all.insert(all.end(), n.begin(), n.end());
    std::sort(all.begin(), all.end(), std::greater<>());
    all.erase(std::unique(all.begin(), all.end()), all.end());

    ROC roc;
    roc.fpr.push_back(0.0);
    roc.tpr.push_back(0.0);
    std::size_t ip = 0, in = 0;
    // Twice the area in units of (1/|pos|)·(1/|neg|), kept integral for exactness.
    unsigned long long area2 = 0;
    for (double t : all) {
        const std::size_t prev_p = ip, prev_n = in;
        while (ip < p.size() && p[ip] >= t) ++ip;
        while (in < n.size() && n[in] >= t) ++in;
        area2 += static_cast<unsigned long long>(in - prev_n) * (ip + prev_p);
        roc.thresholds.push_back(t);
        roc.fpr.push_back(static_cast<double>(in) / static_cast<double>(n.size()));
        roc.tpr.push_back(static_cast<double>(ip) / static_cast<double>(p.size()));
    }
    roc.auc = static_cast<double>(area2) / (2.0 * static_cast<double>(p.size()) * static_cast<double>(n.size()));
    return roc;
}

double tpr_at_fpr(const ROC& roc, double target) {
    require(target > 0.0 && target < 1.0, "tpr_at_fpr: target must be in (0,1)");
    require(!roc.fpr.empty(), "tpr_at_fpr: empty ROC");
    double best = 0.0;
    for (std::size_t i = 0; i < roc.fpr.size(); ++i)
        if (roc.fpr[i] <= target) best = std::max(best, roc.tpr[i]);
    return best;
}

FeatureStats feature_stats(const Eigen::MatrixXd& features) {
    require(features.rows() >= 2, "feature statistics need at least two samples");
    FeatureStats s;
    s.n = static_cast<std::size_t>(features.rows());
    s.mu = features.colwise().mean().transpose();
    const Eigen::MatrixXd centered = features.rowwise() - s.mu.transpose();
    s.sigma = (centered.transpose() * centered) / static_cast<double>(features.rows() - 1);
    s.sigma = 0.5 * (s.sigma + s.sigma.transpose());
    return s;
}

namespace {

Eigen::MatrixXd psd_sqrt(const Eigen::MatrixXd& m) {
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (m + m.transpose()));
    if (es.info() != Eigen::Success) fail(ErrorKind::NumericalInconsistency, "eigendecomposition failed");
    Eigen::VectorXd ev = es.eigenvalues();
    const double tol = 1e-6 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -tol)
            fail(ErrorKind::NumericalInconsistency, "matrix square root of an indefinite matrix (eigenvalue " +
                                                        std::to_string(ev(i)) + ")");
        ev(i) = std::sqrt(std::max(ev(i), 0.0));
    }
    return es.eigenvectors() * ev.asDiagonal() * es.eigenvectors().transpose();
}

}  // namespace

double fid(const FeatureStats& a, const FeatureStats& b) {
    require(a.mu.size() == b.mu.size() && a.sigma.rows() == b.sigma.rows(), "fid: dimensionality mismatch");
    require(a.n >= 2 && b.n >= 2, "fid: need at least two samples per set");
    const Eigen::MatrixXd sa = psd_sqrt(a.sigma);
    const Eigen::MatrixXd inner = sa * b.sigma * sa;
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(0.5 * (inner + inner.transpose()), Eigen::EigenvaluesOnly);
    if (es.info() != Eigen::Success) fail(ErrorKind::NumericalInconsistency, "eigendecomposition failed");
    const auto& ev = es.eigenvalues();
    const double tol = 1e-6 * std::max(1.0, ev.cwiseAbs().maxCoeff());
    double tr_sqrt = 0.0;
    for (Eigen::Index i = 0; i < ev.size(); ++i) {
        if (ev(i) < -tol) fail(ErrorKind::NumericalInconsistency, "covariance product has a negative eigenvalue");
        tr_sqrt += std::sqrt(std::max(ev(i), 0.0));
    }
    return std::max(0.0, (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() - 2.0 * tr_sqrt);
}

ProxyFeatureExtractor::ProxyFeatureExtractor() : channels_(32), net_(0xf1d'0001ULL, {{16, 2}, {32, 2}, {32, 2}}) {}

Eigen::MatrixXd ProxyFeatureExtractor::extract(std::span<const Image> images) const {
    Eigen::MatrixXd out(static_cast<Eigen::Index>(images.size()), dims());
    constexpr std::size_t chunk = 64;
    for (std::size_t start = 0; start < images.size(); start += chunk) {
        const auto count = std::min(chunk, images.size() - start);
        const auto acts = net_.forward(nn::images_to_tensor(images.subspan(start, count)));
        const auto& last = acts.back();
        const auto plane = last.plane();
        for (int b = 0; b < last.n; ++b)
            for (int c = 0; c < last.c; ++c) {
                const float* p = last.sample(b) + static_cast<std::size_t>(c) * plane;
                double s = 0.0, s2 = 0.0;
                for (std::size_t i = 0; i < plane; ++i) {
                    s += p[i];
                    s2 += static_cast<double>(p[i]) * p[i];
                }
                const double mean = s / static_cast<double>(plane);
                const auto row = static_cast<Eigen::Index>(start) + b;
                out(row, c) = mean;
                out(row, channels_ + c) = std::sqrt(std::max(0.0, s2 / static_cast<double>(plane) - mean * mean));
            }
    }
    return out;
}

std::unique_ptr<FeatureExtractor> make_feature_extractor(const std::string& name) {
    if (name == "proxy") return std::make_unique<ProxyFeatureExtractor>();
    if (name == "inception")
        fail(ErrorKind::FeatureBackendMissing, "the pretrained Inception feature backend is not bundled with this build");
    fail(ErrorKind::InvalidArgument, "unknown feature extractor '" + name + "'");
}

double fid(std::span<const Image> a, std::span<const Image> b, const FeatureExtractor& extractor) {
    return fid(feature_stats(extractor.extract(a)), feature_stats(extractor.extract(b)));
}

}  // namespace wmbench
