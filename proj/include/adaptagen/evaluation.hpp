#pragma once

#include <cstdint>
#include <map>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adaptagen/common.hpp"
#include "adaptagen/prompt_matrix.hpp"

namespace adaptagen {

/// Gaussian moment summary of a feature distribution.
struct FeatureStats {
    Eigen::VectorXd mean;
    Eigen::MatrixXd cov;
    std::size_t count = 0;

    std::size_t dim() const { return static_cast<std::size_t>(mean.size()); }
    /// Throws unless cov is square, matches mean, is symmetric within 1e-9
    /// and count >= 2.
    void validate() const;
};

/// Column means and unbiased covariance of an N x D feature matrix (N >= 2),
/// symmetrized as (S + S^T) / 2.
FeatureStats feature_stats(const Eigen::MatrixXd& features);

/// ‖mu_a - mu_b‖² + Tr(S_a + S_b - 2 (S_a S_b)^{1/2}).
///
/// The trace of the square root is taken from the eigenvalues of the
/// symmetric product S_a^{1/2} S_b S_a^{1/2}, which shares its spectrum with
/// S_a S_b. Negative eigenvalues correspond to imaginary square-root parts:
/// magnitudes below 1e-6 are discarded, larger ones throw.
double fid(const FeatureStats& a, const FeatureStats& b);

inline constexpr double kFidImaginaryTolerance = 1e-6;
inline constexpr double kLogFloor = 1e-12;

/// N x K matrix of per-image class distributions.
struct ClassProbabilities {
    Eigen::MatrixXd rows;

    void validate() const;
};

struct InceptionScore {
    double mean = 0.0;
    double std = 0.0;
};

/// exp(mean_x KL(p(y|x) ‖ p(y))) over `splits` contiguous chunks (sizes
/// differ by at most one); returns the mean and population std across chunks.
InceptionScore inception_score(const ClassProbabilities& probs, std::size_t splits = 10);

enum class ClipConvention {
    raw,       // mean cosine
    scaled,    // mean of 2.5 * max(cosine, 0)
};

double clip_score(const std::vector<EmbeddingVector>& image_embeddings,
                  const std::vector<EmbeddingVector>& prompt_embeddings,
                  ClipConvention convention = ClipConvention::raw);

// ---------------------------------------------------------------------------
// Backends

class FeatureExtractor {
public:
    virtual ~FeatureExtractor() = default;
    virtual std::string name() const = 0;
    virtual std::size_t dim() const = 0;
    virtual Eigen::VectorXd extract(std::span<const std::uint8_t> image_bytes) = 0;
};

class ImageClassifier {
public:
    virtual ~ImageClassifier() = default;
    virtual std::string name() const = 0;
    virtual std::size_t num_classes() const = 0;
    /// Distribution over num_classes() labels.
    virtual Eigen::VectorXd classify(std::span<const std::uint8_t> image_bytes) = 0;
};

// ---------------------------------------------------------------------------
// Reports

struct CategoryMetrics {
    double fid = 0.0;
    double is_mean = 1.0;
    double is_std = 0.0;
    double clip_score = 0.0;
    std::size_t n_real = 0;
    std::size_t n_generated = 0;
};

struct MetricReport {
    std::map<std::string, CategoryMetrics> per_category;
    CategoryMetrics overall;  // unweighted mean of per-category values; counts summed
    std::map<std::string, std::string> backends;
    std::string clip_convention = "raw";
    std::size_t splits = 10;
};

/// Fills `overall` from `per_category`.
void aggregate(MetricReport& report);

json metric_report_to_json(const MetricReport& report);
MetricReport metric_report_from_json(const json& doc);
/// Empty when `doc` matches the metrics.json schema, otherwise the problems.
std::vector<std::string> validate_metrics_json(const json& doc);

}  // namespace adaptagen
