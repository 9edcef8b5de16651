#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adaptagen/caption.hpp"
#include "adaptagen/common.hpp"
#include "adaptagen/dataset.hpp"

namespace adaptagen {

/// Unit-normalized embedding. Construction rejects empty, non-finite and
/// zero-norm input; the original norm is kept for diagnostics only.
class EmbeddingVector {
public:
    explicit EmbeddingVector(std::vector<double> values);

    std::size_t dim() const { return values_.size(); }
    const std::vector<double>& values() const { return values_; }
    double original_norm() const { return norm_; }

private:
    std::vector<double> values_;
    double norm_ = 0.0;
};

/// uᵀv / (‖u‖‖v‖) clamped to [-1, 1]. Throws on dimension mismatch.
double cosine(const EmbeddingVector& u, const EmbeddingVector& v);

class EmbedderBackend {
public:
    virtual ~EmbedderBackend() = default;
    virtual std::string name() const = 0;
    virtual bool concurrent_safe() const { return false; }
    virtual std::size_t dim() const = 0;
    virtual EmbeddingVector embed_image(std::span<const std::uint8_t> image_bytes) = 0;
    virtual EmbeddingVector embed_text(const std::string& text) = 0;
};

/// S(i, j) for image i against its own j-th candidate.
struct SimilarityMatrix {
    std::vector<std::string> image_ids;
    std::vector<std::vector<std::string>> template_ids;  // n x m
    Eigen::MatrixXd entries;                             // n x m

    std::size_t rows() const { return static_cast<std::size_t>(entries.rows()); }
    std::size_t cols() const { return static_cast<std::size_t>(entries.cols()); }
};

struct SelectedCaption {
    std::string image_id;
    std::string text;
    std::string template_id;
    double score = 0.0;

    bool operator==(const SelectedCaption&) const = default;
};

/// Row-max values below this only produce a warning.
inline constexpr double kLowScoreWarning = 0.15;

SimilarityMatrix build_similarity_matrix(const std::vector<ImageRecord>& images,
                                         const std::vector<CandidateSet>& candidate_sets,
                                         EmbedderBackend& backend,
                                         const std::filesystem::path& image_root,
                                         std::size_t parallelism = 1);

/// Per-row argmax; ties go to the lowest candidate index.
std::vector<SelectedCaption> select_optimal(const SimilarityMatrix& matrix,
                                            const std::vector<CandidateSet>& candidate_sets);

json similarity_matrix_to_json(const SimilarityMatrix& matrix);
SimilarityMatrix similarity_matrix_from_json(const json& doc);

void write_selected(const std::filesystem::path& path, const std::vector<SelectedCaption>& selected);
std::vector<SelectedCaption> read_selected(const std::filesystem::path& path);

}  // namespace adaptagen
