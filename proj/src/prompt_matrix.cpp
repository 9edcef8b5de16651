#include "adaptagen/prompt_matrix.hpp"

#include <algorithm>
#include <cmath>
#include <mutex>
#include <optional>

#include <spdlog/spdlog.h>

#include "adaptagen/parallel.hpp"

namespace adaptagen {

EmbeddingVector::EmbeddingVector(std::vector<double> values) : values_(std::move(values)) {
    if (values_.empty()) {
        throw Error("embedding must have positive dimension");
    }
    double sq = 0.0;
    for (double v : values_) {
        if (!std::isfinite(v)) {
            throw Error("embedding has non-finite entry");
        }
        sq += v * v;
    }
    norm_ = std::sqrt(sq);
    if (!(norm_ > 0.0) || !std::isfinite(norm_)) {
        throw Error("embedding has zero norm");
    }
    for (double& v : values_) {
        v /= norm_;
    }
}

double cosine(const EmbeddingVector& u, const EmbeddingVector& v) {
    if (u.dim() != v.dim()) {
        throw Error("cosine: dimension mismatch " + std::to_string(u.dim()) + " vs " + std::to_string(v.dim()));
    }
    double dot = 0.0;
    const auto& a = u.values();
    const auto& b = v.values();
    for (std::size_t i = 0; i < a.size(); ++i) {
        dot += a[i] * b[i];
    }
    return std::clamp(dot, -1.0, 1.0);
}

SimilarityMatrix build_similarity_matrix(const std::vector<ImageRecord>& images,
                                         const std::vector<CandidateSet>& candidate_sets,
                                         EmbedderBackend& backend,
                                         const std::filesystem::path& image_root,
                                         std::size_t parallelism) {
    if (images.size() != candidate_sets.size()) {
        throw Error("similarity matrix: " + std::to_string(images.size()) + " images but " +
                    std::to_string(candidate_sets.size()) + " candidate sets");
    }
    const std::size_t n = images.size();
    const std::size_t m = n == 0 ? 0 : candidate_sets.front().candidates.size();
    for (std::size_t i = 0; i < n; ++i) {
        if (images[i].image_id != candidate_sets[i].image_id) {
            throw Error("similarity matrix: row " + std::to_string(i) + " image " + images[i].image_id +
                        " is not aligned with candidate set " + candidate_sets[i].image_id);
        }
        if (candidate_sets[i].candidates.size() != m || m == 0) {
            throw Error("similarity matrix: candidate set " + candidate_sets[i].image_id +
                        " has size " + std::to_string(candidate_sets[i].candidates.size()) +
                        ", expected " + std::to_string(m));
        }
    }

    std::mutex backend_mutex;
    const bool serialize = !backend.concurrent_safe();
    auto guarded = [&](auto&& fn) {
        if (serialize) {
            std::lock_guard lock(backend_mutex);
            return fn();
        }
        return fn();
    };

    std::vector<std::optional<EmbeddingVector>> image_emb(n);
    std::vector<std::optional<EmbeddingVector>> text_emb(n * m);
    // One work item per image followed by one per caption; each embedded once.
    parallel_for(n + n * m, parallelism, [&](std::size_t item) {
        if (item < n) {
            const auto& rec = images[item];
            try {
                const auto bytes = read_file_bytes(image_root / rec.path);
                image_emb[item] = guarded([&] { return backend.embed_image(bytes); });
            } catch (const std::exception& e) {
                throw Error("embedding failed for image " + rec.image_id + ": " + e.what());
            }
            return;
        }
        const std::size_t k = item - n;
        const auto& cand = candidate_sets[k / m].candidates[k % m];
        try {
            text_emb[k] = guarded([&] { return backend.embed_text(cand.text); });
        } catch (const std::exception& e) {
            throw Error("embedding failed for caption " + cand.image_id + "/" + cand.template_id + ": " + e.what());
        }
    });

    SimilarityMatrix matrix;
    matrix.entries.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(m));
    for (std::size_t i = 0; i < n; ++i) {
        matrix.image_ids.push_back(images[i].image_id);
        auto& ids = matrix.template_ids.emplace_back();
        for (std::size_t j = 0; j < m; ++j) {
            ids.push_back(candidate_sets[i].candidates[j].template_id);
            matrix.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                cosine(*image_emb[i], *text_emb[i * m + j]);
        }
    }
    return matrix;
}

std::vector<SelectedCaption> select_optimal(const SimilarityMatrix& matrix,
                                            const std::vector<CandidateSet>& candidate_sets) {
    if (matrix.rows() != candidate_sets.size()) {
        throw Error("select_optimal: matrix has " + std::to_string(matrix.rows()) + " rows but " +
                    std::to_string(candidate_sets.size()) + " candidate sets were given");
    }
    std::vector<SelectedCaption> out;
    out.reserve(candidate_sets.size());
    for (std::size_t i = 0; i < candidate_sets.size(); ++i) {
        const auto& set = candidate_sets[i];
        if (set.image_id != matrix.image_ids[i] || set.candidates.size() != matrix.cols()) {
            throw Error("select_optimal: row " + std::to_string(i) + " is not aligned with candidate set " + set.image_id);
        }
        const auto row = static_cast<Eigen::Index>(i);
        Eigen::Index best = 0;
        for (Eigen::Index j = 1; j < matrix.entries.cols(); ++j) {
            if (matrix.entries(row, j) > matrix.entries(row, best)) {
                best = j;
            }
        }
        const double score = matrix.entries(row, best);
        if (score < kLowScoreWarning) {
            spdlog::warn("select: best caption for {} scores only {:.4f}", set.image_id, score);
        }
        const auto& chosen = set.candidates[static_cast<std::size_t>(best)];
        out.push_back({set.image_id, chosen.text, chosen.template_id, score});
    }
    return out;
}

json similarity_matrix_to_json(const SimilarityMatrix& matrix) {
    json entries = json::array();
    for (Eigen::Index i = 0; i < matrix.entries.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < matrix.entries.cols(); ++j) {
            row.push_back(matrix.entries(i, j));
        }
        entries.push_back(std::move(row));
    }
    return {{"image_ids", matrix.image_ids},
            {"template_ids", matrix.template_ids},
            {"rows", matrix.rows()},
            {"cols", matrix.cols()},
            {"entries", std::move(entries)}};
}

SimilarityMatrix similarity_matrix_from_json(const json& doc) {
    SimilarityMatrix matrix;
    matrix.image_ids = doc.at("image_ids").get<std::vector<std::string>>();
    matrix.template_ids = doc.at("template_ids").get<std::vector<std::vector<std::string>>>();
    const auto rows = doc.at("rows").get<Eigen::Index>();
    const auto cols = doc.at("cols").get<Eigen::Index>();
    const auto& entries = doc.at("entries");
    if (static_cast<Eigen::Index>(entries.size()) != rows ||
        static_cast<Eigen::Index>(matrix.image_ids.size()) != rows) {
        throw Error("similarity matrix: row count mismatch");
    }
    matrix.entries.resize(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        if (static_cast<Eigen::Index>(entries[i].size()) != cols) {
            throw Error("similarity matrix: ragged row " + std::to_string(i));
        }
        for (Eigen::Index j = 0; j < cols; ++j) {
            matrix.entries(i, j) = entries[i][j].get<double>();
        }
    }
    return matrix;
}

void write_selected(const std::filesystem::path& path, const std::vector<SelectedCaption>& selected) {
    std::vector<json> rows;
    for (const auto& s : selected) {
        rows.push_back({{"image_id", s.image_id}, {"text", s.text}, {"template_id", s.template_id}, {"score", s.score}});
    }
    write_jsonl(path, rows);
}

std::vector<SelectedCaption> read_selected(const std::filesystem::path& path) {
    std::vector<SelectedCaption> out;
    for (const auto& row : read_jsonl(path)) {
        out.push_back({row.at("image_id").get<std::string>(), row.at("text").get<std::string>(),
                       row.at("template_id").get<std::string>(), row.at("score").get<double>()});
    }
    return out;
}

}  // namespace adaptagen
