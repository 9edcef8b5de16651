#pragma once

// Deterministic stand-ins for every model backend. They carry no learned
// knowledge; they exist so the whole pipeline runs and replays bit-exactly on
// a CPU without weights.

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "adaptagen/caption.hpp"
#include "adaptagen/evaluation.hpp"
#include "adaptagen/generation.hpp"
#include "adaptagen/lora_train.hpp"
#include "adaptagen/prompt_matrix.hpp"
#include "adaptagen/semantic_transform.hpp"

namespace adaptagen::mock {

inline constexpr std::size_t kPoolBuckets = 192;

/// Mean of each of `buckets` equal slices of the pixel bytes, scaled to [0, 1].
Eigen::VectorXd pooled_pixels(std::span<const std::uint8_t> image_bytes, std::size_t buckets = kPoolBuckets);

/// Fixed Gaussian projection matrix (rows x cols) keyed by `site`.
Eigen::MatrixXd projection(std::size_t rows, std::size_t cols, std::string_view site);

/// "<keyword> photo of <category words> variant-<h>, <detail>", h being the
/// stable 32-bit hash of (image_id, template_id) mod 7. The detail clause is
/// drawn from a per-perspective list by the same hash.
class MockCaptioner final : public CaptionerBackend {
public:
    std::string name() const override { return "mock"; }
    bool concurrent_safe() const override { return true; }
    std::string caption(const CaptionRequest& request) override;

    static std::uint32_t variant(std::string_view image_id, std::string_view template_id);
};

class MockEmbedder final : public EmbedderBackend {
public:
    explicit MockEmbedder(std::size_t dim = 32);
    std::string name() const override { return "mock"; }
    bool concurrent_safe() const override { return true; }
    std::size_t dim() const override { return dim_; }
    EmbeddingVector embed_image(std::span<const std::uint8_t> image_bytes) override;
    EmbeddingVector embed_text(const std::string& text) override;

private:
    std::size_t dim_;
    Eigen::MatrixXd image_projection_;
};

/// Word-level synonym swaps and an optional style prefix; the number of
/// edits grows with temperature. Unknown words, including category words,
/// pass through untouched.
class MockParaphraser final : public ParaphraserBackend {
public:
    std::string name() const override { return "mock"; }
    bool concurrent_safe() const override { return true; }
    std::string transform(const std::string& text, double temperature, std::uint64_t seed) override;
};

/// Colour-block raster: 64 px tiles coloured from successive bytes of a
/// SHA-256 stream over (prompt, seed, size, n, omega, s, adapter digest).
/// The adapter only participates when s > 0.
class MockGenerator final : public GeneratorBackend {
public:
    std::string name() const override { return "mock"; }
    std::size_t max_concurrency() const override { return 0; }
    Image generate(const GenerationRequest& request, const AdapterRef* adapter) override;
};

class MockFeatureExtractor final : public FeatureExtractor {
public:
    explicit MockFeatureExtractor(std::size_t dim = 16);
    std::string name() const override { return "mock"; }
    std::size_t dim() const override { return dim_; }
    Eigen::VectorXd extract(std::span<const std::uint8_t> image_bytes) override;

private:
    std::size_t dim_;
    Eigen::MatrixXd projection_;
};

class MockClassifier final : public ImageClassifier {
public:
    explicit MockClassifier(std::size_t classes = 10);
    std::string name() const override { return "mock"; }
    std::size_t num_classes() const override { return classes_; }
    Eigen::VectorXd classify(std::span<const std::uint8_t> image_bytes) override;

private:
    std::size_t classes_;
    Eigen::MatrixXd projection_;
};

/// Three-node linear noise predictor with cross-attention style names over
/// [8-d latent; 8-d caption embedding]. Latents come from pooled pixels and
/// captions from hashed tokens; batches noise them on a linear beta schedule.
class MockTrainer final : public TrainerBackend {
public:
    static constexpr std::size_t kLatentDim = 8;
    static constexpr std::size_t kCondDim = 8;
    static constexpr std::size_t kHiddenDim = 16;
    static constexpr std::size_t kBatchSize = 4;

    std::string name() const override { return "mock"; }
    ModuleGraph make_model(std::uint64_t seed) override;
    std::unique_ptr<BatchSource> make_batches(const std::vector<TrainingExample>& examples,
                                              std::uint64_t seed) override;
};

// ---------------------------------------------------------------------------
// Synthetic least-squares noise-prediction task: eps = W* x with
// W* = W0 + low-rank delta, so a rank-r adapter can drive the loss to zero.

struct SyntheticLinearTask {
    ModuleGraph model;
    Tensor w_star;
    std::string target_name;
};

SyntheticLinearTask make_synthetic_linear_task(std::size_t dim, std::size_t delta_rank, std::uint64_t seed,
                                               const std::string& target_name = "mid.attn2.to_q");

/// Endless stream of batches for a synthetic task.
class SyntheticBatchSource final : public BatchSource {
public:
    SyntheticBatchSource(Tensor w_star, std::size_t batch_size, std::uint64_t seed, int num_timesteps = 1000);
    std::optional<DiffusionBatch> next() override;
    std::string rng_state() const override { return rng_.state(); }

private:
    Tensor w_star_;
    std::size_t batch_size_;
    Rng rng_;
    int num_timesteps_;
};

}  // namespace adaptagen::mock
