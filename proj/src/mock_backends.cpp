#include "adaptagen/mock_backends.hpp"

#include <algorithm>
#include <array>
#include <cctype>
#include <cmath>
#include <cstdio>
#include <map>

namespace adaptagen::mock {

Eigen::VectorXd pooled_pixels(std::span<const std::uint8_t> image_bytes, std::size_t buckets) {
    const auto pixels = pixel_bytes(image_bytes);
    Eigen::VectorXd pooled = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(buckets));
    if (pixels.empty()) {
        return pooled;
    }
    std::vector<std::size_t> counts(buckets, 0);
    for (std::size_t i = 0; i < pixels.size(); ++i) {
        const std::size_t b = i * buckets / pixels.size();
        pooled(static_cast<Eigen::Index>(b)) += pixels[i];
        ++counts[b];
    }
    for (std::size_t b = 0; b < buckets; ++b) {
        if (counts[b] > 0) {
            pooled(static_cast<Eigen::Index>(b)) /= 255.0 * static_cast<double>(counts[b]);
        }
    }
    return pooled;
}

Eigen::MatrixXd projection(std::size_t rows, std::size_t cols, std::string_view site) {
    Rng rng(stable_hash(site));
    Eigen::MatrixXd p(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    const double scale = 1.0 / std::sqrt(static_cast<double>(cols));
    for (Eigen::Index i = 0; i < p.rows(); ++i) {
        for (Eigen::Index j = 0; j < p.cols(); ++j) {
            p(i, j) = scale * rng.gaussian();
        }
    }
    return p;
}

namespace {

/// Pooled pixels with a trailing bias term, so a black image still projects
/// to a non-zero vector.
Eigen::VectorXd pooled_with_bias(std::span<const std::uint8_t> image_bytes) {
    Eigen::VectorXd v(static_cast<Eigen::Index>(kPoolBuckets + 1));
    v.head(static_cast<Eigen::Index>(kPoolBuckets)) = pooled_pixels(image_bytes) .array() - 0.5;
    v(static_cast<Eigen::Index>(kPoolBuckets)) = 1.0;
    return v;
}

Eigen::VectorXd hashed_text(const std::string& text, std::size_t dim, std::string_view site) {
    Eigen::VectorXd v = Eigen::VectorXd::Zero(static_cast<Eigen::Index>(dim));
    auto words = word_tokens(text);
    if (words.empty()) {
        words.push_back(text);
    }
    for (const auto& w : words) {
        Rng rng(derive_seed(stable_hash(site), w));
        for (Eigen::Index i = 0; i < v.size(); ++i) {
            v(i) += rng.gaussian();
        }
    }
    return v;
}

std::vector<double> to_std(const Eigen::VectorXd& v) { return {v.data(), v.data() + v.size()}; }

const std::map<Perspective, std::vector<std::string>>& detail_clauses() {
    static const std::map<Perspective, std::vector<std::string>> kDetails = {
        {Perspective::object_recognition,
         {"with fine surface texture", "with sharp visible edges", "with uneven coloring", "with a glossy finish",
          "with small dark spots", "with a matte surface", "with soft highlights"}},
        {Perspective::scene_composition,
         {"on a wooden table", "in a bright room", "against a plain background", "near a window",
          "on green grass", "under natural daylight", "in a cluttered corner"}},
        {Perspective::subject_emphasis,
         {"in sharp focus", "with a blurred background", "at the center of the frame", "from a low angle",
          "in close-up detail", "with strong contrast", "from above"}},
        {Perspective::contextual_interpretation,
         {"in an everyday setting", "at an outdoor market", "in a laboratory sample", "during a field survey",
          "in a home kitchen", "at a research station", "in a natural habitat"}},
    };
    return kDetails;
}

}  // namespace

// ---------------------------------------------------------------------------

std::uint32_t MockCaptioner::variant(std::string_view image_id, std::string_view template_id) {
    std::string key(image_id);
    key.push_back('\x1f');
    key.append(template_id);
    return stable_hash32(key) % 7;
}

std::string MockCaptioner::caption(const CaptionRequest& request) {
    const auto h = variant(request.record.image_id, request.prompt.template_id);
    const auto& details = detail_clauses().at(request.prompt.perspective);
    const std::string category = join(word_tokens(request.record.category), " ");
    return std::string(perspective_keyword(request.prompt.perspective)) + " photo of " + category + " variant-" +
           std::to_string(h) + ", " + details[h % details.size()];
}

// ---------------------------------------------------------------------------

MockEmbedder::MockEmbedder(std::size_t dim)
    : dim_(dim), image_projection_(projection(dim, kPoolBuckets + 1, "mock.embed.image")) {}

EmbeddingVector MockEmbedder::embed_image(std::span<const std::uint8_t> image_bytes) {
    return EmbeddingVector(to_std(image_projection_ * pooled_with_bias(image_bytes)));
}

EmbeddingVector MockEmbedder::embed_text(const std::string& text) {
    if (trim(text).empty()) {
        throw Error("mock embedder: empty text");
    }
    return EmbeddingVector(to_std(hashed_text(text, dim_, "mock.embed.text")));
}

// ---------------------------------------------------------------------------

std::string MockParaphraser::transform(const std::string& text, double temperature, std::uint64_t seed) {
    static const std::map<std::string, std::vector<std::string>> kSynonyms = {
        {"photo", {"picture", "image", "snapshot", "shot"}},
        {"picture", {"photo", "image"}},
        {"image", {"photo", "picture"}},
        {"showing", {"depicting", "displaying"}},
        {"fine", {"delicate", "subtle"}},
        {"sharp", {"crisp", "clear"}},
        {"bright", {"vivid", "luminous"}},
        {"dark", {"dim", "shadowy"}},
        {"small", {"little", "tiny"}},
        {"large", {"big", "sizable"}},
        {"soft", {"gentle", "muted"}},
        {"plain", {"simple", "neutral"}},
        {"everyday", {"ordinary", "daily"}},
        {"close", {"near"}},
        {"strong", {"bold", "striking"}},
    };
    static const std::vector<std::string> kPrefixes = {"high quality", "detailed", "natural light", "realistic"};

    if (trim(text).empty()) {
        throw Error("mock paraphraser: empty input");
    }
    char tau_key[32];
    std::snprintf(tau_key, sizeof(tau_key), "%.6f", temperature);
    Rng rng(derive_seed(seed, tau_key));
    const double swap_probability = std::clamp(0.5 * temperature, 0.0, 1.0);

    std::vector<std::string> out;
    std::string word;
    auto emit = [&] {
        if (word.empty()) {
            return;
        }
        // Split trailing punctuation so "photo," keeps its comma.
        std::string core = word;
        std::string tail;
        while (!core.empty() && std::ispunct(static_cast<unsigned char>(core.back())) && core.back() != '-') {
            tail.insert(tail.begin(), core.back());
            core.pop_back();
        }
        const auto it = kSynonyms.find(to_lower(core));
        if (it != kSynonyms.end() && rng.uniform01() < swap_probability) {
            core = it->second[rng.below(it->second.size())];
        }
        out.push_back(core + tail);
        word.clear();
    };
    for (char c : text) {
        if (std::isspace(static_cast<unsigned char>(c))) {
            emit();
        } else {
            word.push_back(c);
        }
    }
    emit();

    std::string result = join(out, " ");
    if (rng.uniform01() < 0.4 * temperature) {
        result = kPrefixes[rng.below(kPrefixes.size())] + ", " + result;
    }
    return result;
}

// ---------------------------------------------------------------------------

Image MockGenerator::generate(const GenerationRequest& request, const AdapterRef* adapter) {
    request.validate();
    json key = request_to_json(request);
    key.erase("prompt_id");
    key.erase("category");
    key["adapter"] = (adapter != nullptr && request.lora_scale > 0.0) ? adapter->sha256 : std::string();
    const std::string key_text = key.dump();

    constexpr int kTile = 64;
    const int tiles_x = (request.width + kTile - 1) / kTile;
    const int tiles_y = (request.height + kTile - 1) / kTile;
    const std::size_t needed = static_cast<std::size_t>(tiles_x) * tiles_y * 3;
    std::vector<std::uint8_t> stream;
    for (std::uint64_t counter = 0; stream.size() < needed; ++counter) {
        Sha256 h;
        h.update(key_text);
        h.update(std::to_string(counter));
        const auto block = h.finish();
        stream.insert(stream.end(), block.begin(), block.end());
    }

    Image image;
    image.width = request.width;
    image.height = request.height;
    image.rgb.resize(image.byte_size());
    for (int y = 0; y < image.height; ++y) {
        for (int x = 0; x < image.width; ++x) {
            const std::size_t tile = static_cast<std::size_t>(y / kTile) * tiles_x + static_cast<std::size_t>(x / kTile);
            const std::size_t px = (static_cast<std::size_t>(y) * image.width + x) * 3;
            for (int c = 0; c < 3; ++c) {
                image.rgb[px + c] = stream[tile * 3 + c];
            }
        }
    }
    return image;
}

// ---------------------------------------------------------------------------

MockFeatureExtractor::MockFeatureExtractor(std::size_t dim)
    : dim_(dim), projection_(projection(dim, kPoolBuckets + 1, "mock.features")) {}

Eigen::VectorXd MockFeatureExtractor::extract(std::span<const std::uint8_t> image_bytes) {
    return (projection_ * pooled_with_bias(image_bytes)).array().tanh();
}

MockClassifier::MockClassifier(std::size_t classes)
    : classes_(classes), projection_(projection(classes, kPoolBuckets + 1, "mock.classifier")) {}

Eigen::VectorXd MockClassifier::classify(std::span<const std::uint8_t> image_bytes) {
    Eigen::VectorXd logits = 4.0 * (projection_ * pooled_with_bias(image_bytes));
    logits.array() -= logits.maxCoeff();
    Eigen::VectorXd p = logits.array().exp();
    return p / p.sum();
}

// ---------------------------------------------------------------------------

namespace {

Tensor gaussian_matrix(Eigen::Index rows, Eigen::Index cols, double scale, Rng& rng) {
    Tensor m(rows, cols);
    for (Eigen::Index i = 0; i < rows; ++i) {
        for (Eigen::Index j = 0; j < cols; ++j) {
            m(i, j) = scale * rng.gaussian();
        }
    }
    return m;
}

class MockBatchSource final : public BatchSource {
public:
    MockBatchSource(std::vector<Eigen::VectorXd> latents, std::vector<Eigen::VectorXd> conds, std::uint64_t seed,
                    int num_timesteps)
        : latents_(std::move(latents)), conds_(std::move(conds)), rng_(seed) {
        // Linear beta schedule 1e-4 .. 2e-2.
        alpha_bar_.resize(static_cast<std::size_t>(num_timesteps));
        double prod = 1.0;
        for (int t = 0; t < num_timesteps; ++t) {
            const double beta = 1e-4 + (2e-2 - 1e-4) * t / std::max(1, num_timesteps - 1);
            prod *= 1.0 - beta;
            alpha_bar_[static_cast<std::size_t>(t)] = prod;
        }
    }

    std::optional<DiffusionBatch> next() override {
        constexpr auto b = static_cast<Eigen::Index>(MockTrainer::kBatchSize);
        DiffusionBatch batch;
        batch.timestep = static_cast<int>(rng_.below(alpha_bar_.size()));
        const double ab = alpha_bar_[static_cast<std::size_t>(batch.timestep)];
        batch.x_t.resize(static_cast<Eigen::Index>(MockTrainer::kLatentDim), b);
        batch.epsilon.resize(batch.x_t.rows(), b);
        batch.caption_embedding.resize(static_cast<Eigen::Index>(MockTrainer::kCondDim), b);
        for (Eigen::Index j = 0; j < b; ++j) {
            const std::size_t pick = static_cast<std::size_t>(rng_.below(latents_.size()));
            for (Eigen::Index i = 0; i < batch.epsilon.rows(); ++i) {
                batch.epsilon(i, j) = rng_.gaussian();
            }
            batch.x_t.col(j) = std::sqrt(ab) * latents_[pick] + std::sqrt(1.0 - ab) * batch.epsilon.col(j);
            batch.caption_embedding.col(j) = conds_[pick];
        }
        return batch;
    }

    std::string rng_state() const override { return rng_.state(); }

private:
    std::vector<Eigen::VectorXd> latents_;
    std::vector<Eigen::VectorXd> conds_;
    Rng rng_;
    std::vector<double> alpha_bar_;
};

}  // namespace

ModuleGraph MockTrainer::make_model(std::uint64_t seed) {
    Rng rng(derive_seed(seed, "mock.trainer.model"));
    constexpr auto in = static_cast<Eigen::Index>(kLatentDim + kCondDim);
    constexpr auto hidden = static_cast<Eigen::Index>(kHiddenDim);
    constexpr auto out = static_cast<Eigen::Index>(kLatentDim);
    ModuleGraph g;
    g.add_linear("unet.conv_in", gaussian_matrix(hidden, in, 1.0 / std::sqrt(double(in)), rng),
                 Eigen::VectorXd::Zero(hidden), Activation::relu);
    g.add_linear("unet.mid.attn2.to_q", gaussian_matrix(hidden, hidden, 1.0 / std::sqrt(double(hidden)), rng));
    g.add_linear("unet.mid.attn2.to_out.0", gaussian_matrix(out, hidden, 1.0 / std::sqrt(double(hidden)), rng));
    return g;
}

std::unique_ptr<BatchSource> MockTrainer::make_batches(const std::vector<TrainingExample>& examples,
                                                       std::uint64_t seed) {
    if (examples.empty()) {
        throw Error("mock trainer: no training examples");
    }
    const Eigen::MatrixXd latent_projection = projection(kLatentDim, kPoolBuckets + 1, "mock.trainer.latent");
    std::vector<Eigen::VectorXd> latents;
    std::vector<Eigen::VectorXd> conds;
    for (const auto& ex : examples) {
        latents.push_back((latent_projection * pooled_with_bias(ex.image_bytes)).array().tanh());
        Eigen::VectorXd c = hashed_text(ex.caption, kCondDim, "mock.trainer.cond");
        conds.push_back(c / std::max(c.norm(), 1e-12));
    }
    return std::make_unique<MockBatchSource>(std::move(latents), std::move(conds), seed, 1000);
}

// ---------------------------------------------------------------------------

SyntheticLinearTask make_synthetic_linear_task(std::size_t dim, std::size_t delta_rank, std::uint64_t seed,
                                               const std::string& target_name) {
    Rng rng(derive_seed(seed, "synthetic.task"));
    const auto d = static_cast<Eigen::Index>(dim);
    const auto r = static_cast<Eigen::Index>(delta_rank);
    Tensor w0 = gaussian_matrix(d, d, 1.0 / std::sqrt(double(dim)), rng);
    const Tensor u = gaussian_matrix(d, r, 1.0, rng);
    const Tensor v = gaussian_matrix(r, d, 1.0 / std::sqrt(double(dim)), rng);
    SyntheticLinearTask task;
    task.w_star = w0 + u * v;
    task.target_name = target_name;
    task.model.add_linear(target_name, std::move(w0));
    return task;
}

SyntheticBatchSource::SyntheticBatchSource(Tensor w_star, std::size_t batch_size, std::uint64_t seed,
                                           int num_timesteps)
    : w_star_(std::move(w_star)), batch_size_(batch_size), rng_(seed), num_timesteps_(num_timesteps) {}

std::optional<DiffusionBatch> SyntheticBatchSource::next() {
    DiffusionBatch batch;
    batch.timestep = static_cast<int>(rng_.below(static_cast<std::uint64_t>(num_timesteps_)));
    batch.x_t = gaussian_matrix(w_star_.cols(), static_cast<Eigen::Index>(batch_size_), 1.0, rng_);
    batch.epsilon = w_star_ * batch.x_t;
    return batch;
}

}  // namespace adaptagen::mock
