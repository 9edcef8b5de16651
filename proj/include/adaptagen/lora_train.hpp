#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "adaptagen/lora.hpp"

namespace adaptagen {

/// One minibatch of the noise-prediction objective. Columns are samples.
struct DiffusionBatch {
    Tensor x_t;                // latent_dim x batch, noised latent at `timestep`
    int timestep = 0;
    Tensor epsilon;            // same shape as x_t
    Tensor caption_embedding;  // cond_dim x batch; zero rows when unconditioned

    void validate(int num_timesteps) const;
};

enum class Activation { identity, relu };

struct LinearNode {
    std::string name;
    Tensor weight;          // d_out x d_in
    Eigen::VectorXd bias;   // d_out, may be empty
    Activation activation = Activation::identity;
    bool frozen = true;
};

/// Feed-forward chain of linear nodes acting as a noise predictor. The model
/// input is the vertical stack [x_t; caption_embedding].
class ModuleGraph {
public:
    explicit ModuleGraph(int num_timesteps = 1000) : num_timesteps_(num_timesteps) {}

    void add_linear(std::string name, Tensor weight, Eigen::VectorXd bias = {},
                    Activation activation = Activation::identity);

    const std::vector<LinearNode>& nodes() const { return nodes_; }
    std::vector<LinearNode>& nodes() { return nodes_; }
    int num_timesteps() const { return num_timesteps_; }
    std::size_t input_dim() const;
    std::size_t output_dim() const;

    /// Names of nodes matching any selector, in graph order.
    std::vector<std::string> select_targets(const std::vector<std::string>& selectors) const;
    std::vector<TargetShape> target_shapes(const std::vector<std::string>& selectors) const;

    Tensor assemble_input(const DiffusionBatch& batch) const;
    /// Predicted noise; adapter entries apply to nodes with matching names.
    Tensor forward(const Tensor& input, const LoraAdapter* adapter = nullptr, double runtime_scale = 1.0) const;
    Tensor predict_noise(const DiffusionBatch& batch, const LoraAdapter* adapter = nullptr) const;

    /// Byte image of every base weight and bias, for frozen-base audits.
    std::vector<std::uint8_t> serialize_base() const;

private:
    int num_timesteps_;
    std::vector<LinearNode> nodes_;
};

class BatchSource {
public:
    virtual ~BatchSource() = default;
    /// nullopt ends the stream.
    virtual std::optional<DiffusionBatch> next() = 0;
    virtual std::string rng_state() const { return {}; }
};

struct TrainState {
    std::size_t step = 0;   // updates applied before `loss` was measured
    double loss = 0.0;
    std::filesystem::path checkpoint;  // latest checkpoint on disk, may be empty
    std::string rng_state;
};

struct TrainOptions {
    std::filesystem::path checkpoint_dir;  // empty: no checkpoints written
    std::function<void(const TrainState&)> on_state;
};

/// Raised on a non-finite loss or update. `last_good` names the last
/// checkpoint written with finite parameters.
class TrainingAborted : public Error {
public:
    TrainingAborted(const std::string& what, TrainState last_good)
        : Error(what), last_good_(std::move(last_good)) {}
    const TrainState& last_good() const { return last_good_; }

private:
    TrainState last_good_;
};

std::filesystem::path checkpoint_path(const std::filesystem::path& dir, std::size_t step);

/// SGD on the adapter matrices only. Every node of `model` must be frozen and
/// every node matched by cfg.target_selectors must have an adapter entry.
/// Runs cfg.max_steps updates or until the stream ends, writes a checkpoint
/// every cfg.checkpoint_interval updates plus a final one, and reports a
/// TrainState every cfg.log_interval steps.
TrainState train(LoraAdapter& adapter, BatchSource& batches, const ModuleGraph& model, const LoraConfig& cfg,
                 const TrainOptions& options = {});


/// One (image, optimized caption) pair fed to a trainer backend.
struct TrainingExample {
    std::string image_id;
    std::vector<std::uint8_t> image_bytes;
    std::string caption;
};

/// Supplies the frozen noise predictor and the batch stream for train().
class TrainerBackend {
public:
    virtual ~TrainerBackend() = default;
    virtual std::string name() const = 0;
    virtual ModuleGraph make_model(std::uint64_t seed) = 0;
    virtual std::unique_ptr<BatchSource> make_batches(const std::vector<TrainingExample>& examples,
                                                      std::uint64_t seed) = 0;
};

}  // namespace adaptagen
