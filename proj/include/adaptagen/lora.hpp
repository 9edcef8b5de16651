#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include <Eigen/Dense>

#include "adaptagen/common.hpp"

namespace adaptagen {

/// Dense real tensor; batched vectors are stored one sample per column.
using Tensor = Eigen::MatrixXd;

enum class ScaleMode {
    paper,         // sigma = alpha * r / d
    conventional,  // sigma = alpha / r
};

/// What `d` in alpha * r / d stands for. Only the input feature count exists.
enum class DInterpretation { input_dim };

std::string_view to_string(ScaleMode mode);
ScaleMode scale_mode_from_string(std::string_view name);

std::vector<std::string> default_target_selectors();

struct LoraConfig {
    std::size_t rank = 4;
    double alpha = 4.0;
    DInterpretation d_interpretation = DInterpretation::input_dim;
    ScaleMode scale_mode = ScaleMode::paper;
    std::vector<std::string> target_selectors = default_target_selectors();
    double learning_rate = 1e-4;
    std::size_t max_steps = 500;
    std::uint64_t seed = 0;
    std::size_t checkpoint_interval = 100;
    std::size_t log_interval = 10;
    /// Global gradient-norm clip; 0 disables.
    double max_grad_norm = 0.0;

    /// Throws on r = 0, non-positive alpha or learning rate, zero steps.
    void validate() const;
};

json lora_config_to_json(const LoraConfig& cfg);
LoraConfig lora_config_from_json(const json& doc);

/// Adapter scale sigma for a weight with `d_in` input features.
double scale_factor(const LoraConfig& cfg, std::size_t d_in);

struct TargetShape {
    std::string name;
    std::size_t d_out = 0;
    std::size_t d_in = 0;
};

/// Low-rank update for one frozen weight W0 (d_out x d_in).
struct AdapterEntry {
    std::string target_name;
    std::size_t d_out = 0;
    std::size_t d_in = 0;
    Tensor A;  // r x d_in
    Tensor B;  // d_out x r
    double scale = 1.0;

    std::size_t rank() const { return static_cast<std::size_t>(A.rows()); }
    /// sigma * B * A
    Tensor delta(double runtime_scale = 1.0) const;
};

struct LoraAdapter {
    LoraConfig config;
    std::vector<AdapterEntry> entries;

    const AdapterEntry* find(std::string_view target) const;
    AdapterEntry* find(std::string_view target);
    std::size_t parameter_count() const;
};

/// A ~ N(0, 1/r) from a stream seeded by (cfg.seed, target name); B = 0.
LoraAdapter init_adapter(const std::vector<TargetShape>& targets, const LoraConfig& cfg);

/// h = W0 x + s * sigma * B (A x). `x` is d_in x batch.
Tensor adapter_forward(const AdapterEntry& entry, const Tensor& w0, const Tensor& x, double runtime_scale = 1.0);

/// W0 + s * sigma * B A. W0 is not modified.
Tensor merge(const AdapterEntry& entry, const Tensor& w0, double runtime_scale = 1.0);
/// W - s * sigma * B A.
Tensor unmerge(const AdapterEntry& entry, const Tensor& merged, double runtime_scale = 1.0);

/// Mean squared error over every element.
double diffusion_loss(const Tensor& predicted_noise, const Tensor& true_noise);

/// Glob match supporting '*' and '?'.
bool matches_selector(std::string_view name, std::string_view pattern);

// ---------------------------------------------------------------------------
// Checkpoint container
//
//   bytes 0..7   little-endian uint64 N = header length
//   bytes 8..8+N UTF-8 JSON header, space padded to a multiple of 8
//   remainder    raw little-endian float32 payloads
//
// Header keys: "<target>.lora_A" / "<target>.lora_B" map to
// {"dtype": "F32", "shape": [rows, cols], "data_offsets": [begin, end]} with
// offsets relative to the payload start; tensors are row-major. The
// "__metadata__" object carries string values: "format" = "adaptagen-lora",
// "version" = "1", "config" = LoraConfig JSON, "scales" = JSON object mapping
// each target to its sigma. The layout is readable by safetensors tooling.
// ---------------------------------------------------------------------------

void save_adapter(const std::filesystem::path& path, const LoraAdapter& adapter);
LoraAdapter load_adapter(const std::filesystem::path& path);

}  // namespace adaptagen
