#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include "adaptagen/caption.hpp"
#include "adaptagen/common.hpp"
#include "adaptagen/evaluation.hpp"
#include "adaptagen/lora.hpp"
#include "adaptagen/semantic_transform.hpp"

namespace adaptagen {

class BackendRegistry;

/// Backend name plus the free-form options handed to its factory.
struct BackendChoice {
    std::string name = "mock";
    json options = json::object();
};

struct DatasetSection {
    std::filesystem::path root;
    std::size_t k = 16;
    std::optional<std::uint64_t> seed;  // falls back to the run seed
};

struct CaptionSection {
    std::vector<PromptTemplate> templates = default_templates();
    BackendChoice backend;
    std::size_t parallelism = 1;
};

struct SelectSection {
    BackendChoice backend;
    std::size_t parallelism = 1;
};

struct LoraSection {
    LoraConfig lora;  // lora.seed is derived from the run seed unless given
    bool seed_given = false;
    BackendChoice backend;
};

struct TransformSection {
    TemperatureSpec temperature;
    bool disable_transform = false;
    bool disable_fusion = false;
    BackendChoice backend;
};

struct GenerateSection {
    int steps = 30;
    double omega = 7.5;
    double s = 1.0;
    int width = 512;
    int height = 512;
    std::size_t per_category_count = 1000;
    BackendChoice backend;
    std::size_t parallelism = 1;
};

struct EvaluateSection {
    BackendChoice features;
    BackendChoice classifier;
    std::optional<BackendChoice> embedder;  // defaults to select.backend
    std::size_t splits = 10;
    ClipConvention clip_convention = ClipConvention::raw;
};

struct RunConfig {
    std::uint64_t seed = 0;
    DatasetSection dataset;
    CaptionSection caption;
    SelectSection select;
    LoraSection lora;
    TransformSection transform;
    GenerateSection generate;
    EvaluateSection evaluate;
    std::filesystem::path out_dir = "adaptagen-run";

    std::uint64_t dataset_seed() const { return dataset.seed.value_or(seed); }
    /// LoRA config with its seed resolved.
    LoraConfig resolved_lora() const;
    const BackendChoice& eval_embedder() const { return evaluate.embedder ? *evaluate.embedder : select.backend; }
};

/// Parses YAML (or JSON) config text. Missing optional keys take their
/// defaults; unknown keys, missing dataset.root, bad values and invariant
/// violations throw an Error naming the key path. When `registry` is given,
/// every referenced backend must be registered.
RunConfig validate_config(const std::string& text, const BackendRegistry* registry = nullptr);
RunConfig load_config(const std::filesystem::path& path, const BackendRegistry* registry = nullptr);

/// Fully defaulted snapshot; validate_config(snapshot.dump()) reproduces it.
json run_config_to_json(const RunConfig& cfg);

std::string_view to_string(ClipConvention convention);
ClipConvention clip_convention_from_string(std::string_view name);

}  // namespace adaptagen
