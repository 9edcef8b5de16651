#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaptagen/common.hpp"
#include "adaptagen/config.hpp"
#include "adaptagen/registry.hpp"

namespace adaptagen {

enum class Stage { ingest, caption, select, train, transform, generate, evaluate };

inline constexpr Stage kAllStages[] = {Stage::ingest,    Stage::caption,  Stage::select,  Stage::train,
                                       Stage::transform, Stage::generate, Stage::evaluate};

std::string_view to_string(Stage stage);
Stage stage_from_string(std::string_view name);

/// Artifact file names, relative to the run directory.
namespace artifact {
inline constexpr const char* kDatasetFull = "dataset_full.json";
inline constexpr const char* kManifest = "manifest.json";
inline constexpr const char* kCaptionsRaw = "captions_raw.jsonl";
inline constexpr const char* kCaptionFailures = "caption_failures.jsonl";
inline constexpr const char* kSimilarity = "similarity_matrix.json";
inline constexpr const char* kSelected = "captions_selected.jsonl";
inline constexpr const char* kAdapterDir = "adapter";
inline constexpr const char* kTrainLog = "train_log.jsonl";
inline constexpr const char* kTrainResult = "train_result.json";
inline constexpr const char* kPrompts = "prompts.jsonl";
inline constexpr const char* kGeneratedDir = "generated";
inline constexpr const char* kGenerated = "generated.jsonl";
inline constexpr const char* kMetrics = "metrics.json";
inline constexpr const char* kRunReport = "run_report.json";
}  // namespace artifact

/// Artifacts a stage reads and writes.
std::vector<std::string> stage_inputs(Stage stage);
std::vector<std::string> stage_outputs(Stage stage);

struct RunOptions {
    std::optional<Stage> from;
    std::optional<Stage> until;
};

enum class StageStatus { ok, skipped, failed };
std::string_view to_string(StageStatus status);

struct StageReport {
    Stage stage = Stage::ingest;
    StageStatus status = StageStatus::skipped;
    double seconds = 0.0;
    std::vector<std::string> artifacts;
    std::string error;
};

struct RunReport {
    std::vector<StageReport> stages;
    json config_snapshot;
    /// SHA-256 over every JSON/JSONL artifact in the run directory except
    /// the report itself, as sorted "path\0sha256\n" lines.
    std::string digest;
    std::vector<std::string> digest_inputs;

    bool ok() const;
};

json run_report_to_json(const RunReport& report);

/// Digest over the run directory's JSON/JSONL artifacts (see RunReport).
std::string run_digest(const std::filesystem::path& out_dir, std::vector<std::string>* inputs = nullptr);

/// Runs the stages in [from, until] in order, each reading the persisted
/// artifacts of the previous one. A failing stage stops the run; the report
/// is written to out_dir either way and earlier artifacts stay in place.
RunReport run_pipeline(const RunConfig& cfg, const BackendRegistry& registry, const RunOptions& options = {});

}  // namespace adaptagen
