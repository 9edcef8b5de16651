#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "adaptagen/common.hpp"
#include "adaptagen/prompt_matrix.hpp"

namespace adaptagen {

struct TemperatureSpec {
    double tau_base = 0.8;
    double delta_tau = 0.2;

    /// Requires delta_tau >= 0 and tau_base - delta_tau > 0.
    void validate() const;
};

/// tau_base + delta_tau * u, u uniform on [-1, 1].
double sample_temperature(const TemperatureSpec& spec, std::uint64_t rng_seed);

enum class Phase { phase1, phase2 };
std::string_view to_string(Phase phase);
Phase phase_from_string(std::string_view name);

struct TransformedCaption {
    std::string source_image_id;               // the caption the text was derived from (base for fusion)
    std::vector<std::string> source_image_ids;  // every contributing image, base first
    std::string text;
    std::optional<double> tau_used;
    Phase phase = Phase::phase1;
    std::uint64_t seed = 0;
};

class ParaphraserBackend {
public:
    virtual ~ParaphraserBackend() = default;
    virtual std::string name() const = 0;
    virtual bool concurrent_safe() const { return false; }
    /// Deterministic for fixed inputs; non-empty output for non-empty input.
    virtual std::string transform(const std::string& text, double temperature, std::uint64_t seed) = 0;
};

/// Lowercased alphanumeric runs of the category label ("Apple___scab" ->
/// {"apple", "scab"}). Throws when the label has no alphanumerics.
std::vector<std::string> core_tokens_for(std::string_view category);
/// Every core token appears as a word of `text`.
bool contains_core_tokens(std::string_view text, const std::vector<std::string>& core_tokens);
/// Returns `text` unchanged when it holds every core token, otherwise
/// prefixes the space-joined tokens.
std::string ensure_core_tokens(const std::string& text, const std::vector<std::string>& core_tokens);

/// One output per input. Outputs missing a core token are retried once with
/// a perturbed seed, then replaced by the source caption.
std::vector<TransformedCaption> phase1_transform(const std::vector<SelectedCaption>& selected,
                                                 const std::vector<std::string>& core_tokens,
                                                 ParaphraserBackend& backend,
                                                 const TemperatureSpec& spec,
                                                 std::uint64_t seed);

// ---------------------------------------------------------------------------
// Corpus fusion

struct Segment {
    std::string source_image_id;
    std::string text;
    /// Separator that preceded the segment in its caption: "" for the head,
    /// " " after a boundary word split, ", " after punctuation.
    std::string joiner;
    /// First word when the segment opens with a preposition or conjunction.
    std::string lead;
    bool attribute = false;  // carries content beyond core tokens and function words
};

/// Splits a caption at commas/semicolons and before prepositions and
/// conjunctions. "a photo of pizza with basil" -> {"a photo of pizza", "with basil"}.
std::vector<Segment> split_segments(std::string_view caption, std::string_view source_image_id,
                                    const std::vector<std::string>& core_tokens);

struct BaseCaption {
    std::string image_id;
    std::string text;
    std::vector<Segment> segments;
};

struct PromptCorpus {
    std::string category;
    std::vector<std::string> core_tokens;
    std::vector<BaseCaption> bases;
    std::vector<Segment> segments;  // attribute pool
    bool fusion_capable = false;

    std::size_t source_count() const;
};

PromptCorpus build_corpus(const std::vector<SelectedCaption>& selected, const std::string& category,
                          const std::vector<std::string>& core_tokens);

/// `count` fused prompts: a seeded base caption plus one or two attribute
/// segments borrowed from other images, deduplicated on normalized text. A
/// fusion-incapable corpus degrades to phase-1 paraphrases of cycled bases.
std::vector<TransformedCaption> phase2_fuse(const PromptCorpus& corpus, std::size_t count, std::uint64_t seed,
                                            ParaphraserBackend& fallback, const TemperatureSpec& spec);

/// Phase-1 paraphrases of selected[i % n] for i in [0, count), each with its
/// own derived seed. Used by the fusion fallback and the fusion ablation.
std::vector<TransformedCaption> cycle_phase1(const std::vector<SelectedCaption>& selected,
                                             const std::vector<std::string>& core_tokens, std::size_t count,
                                             ParaphraserBackend& backend, const TemperatureSpec& spec,
                                             std::uint64_t seed);

struct PromptPlan {
    std::size_t phase1_count = 0;
    std::size_t phase2_count = 0;

    bool operator==(const PromptPlan&) const = default;
};

PromptPlan plan_prompts(std::size_t selected_count, std::size_t requested);

// ---------------------------------------------------------------------------
// prompts.jsonl

struct PromptRecord {
    std::string prompt_id;
    std::string category;
    TransformedCaption caption;
};

json prompt_record_to_json(const PromptRecord& record);
PromptRecord prompt_record_from_json(const json& row);
void write_prompts(const std::filesystem::path& path, const std::vector<PromptRecord>& prompts);
std::vector<PromptRecord> read_prompts(const std::filesystem::path& path);

}  // namespace adaptagen
