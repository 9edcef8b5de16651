#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "adaptagen/common.hpp"
#include "adaptagen/dataset.hpp"

namespace adaptagen {

enum class Perspective {
    object_recognition,
    scene_composition,
    subject_emphasis,
    contextual_interpretation,
};

std::string_view to_string(Perspective p);
Perspective perspective_from_string(std::string_view name);
/// Short keyword used by the mock captioner ("object", "scene", ...).
std::string_view perspective_keyword(Perspective p);

struct PromptTemplate {
    std::string template_id;
    Perspective perspective = Perspective::object_recognition;
    std::string instruction_text;
};

struct CandidateCaption {
    std::string image_id;
    std::string template_id;
    std::string text;

    bool operator==(const CandidateCaption&) const = default;
};

/// Candidates for one image, in template order.
struct CandidateSet {
    std::string image_id;
    std::vector<CandidateCaption> candidates;

    bool operator==(const CandidateSet&) const = default;
};

struct CaptionRequest {
    const ImageRecord& record;
    const PromptTemplate& prompt;
    std::span<const std::uint8_t> image_bytes;
    std::uint64_t seed;
};

class CaptionerBackend {
public:
    virtual ~CaptionerBackend() = default;
    virtual std::string name() const = 0;
    /// True when caption() may be called from several threads at once.
    virtual bool concurrent_safe() const { return false; }
    /// Must be deterministic for fixed (image bytes, instruction text, seed).
    virtual std::string caption(const CaptionRequest& request) = 0;
};

/// The four shipped perspective templates: t_obj, t_scene, t_subj, t_ctx.
/// The instruction wording is ours, not a canonical prompt set.
std::vector<PromptTemplate> default_templates();

void validate_templates(const std::vector<PromptTemplate>& templates);

struct CaptionFailure {
    std::string image_id;
    std::string reason;
};

struct CaptionResult {
    std::vector<CandidateSet> sets;  // record order, failed records omitted
    std::vector<CaptionFailure> failures;
};

std::uint64_t candidate_seed(std::uint64_t seed, std::string_view image_id, std::string_view template_id);

/// Runs every template against every record. Per-record failures (unreadable
/// image, backend returning blank text twice) are collected and the record is
/// dropped; an empty template list throws before any backend call.
CaptionResult generate_candidates(const std::vector<ImageRecord>& records,
                                  const std::vector<PromptTemplate>& templates,
                                  CaptionerBackend& backend,
                                  std::uint64_t seed,
                                  const std::filesystem::path& image_root,
                                  std::size_t parallelism = 1);

json candidate_set_to_json(const CandidateSet& set);
CandidateSet candidate_set_from_json(const json& row);

void write_captions_raw(const std::filesystem::path& path, const std::vector<CandidateSet>& sets);
std::vector<CandidateSet> read_captions_raw(const std::filesystem::path& path);

json templates_to_json(const std::vector<PromptTemplate>& templates);
std::vector<PromptTemplate> templates_from_json(const json& doc);

}  // namespace adaptagen
