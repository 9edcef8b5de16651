#include "adaptagen/caption.hpp"

#include <optional>
#include <set>

#include <spdlog/spdlog.h>

#include "adaptagen/parallel.hpp"

namespace adaptagen {

std::string_view to_string(Perspective p) {
    switch (p) {
        case Perspective::object_recognition: return "object_recognition";
        case Perspective::scene_composition: return "scene_composition";
        case Perspective::subject_emphasis: return "subject_emphasis";
        case Perspective::contextual_interpretation: return "contextual_interpretation";
    }
    return "unknown";
}

Perspective perspective_from_string(std::string_view name) {
    for (auto p : {Perspective::object_recognition, Perspective::scene_composition,
                   Perspective::subject_emphasis, Perspective::contextual_interpretation}) {
        if (to_string(p) == name) {
            return p;
        }
    }
    throw Error("unknown perspective: " + std::string(name));
}

std::string_view perspective_keyword(Perspective p) {
    switch (p) {
        case Perspective::object_recognition: return "object";
        case Perspective::scene_composition: return "scene";
        case Perspective::subject_emphasis: return "subject";
        case Perspective::contextual_interpretation: return "context";
    }
    return "unknown";
}

std::vector<PromptTemplate> default_templates() {
    return {
        {"t_obj", Perspective::object_recognition,
         "Question: What is the main object in this image? Name it and describe its visible parts, "
         "colors and texture. Answer:"},
        {"t_scene", Perspective::scene_composition,
         "Question: Describe the scene in this image: where is it, what surrounds the main subject, "
         "and how is it arranged? Answer:"},
        {"t_subj", Perspective::subject_emphasis,
         "Question: Focus on the subject of this image. What distinguishing features does it have? "
         "Answer:"},
        {"t_ctx", Perspective::contextual_interpretation,
         "Question: In what context or setting would this image be taken, and what is happening in it? "
         "Answer:"},
    };
}

void validate_templates(const std::vector<PromptTemplate>& templates) {
    if (templates.empty()) {
        throw Error("template list is empty");
    }
    std::set<std::string> ids;
    for (const auto& t : templates) {
        if (t.template_id.empty()) {
            throw Error("template with empty template_id");
        }
        if (trim(t.instruction_text).empty()) {
            throw Error("template " + t.template_id + " has empty instruction_text");
        }
        if (!ids.insert(t.template_id).second) {
            throw Error("duplicate template_id " + t.template_id);
        }
    }
}

std::uint64_t candidate_seed(std::uint64_t seed, std::string_view image_id, std::string_view template_id) {
    std::string site = "caption/";
    site.append(image_id);
    site.push_back('\x1f');
    site.append(template_id);
    return derive_seed(seed, site);
}

namespace {

struct RecordOutcome {
    std::optional<CandidateSet> set;
    std::optional<CaptionFailure> failure;
};

RecordOutcome caption_record(const ImageRecord& record,
                             const std::vector<PromptTemplate>& templates,
                             CaptionerBackend& backend,
                             std::uint64_t seed,
                             const std::filesystem::path& image_root,
                             std::mutex* backend_mutex) {
    RecordOutcome outcome;
    std::vector<std::uint8_t> bytes;
    try {
        bytes = read_file_bytes(image_root / record.path);
    } catch (const std::exception& e) {
        outcome.failure = CaptionFailure{record.image_id, std::string("unreadable image: ") + e.what()};
        return outcome;
    }

    auto call = [&](const PromptTemplate& t, std::uint64_t s) {
        CaptionRequest req{record, t, bytes, s};
        if (backend_mutex != nullptr) {
            std::lock_guard lock(*backend_mutex);
            return backend.caption(req);
        }
        return backend.caption(req);
    };

    CandidateSet set;
    set.image_id = record.image_id;
    for (const auto& t : templates) {
        const std::uint64_t s = candidate_seed(seed, record.image_id, t.template_id);
        std::string text;
        try {
            text = trim(call(t, s));
            if (text.empty()) {
                text = trim(call(t, derive_seed(s, "retry")));
            }
        } catch (const std::exception& e) {
            outcome.failure = CaptionFailure{record.image_id, "captioner error on " + t.template_id + ": " + e.what()};
            return outcome;
        }
        if (text.empty()) {
            outcome.failure = CaptionFailure{record.image_id, "captioner returned empty text twice for " + t.template_id};
            return outcome;
        }
        set.candidates.push_back({record.image_id, t.template_id, std::move(text)});
    }
    outcome.set = std::move(set);
    return outcome;
}

}  // namespace

CaptionResult generate_candidates(const std::vector<ImageRecord>& records,
                                  const std::vector<PromptTemplate>& templates,
                                  CaptionerBackend& backend,
                                  std::uint64_t seed,
                                  const std::filesystem::path& image_root,
                                  std::size_t parallelism) {
    validate_templates(templates);

    std::mutex backend_mutex;
    std::mutex* serialize = backend.concurrent_safe() ? nullptr : &backend_mutex;
    std::vector<RecordOutcome> outcomes(records.size());
    parallel_for(records.size(), parallelism, [&](std::size_t i) {
        outcomes[i] = caption_record(records[i], templates, backend, seed, image_root, serialize);
    });

    CaptionResult result;
    for (auto& o : outcomes) {
        if (o.set) {
            result.sets.push_back(std::move(*o.set));
        } else if (o.failure) {
            spdlog::warn("caption: dropping {}: {}", o.failure->image_id, o.failure->reason);
            result.failures.push_back(std::move(*o.failure));
        }
    }
    return result;
}

json candidate_set_to_json(const CandidateSet& set) {
    json candidates = json::array();
    for (const auto& c : set.candidates) {
        candidates.push_back({{"template_id", c.template_id}, {"text", c.text}});
    }
    return {{"image_id", set.image_id}, {"candidates", std::move(candidates)}};
}

CandidateSet candidate_set_from_json(const json& row) {
    CandidateSet set;
    set.image_id = row.at("image_id").get<std::string>();
    for (const auto& c : row.at("candidates")) {
        set.candidates.push_back({set.image_id, c.at("template_id").get<std::string>(), c.at("text").get<std::string>()});
    }
    if (set.candidates.empty()) {
        throw Error("candidate set for " + set.image_id + " is empty");
    }
    return set;
}

void write_captions_raw(const std::filesystem::path& path, const std::vector<CandidateSet>& sets) {
    std::vector<json> rows;
    rows.reserve(sets.size());
    for (const auto& s : sets) {
        rows.push_back(candidate_set_to_json(s));
    }
    write_jsonl(path, rows);
}

std::vector<CandidateSet> read_captions_raw(const std::filesystem::path& path) {
    std::vector<CandidateSet> sets;
    for (const auto& row : read_jsonl(path)) {
        sets.push_back(candidate_set_from_json(row));
    }
    return sets;
}

json templates_to_json(const std::vector<PromptTemplate>& templates) {
    json list = json::array();
    for (const auto& t : templates) {
        list.push_back({{"template_id", t.template_id},
                        {"perspective", std::string(to_string(t.perspective))},
                        {"instruction_text", t.instruction_text}});
    }
    return list;
}

std::vector<PromptTemplate> templates_from_json(const json& doc) {
    std::vector<PromptTemplate> out;
    for (const auto& item : doc) {
        out.push_back({item.at("template_id").get<std::string>(),
                       perspective_from_string(item.at("perspective").get<std::string>()),
                       item.at("instruction_text").get<std::string>()});
    }
    return out;
}

}  // namespace adaptagen
