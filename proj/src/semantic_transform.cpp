#include "adaptagen/semantic_transform.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <unordered_set>

#include <spdlog/spdlog.h>

namespace adaptagen {

void TemperatureSpec::validate() const {
    if (!std::isfinite(tau_base) || !std::isfinite(delta_tau)) {
        throw Error("temperature spec must be finite");
    }
    if (delta_tau < 0.0) {
        throw Error("delta_tau must be >= 0");
    }
    if (!(tau_base - delta_tau > 0.0)) {
        throw Error("tau_base - delta_tau must be > 0 so every temperature is positive");
    }
}

double sample_temperature(const TemperatureSpec& spec, std::uint64_t rng_seed) {
    if (spec.delta_tau == 0.0) {
        return spec.tau_base;
    }
    Rng rng(rng_seed);
    return spec.tau_base + spec.delta_tau * rng.uniform(-1.0, 1.0);
}

std::string_view to_string(Phase phase) { return phase == Phase::phase1 ? "phase1" : "phase2"; }

Phase phase_from_string(std::string_view name) {
    if (name == "phase1") {
        return Phase::phase1;
    }
    if (name == "phase2") {
        return Phase::phase2;
    }
    throw Error("unknown phase: " + std::string(name));
}

std::vector<std::string> core_tokens_for(std::string_view category) {
    auto tokens = word_tokens(category);
    if (tokens.empty()) {
        throw Error("category label has no alphanumeric characters: " + std::string(category));
    }
    return tokens;
}

bool contains_core_tokens(std::string_view text, const std::vector<std::string>& core_tokens) {
    const auto words = word_tokens(text);
    const std::unordered_set<std::string> present(words.begin(), words.end());
    return std::all_of(core_tokens.begin(), core_tokens.end(),
                       [&](const std::string& t) { return present.contains(t); });
}

std::string ensure_core_tokens(const std::string& text, const std::vector<std::string>& core_tokens) {
    if (contains_core_tokens(text, core_tokens)) {
        return text;
    }
    return join(core_tokens, " ") + ", " + text;
}

namespace {

TransformedCaption transform_one(const std::string& source_text, const std::string& image_id,
                                 const std::vector<std::string>& core_tokens, ParaphraserBackend& backend,
                                 const TemperatureSpec& spec, std::uint64_t item_seed) {
    const std::string input = ensure_core_tokens(trim(source_text), core_tokens);
    const double tau = sample_temperature(spec, derive_seed(item_seed, "tau"));

    TransformedCaption out;
    out.source_image_id = image_id;
    out.source_image_ids = {image_id};
    out.tau_used = tau;
    out.phase = Phase::phase1;

    for (const std::uint64_t s : {item_seed, derive_seed(item_seed, "retry")}) {
        std::string text;
        try {
            text = trim(backend.transform(input, tau, s));
        } catch (const std::exception& e) {
            spdlog::warn("transform: paraphraser failed on {}: {}", image_id, e.what());
            continue;
        }
        if (!text.empty() && contains_core_tokens(text, core_tokens)) {
            out.text = std::move(text);
            out.seed = s;
            return out;
        }
    }
    spdlog::warn("transform: keeping the untransformed caption for {}", image_id);
    out.text = input;
    out.seed = item_seed;
    return out;
}

const std::set<std::string>& boundary_words() {
    static const std::set<std::string> kWords = {
        "with", "on", "in", "at", "under", "near", "beside", "behind", "over", "above", "below", "against",
        "inside", "from", "by", "along", "across", "among", "around", "through", "beneath", "between",
        "and", "or", "but", "while",
    };
    return kWords;
}

bool is_function_word(const std::string& w) {
    static const std::set<std::string> kExtra = {"a", "an", "the", "of", "its", "their", "some"};
    return kExtra.contains(w) || boundary_words().contains(w);
}

std::string bare_word(std::string_view raw) {
    const auto tokens = word_tokens(raw);
    return tokens.size() == 1 ? tokens.front() : std::string();
}

}  // namespace

std::vector<TransformedCaption> phase1_transform(const std::vector<SelectedCaption>& selected,
                                                 const std::vector<std::string>& core_tokens,
                                                 ParaphraserBackend& backend, const TemperatureSpec& spec,
                                                 std::uint64_t seed) {
    spec.validate();
    if (selected.empty()) {
        throw Error("phase1_transform: no captions given");
    }
    std::vector<TransformedCaption> out;
    out.reserve(selected.size());
    for (const auto& s : selected) {
        out.push_back(transform_one(s.text, s.image_id, core_tokens, backend, spec,
                                    derive_seed(seed, "phase1/" + s.image_id)));
    }
    return out;
}

std::vector<TransformedCaption> cycle_phase1(const std::vector<SelectedCaption>& selected,
                                             const std::vector<std::string>& core_tokens, std::size_t count,
                                             ParaphraserBackend& backend, const TemperatureSpec& spec,
                                             std::uint64_t seed) {
    spec.validate();
    if (selected.empty()) {
        throw Error("cycle_phase1: no captions given");
    }
    std::vector<TransformedCaption> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const auto& s = selected[i % selected.size()];
        out.push_back(transform_one(s.text, s.image_id, core_tokens, backend, spec,
                                    derive_seed(seed, "cycle/" + std::to_string(i))));
    }
    return out;
}

std::vector<Segment> split_segments(std::string_view caption, std::string_view source_image_id,
                                    const std::vector<std::string>& core_tokens) {
    std::string text = trim(caption);
    while (!text.empty() && (text.back() == '.' || text.back() == '!')) {
        text.pop_back();
    }

    std::vector<std::string> raw_words;
    {
        std::string cur;
        for (char c : text) {
            if (std::isspace(static_cast<unsigned char>(c))) {
                if (!cur.empty()) {
                    raw_words.push_back(std::move(cur));
                    cur.clear();
                }
            } else {
                cur.push_back(c);
            }
        }
        if (!cur.empty()) {
            raw_words.push_back(std::move(cur));
        }
    }

    const std::set<std::string> core(core_tokens.begin(), core_tokens.end());
    std::vector<Segment> segments;
    std::vector<std::string> cur;
    std::string joiner;

    auto flush = [&] {
        if (cur.empty()) {
            return;
        }
        Segment seg;
        seg.source_image_id = std::string(source_image_id);
        seg.text = join(cur, " ");
        seg.joiner = segments.empty() ? std::string() : joiner;
        const std::string first = bare_word(cur.front());
        if (boundary_words().contains(first)) {
            seg.lead = first;
        }
        if (!segments.empty()) {
            for (const auto& w : word_tokens(seg.text)) {
                if (!is_function_word(w) && !core.contains(w)) {
                    seg.attribute = true;
                    break;
                }
            }
        }
        segments.push_back(std::move(seg));
        cur.clear();
    };

    for (auto word : raw_words) {
        const std::string bare = bare_word(word);
        const bool only_boundary = std::all_of(cur.begin(), cur.end(), [](const std::string& w) {
            return boundary_words().contains(bare_word(w));
        });
        if (boundary_words().contains(bare) && !cur.empty() && !only_boundary) {
            flush();
            joiner = " ";
        }
        bool ends_clause = false;
        while (!word.empty() && (word.back() == ',' || word.back() == ';')) {
            word.pop_back();
            ends_clause = true;
        }
        if (!word.empty()) {
            cur.push_back(word);
        }
        if (ends_clause) {
            flush();
            joiner = ", ";
        }
    }
    flush();
    return segments;
}

std::size_t PromptCorpus::source_count() const {
    std::set<std::string> ids;
    for (const auto& b : bases) {
        ids.insert(b.image_id);
    }
    return ids.size();
}

PromptCorpus build_corpus(const std::vector<SelectedCaption>& selected, const std::string& category,
                          const std::vector<std::string>& core_tokens) {
    if (core_tokens.empty()) {
        throw Error("build_corpus: core tokens must not be empty");
    }
    PromptCorpus corpus;
    corpus.category = category;
    corpus.core_tokens = core_tokens;
    for (const auto& s : selected) {
        BaseCaption base;
        base.image_id = s.image_id;
        base.text = trim(s.text);
        base.segments = split_segments(base.text, s.image_id, core_tokens);
        for (const auto& seg : base.segments) {
            if (seg.attribute) {
                corpus.segments.push_back(seg);
            }
        }
        corpus.bases.push_back(std::move(base));
    }

    std::set<std::string> attribute_sources;
    for (const auto& seg : corpus.segments) {
        attribute_sources.insert(seg.source_image_id);
    }
    // Capable iff some base can borrow from a different image.
    for (const auto& b : corpus.bases) {
        if (attribute_sources.size() > 1 || (attribute_sources.size() == 1 && !attribute_sources.contains(b.image_id))) {
            corpus.fusion_capable = true;
            break;
        }
    }
    return corpus;
}

namespace {

std::string render(const std::vector<Segment>& segments) {
    std::string out;
    for (const auto& s : segments) {
        out += s.joiner;
        out += s.text;
    }
    return out;
}

std::vector<std::size_t> foreign_pool(const PromptCorpus& corpus, const BaseCaption& base) {
    std::set<std::string> own;
    for (const auto& s : base.segments) {
        own.insert(normalize_text(s.text));
    }
    std::vector<std::size_t> pool;
    for (std::size_t i = 0; i < corpus.segments.size(); ++i) {
        const auto& seg = corpus.segments[i];
        if (seg.source_image_id != base.image_id && !own.contains(normalize_text(seg.text))) {
            pool.push_back(i);
        }
    }
    return pool;
}

struct FusedCandidate {
    std::string text;
    std::vector<std::string> sources;
};

FusedCandidate fuse_once(const PromptCorpus& corpus, const std::vector<std::size_t>& eligible_bases,
                         const std::vector<std::vector<std::size_t>>& pools, Rng& rng) {
    const std::size_t pick = static_cast<std::size_t>(rng.below(eligible_bases.size()));
    const auto& base = corpus.bases[eligible_bases[pick]];
    std::vector<std::size_t> pool = pools[pick];

    const std::size_t k = std::min<std::size_t>(1 + static_cast<std::size_t>(rng.below(2)), pool.size());
    for (std::size_t i = 0; i < k; ++i) {
        const std::size_t j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
        std::swap(pool[i], pool[j]);
    }

    std::vector<Segment> segs = base.segments;
    std::vector<bool> replaced(segs.size(), false);
    FusedCandidate out;
    out.sources.push_back(base.image_id);
    for (std::size_t i = 0; i < k; ++i) {
        const Segment& borrowed = corpus.segments[pool[i]];
        bool substituted = false;
        if (!borrowed.lead.empty()) {
            for (std::size_t s = 1; s < segs.size(); ++s) {
                if (!replaced[s] && segs[s].lead == borrowed.lead) {
                    segs[s].text = borrowed.text;
                    segs[s].source_image_id = borrowed.source_image_id;
                    replaced[s] = true;
                    substituted = true;
                    break;
                }
            }
        }
        if (!substituted) {
            Segment appended = borrowed;
            appended.joiner = borrowed.lead.empty() ? ", " : " ";
            segs.push_back(std::move(appended));
            replaced.push_back(true);
        }
        if (std::find(out.sources.begin(), out.sources.end(), borrowed.source_image_id) == out.sources.end()) {
            out.sources.push_back(borrowed.source_image_id);
        }
    }
    out.text = ensure_core_tokens(render(segs), corpus.core_tokens);
    return out;
}

}  // namespace

std::vector<TransformedCaption> phase2_fuse(const PromptCorpus& corpus, std::size_t count, std::uint64_t seed,
                                            ParaphraserBackend& fallback, const TemperatureSpec& spec) {
    if (count == 0) {
        throw Error("phase2_fuse: count must be positive");
    }
    if (corpus.bases.empty()) {
        throw Error("phase2_fuse: corpus for " + corpus.category + " has no captions");
    }

    std::vector<std::size_t> eligible;
    std::vector<std::vector<std::size_t>> pools;
    if (corpus.fusion_capable) {
        for (std::size_t b = 0; b < corpus.bases.size(); ++b) {
            auto pool = foreign_pool(corpus, corpus.bases[b]);
            if (!pool.empty()) {
                eligible.push_back(b);
                pools.push_back(std::move(pool));
            }
        }
    }
    if (eligible.empty()) {
        spdlog::warn("transform: corpus for {} cannot fuse; falling back to phase-1 paraphrases", corpus.category);
        std::vector<SelectedCaption> bases;
        for (const auto& b : corpus.bases) {
            bases.push_back({b.image_id, b.text, "", 0.0});
        }
        return cycle_phase1(bases, corpus.core_tokens, count, fallback, spec, derive_seed(seed, "degraded"));
    }

    constexpr int kResamples = 10;
    std::unordered_set<std::string> seen;
    std::vector<TransformedCaption> out;
    out.reserve(count);
    for (std::size_t i = 0; i < count; ++i) {
        const std::uint64_t item_seed = derive_seed(seed, "phase2/" + std::to_string(i));
        Rng rng(item_seed);
        FusedCandidate cand = fuse_once(corpus, eligible, pools, rng);
        for (int attempt = 0; attempt < kResamples && seen.contains(normalize_text(cand.text)); ++attempt) {
            cand = fuse_once(corpus, eligible, pools, rng);
        }
        if (seen.contains(normalize_text(cand.text))) {
            const std::string stem = cand.text;
            for (std::size_t ordinal = 2;; ++ordinal) {
                cand.text = stem + ", variation " + std::to_string(ordinal);
                if (!seen.contains(normalize_text(cand.text))) {
                    break;
                }
            }
        }
        seen.insert(normalize_text(cand.text));

        TransformedCaption t;
        t.source_image_id = cand.sources.front();
        t.source_image_ids = std::move(cand.sources);
        t.text = std::move(cand.text);
        t.phase = Phase::phase2;
        t.seed = item_seed;
        out.push_back(std::move(t));
    }
    return out;
}

PromptPlan plan_prompts(std::size_t selected_count, std::size_t requested) {
    if (selected_count == 0) {
        throw Error("plan_prompts: no selected captions");
    }
    if (requested <= selected_count) {
        return {requested, 0};
    }
    return {selected_count, requested - selected_count};
}

json prompt_record_to_json(const PromptRecord& record) {
    const auto& c = record.caption;
    return {{"prompt_id", record.prompt_id},
            {"category", record.category},
            {"text", c.text},
            {"phase", std::string(to_string(c.phase))},
            {"source_image_ids", c.source_image_ids},
            {"tau", c.tau_used ? json(*c.tau_used) : json(nullptr)},
            {"seed", c.seed}};
}

PromptRecord prompt_record_from_json(const json& row) {
    PromptRecord r;
    r.prompt_id = row.at("prompt_id").get<std::string>();
    r.category = row.at("category").get<std::string>();
    r.caption.text = row.at("text").get<std::string>();
    r.caption.phase = phase_from_string(row.at("phase").get<std::string>());
    r.caption.source_image_ids = row.at("source_image_ids").get<std::vector<std::string>>();
    if (!r.caption.source_image_ids.empty()) {
        r.caption.source_image_id = r.caption.source_image_ids.front();
    }
    if (!row.at("tau").is_null()) {
        r.caption.tau_used = row.at("tau").get<double>();
    }
    r.caption.seed = row.at("seed").get<std::uint64_t>();
    return r;
}

void write_prompts(const std::filesystem::path& path, const std::vector<PromptRecord>& prompts) {
    std::vector<json> rows;
    for (const auto& p : prompts) {
        rows.push_back(prompt_record_to_json(p));
    }
    write_jsonl(path, rows);
}

std::vector<PromptRecord> read_prompts(const std::filesystem::path& path) {
    std::vector<PromptRecord> out;
    for (const auto& row : read_jsonl(path)) {
        out.push_back(prompt_record_from_json(row));
    }
    return out;
}

}  // namespace adaptagen
