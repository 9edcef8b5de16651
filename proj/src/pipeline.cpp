#include "adaptagen/pipeline.hpp"

#include <algorithm>
#include <chrono>
#include <map>

#include <spdlog/spdlog.h>

#include "adaptagen/caption.hpp"
#include "adaptagen/dataset.hpp"
#include "adaptagen/evaluation.hpp"
#include "adaptagen/generation.hpp"
#include "adaptagen/lora_train.hpp"
#include "adaptagen/prompt_matrix.hpp"
#include "adaptagen/semantic_transform.hpp"

namespace fs = std::filesystem;

namespace adaptagen {

std::string_view to_string(Stage stage) {
    switch (stage) {
        case Stage::ingest: return "ingest";
        case Stage::caption: return "caption";
        case Stage::select: return "select";
        case Stage::train: return "train";
        case Stage::transform: return "transform";
        case Stage::generate: return "generate";
        case Stage::evaluate: return "evaluate";
    }
    return "?";
}

Stage stage_from_string(std::string_view name) {
    for (Stage s : kAllStages) {
        if (to_string(s) == name) {
            return s;
        }
    }
    throw Error("unknown stage \"" + std::string(name) +
                "\" (expected ingest, caption, select, train, transform, generate or evaluate)");
}

std::string_view to_string(StageStatus status) {
    switch (status) {
        case StageStatus::ok: return "ok";
        case StageStatus::skipped: return "skipped";
        case StageStatus::failed: return "failed";
    }
    return "?";
}

std::vector<std::string> stage_inputs(Stage stage) {
    using namespace artifact;
    switch (stage) {
        case Stage::ingest: return {};
        case Stage::caption: return {kManifest};
        case Stage::select: return {kManifest, kCaptionsRaw};
        case Stage::train: return {kManifest, kSelected};
        case Stage::transform: return {kManifest, kSelected};
        case Stage::generate: return {kPrompts, kTrainResult};
        case Stage::evaluate: return {kDatasetFull, kPrompts, kGenerated};
    }
    return {};
}

std::vector<std::string> stage_outputs(Stage stage) {
    using namespace artifact;
    switch (stage) {
        case Stage::ingest: return {kDatasetFull, kManifest};
        case Stage::caption: return {kCaptionsRaw, kCaptionFailures};
        case Stage::select: return {kSimilarity, kSelected};
        case Stage::train: return {kAdapterDir, kTrainLog, kTrainResult};
        case Stage::transform: return {kPrompts};
        case Stage::generate: return {kGeneratedDir, kGenerated};
        case Stage::evaluate: return {kMetrics};
    }
    return {};
}

bool RunReport::ok() const {
    return std::none_of(stages.begin(), stages.end(),
                        [](const StageReport& s) { return s.status == StageStatus::failed; });
}

json run_report_to_json(const RunReport& report) {
    json stages = json::array();
    for (const auto& s : report.stages) {
        json row = {{"stage", std::string(to_string(s.stage))},
                    {"status", std::string(to_string(s.status))},
                    {"seconds", s.seconds},
                    {"artifacts", s.artifacts}};
        if (!s.error.empty()) {
            row["error"] = s.error;
        }
        stages.push_back(std::move(row));
    }
    return {{"ok", report.ok()},
            {"stages", std::move(stages)},
            {"config", report.config_snapshot},
            {"digest", report.digest},
            {"digest_inputs", report.digest_inputs}};
}

std::string run_digest(const fs::path& out_dir, std::vector<std::string>* inputs) {
    std::vector<std::string> files;
    if (fs::is_directory(out_dir)) {
        for (const auto& entry : fs::recursive_directory_iterator(out_dir)) {
            if (!entry.is_regular_file()) {
                continue;
            }
            const auto ext = entry.path().extension();
            if (ext != ".json" && ext != ".jsonl") {
                continue;
            }
            const auto rel = fs::relative(entry.path(), out_dir).generic_string();
            if (rel != artifact::kRunReport) {
                files.push_back(rel);
            }
        }
    }
    std::sort(files.begin(), files.end());
    Sha256 h;
    for (const auto& rel : files) {
        h.update(rel);
        h.update(std::string_view("\0", 1));
        h.update(sha256_file_hex(out_dir / rel));
        h.update("\n");
    }
    if (inputs) {
        *inputs = files;
    }
    return h.finish_hex();
}

namespace {

struct Context {
    const RunConfig& cfg;
    const BackendRegistry& registry;
    fs::path out;

    fs::path at(const std::string& name) const { return out / name; }
};

// ---------------------------------------------------------------------------

void run_ingest(const Context& c) {
    const DatasetManifest full = scan_dataset(c.cfg.dataset.root);
    write_manifest(c.at(artifact::kDatasetFull), full);
    const DatasetManifest sampled = sample_per_category(full, c.cfg.dataset.k, c.cfg.dataset_seed());
    write_manifest(c.at(artifact::kManifest), sampled);
    spdlog::info("ingest: {} categories, {} of {} images sampled", sampled.categories.size(),
                 sampled.record_count(), full.record_count());
}

void run_caption(const Context& c) {
    const DatasetManifest manifest = read_manifest(c.at(artifact::kManifest));
    auto captioner = c.registry.captioner(c.cfg.caption.backend.name, c.cfg.caption.backend.options);
    const CaptionResult result =
        generate_candidates(manifest.all_records(), c.cfg.caption.templates, *captioner,
                            derive_seed(c.cfg.seed, "caption"), manifest.root, c.cfg.caption.parallelism);
    write_captions_raw(c.at(artifact::kCaptionsRaw), result.sets);
    std::vector<json> failures;
    for (const auto& f : result.failures) {
        failures.push_back({{"image_id", f.image_id}, {"reason", f.reason}});
        spdlog::warn("caption: dropped {}: {}", f.image_id, f.reason);
    }
    write_jsonl(c.at(artifact::kCaptionFailures), failures);
    if (result.sets.empty()) {
        throw Error("caption: every image failed");
    }
    spdlog::info("caption: {} images x {} templates, {} failures", result.sets.size(),
                 c.cfg.caption.templates.size(), result.failures.size());
}

std::map<std::string, ImageRecord> records_by_id(const DatasetManifest& m) {
    std::map<std::string, ImageRecord> out;
    for (const auto& r : m.all_records()) {
        out.emplace(r.image_id, r);
    }
    return out;
}

void run_select(const Context& c) {
    const DatasetManifest manifest = read_manifest(c.at(artifact::kManifest));
    const auto sets = read_captions_raw(c.at(artifact::kCaptionsRaw));
    const auto by_id = records_by_id(manifest);
    std::vector<ImageRecord> images;
    for (const auto& s : sets) {
        const auto it = by_id.find(s.image_id);
        if (it == by_id.end()) {
            throw Error("select: captions_raw mentions " + s.image_id + ", which is not in the manifest");
        }
        images.push_back(it->second);
    }
    auto embedder = c.registry.embedder(c.cfg.select.backend.name, c.cfg.select.backend.options);
    const SimilarityMatrix matrix =
        build_similarity_matrix(images, sets, *embedder, manifest.root, c.cfg.select.parallelism);
    write_json(c.at(artifact::kSimilarity), similarity_matrix_to_json(matrix));
    write_selected(c.at(artifact::kSelected), select_optimal(matrix, sets));
}

void run_train(const Context& c) {
    const DatasetManifest manifest = read_manifest(c.at(artifact::kManifest));
    const auto selected = read_selected(c.at(artifact::kSelected));
    const auto by_id = records_by_id(manifest);
    std::vector<TrainingExample> examples;
    for (const auto& s : selected) {
        const auto it = by_id.find(s.image_id);
        if (it == by_id.end()) {
            throw Error("train: selected caption for unknown image " + s.image_id);
        }
        examples.push_back({s.image_id, read_file_bytes(manifest.absolute_path(it->second)), s.text});
    }

    const LoraConfig lcfg = c.cfg.resolved_lora();
    auto trainer = c.registry.trainer(c.cfg.lora.backend.name, c.cfg.lora.backend.options);
    ModuleGraph model = trainer->make_model(derive_seed(c.cfg.seed, "train.model"));
    const std::string base_before = sha256_hex(model.serialize_base());
    LoraAdapter adapter = init_adapter(model.target_shapes(lcfg.target_selectors), lcfg);
    auto batches = trainer->make_batches(examples, derive_seed(c.cfg.seed, "train.batches"));

    const fs::path adapter_dir = c.at(artifact::kAdapterDir);
    fs::create_directories(adapter_dir);
    std::vector<json> log;
    auto rel = [&](const fs::path& p) { return p.empty() ? std::string() : fs::relative(p, c.out).generic_string(); };
    TrainOptions options;
    options.checkpoint_dir = adapter_dir;
    options.on_state = [&](const TrainState& s) {
        log.push_back({{"step", s.step}, {"loss", s.loss}, {"checkpoint", rel(s.checkpoint)}, {"rng_state", s.rng_state}});
    };

    TrainState final_state;
    try {
        final_state = train(adapter, *batches, model, lcfg, options);
    } catch (const TrainingAborted& e) {
        write_jsonl(c.at(artifact::kTrainLog), log);
        throw Error(std::string(e.what()) + "; last good checkpoint: " +
                    (e.last_good().checkpoint.empty() ? "none" : rel(e.last_good().checkpoint)));
    }
    write_jsonl(c.at(artifact::kTrainLog), log);
    if (sha256_hex(model.serialize_base()) != base_before) {
        throw Error("train: base weights changed during adapter training");
    }

    json targets = json::array();
    for (const auto& e : adapter.entries) {
        targets.push_back({{"name", e.target_name}, {"d_out", e.d_out}, {"d_in", e.d_in}, {"scale", e.scale}});
    }
    write_json(c.at(artifact::kTrainResult),
               {{"steps", final_state.step},
                {"initial_loss", log.empty() ? json(nullptr) : log.front()["loss"]},
                {"final_loss", final_state.loss},
                {"checkpoint", rel(final_state.checkpoint)},
                {"checkpoint_sha256", sha256_file_hex(final_state.checkpoint)},
                {"base_sha256", base_before},
                {"parameter_count", adapter.parameter_count()},
                {"targets", targets},
                {"lora", lora_config_to_json(lcfg)},
                {"backend", trainer->name()}});
}

std::string prompt_id(const std::string& category, std::size_t index, std::size_t total) {
    const std::size_t width = std::max<std::size_t>(4, std::to_string(total > 0 ? total - 1 : 0).size());
    std::string digits = std::to_string(index);
    digits.insert(0, width - std::min(width, digits.size()), '0');
    return category + "-" + digits;
}

void run_transform(const Context& c) {
    const DatasetManifest manifest = read_manifest(c.at(artifact::kManifest));
    const auto selected = read_selected(c.at(artifact::kSelected));
    const auto by_id = records_by_id(manifest);
    std::map<std::string, std::vector<SelectedCaption>> per_category;
    for (const auto& s : selected) {
        const auto it = by_id.find(s.image_id);
        if (it == by_id.end()) {
            throw Error("transform: selected caption for unknown image " + s.image_id);
        }
        per_category[it->second.category].push_back(s);
    }

    const auto& t = c.cfg.transform;
    const std::size_t count = c.cfg.generate.per_category_count;
    auto paraphraser = c.registry.paraphraser(t.backend.name, t.backend.options);
    std::vector<PromptRecord> prompts;
    for (const auto& category : manifest.category_names()) {
        const auto it = per_category.find(category);
        if (it == per_category.end() || it->second.empty()) {
            throw Error("transform: category " + category + " has no selected captions");
        }
        const auto& sel = it->second;
        const auto core = core_tokens_for(category);
        const std::uint64_t seed = derive_seed(c.cfg.seed, "transform/" + category);
        std::vector<TransformedCaption> out;
        if (t.disable_transform) {
            for (std::size_t i = 0; i < count; ++i) {
                const auto& s = sel[i % sel.size()];
                TransformedCaption tc;
                tc.source_image_id = s.image_id;
                tc.source_image_ids = {s.image_id};
                tc.text = ensure_core_tokens(s.text, core);
                out.push_back(std::move(tc));
            }
        } else {
            const PromptPlan plan = plan_prompts(sel.size(), count);
            const std::vector<SelectedCaption> head(sel.begin(),
                                                    sel.begin() + static_cast<std::ptrdiff_t>(plan.phase1_count));
            out = phase1_transform(head, core, *paraphraser, t.temperature, derive_seed(seed, "phase1"));
            if (plan.phase2_count > 0) {
                std::vector<TransformedCaption> extra;
                if (t.disable_fusion) {
                    extra = cycle_phase1(sel, core, plan.phase2_count, *paraphraser, t.temperature,
                                         derive_seed(seed, "ablation"));
                } else {
                    const PromptCorpus corpus = build_corpus(sel, category, core);
                    extra = phase2_fuse(corpus, plan.phase2_count, derive_seed(seed, "fusion"), *paraphraser,
                                        t.temperature);
                }
                out.insert(out.end(), std::make_move_iterator(extra.begin()), std::make_move_iterator(extra.end()));
            }
        }
        for (std::size_t i = 0; i < out.size(); ++i) {
            prompts.push_back({prompt_id(category, i, out.size()), category, std::move(out[i])});
        }
    }
    write_prompts(c.at(artifact::kPrompts), prompts);
    spdlog::info("transform: {} prompts over {} categories", prompts.size(), manifest.categories.size());
}

void run_generate(const Context& c) {
    const auto prompts = read_prompts(c.at(artifact::kPrompts));
    const json result = read_json(c.at(artifact::kTrainResult));
    const fs::path checkpoint = c.out / result.at("checkpoint").get<std::string>();
    const AdapterRef adapter = AdapterRef::from_file(checkpoint);
    if (adapter.sha256 != result.at("checkpoint_sha256").get<std::string>()) {
        throw Error("generate: adapter checkpoint " + checkpoint.string() + " does not match train_result.json");
    }

    const auto& g = c.cfg.generate;
    std::vector<GenerationRequest> requests;
    requests.reserve(prompts.size());
    for (const auto& p : prompts) {
        GenerationRequest r;
        r.prompt_id = p.prompt_id;
        r.category = p.category;
        r.prompt = p.caption.text;
        r.steps = g.steps;
        r.guidance = g.omega;
        r.lora_scale = g.s;
        r.seed = request_seed(c.cfg.seed, p.prompt_id);
        r.width = g.width;
        r.height = g.height;
        requests.push_back(std::move(r));
    }
    auto generator = c.registry.generator(g.backend.name, g.backend.options);
    const fs::path root = c.at(artifact::kGeneratedDir);
    const BatchResult batch = batch_generate(requests, *generator, &adapter, root, g.parallelism);
    write_generation_manifest(c.at(artifact::kGenerated), batch.images);
    if (batch.failure_threshold_exceeded()) {
        throw Error("generate: " + std::to_string(batch.failed) + " of " + std::to_string(batch.images.size()) +
                    " requests failed (more than 10%)");
    }
    spdlog::info("generate: {} images, {} failed", batch.images.size() - batch.failed, batch.failed);
}

void run_evaluate(const Context& c) {
    const DatasetManifest full = read_manifest(c.at(artifact::kDatasetFull));
    const auto prompts = read_prompts(c.at(artifact::kPrompts));
    const auto generated = read_generation_manifest(c.at(artifact::kGenerated));
    std::map<std::string, std::string> prompt_text;
    for (const auto& p : prompts) {
        prompt_text[p.prompt_id] = p.caption.text;
    }

    const auto& e = c.cfg.evaluate;
    auto features = c.registry.feature_extractor(e.features.name, e.features.options);
    auto classifier = c.registry.classifier(e.classifier.name, e.classifier.options);
    const BackendChoice& emb = c.cfg.eval_embedder();
    auto embedder = c.registry.embedder(emb.name, emb.options);

    std::map<std::string, std::vector<const GeneratedImage*>> per_category;
    for (const auto& g : generated) {
        if (g.status == GenerationStatus::ok) {
            per_category[g.request.category].push_back(&g);
        }
    }

    auto feature_matrix = [&](const std::vector<std::vector<std::uint8_t>>& images) {
        Eigen::MatrixXd m(static_cast<Eigen::Index>(images.size()), static_cast<Eigen::Index>(features->dim()));
        for (std::size_t i = 0; i < images.size(); ++i) {
            const Eigen::VectorXd f = features->extract(images[i]);
            if (static_cast<std::size_t>(f.size()) != features->dim()) {
                throw Error("evaluate: feature extractor returned " + std::to_string(f.size()) + " dims");
            }
            m.row(static_cast<Eigen::Index>(i)) = f.transpose();
        }
        return m;
    };

    MetricReport report;
    report.backends = {{"features", features->name()}, {"classifier", classifier->name()}, {"embedder", embedder->name()}};
    report.clip_convention = std::string(to_string(e.clip_convention));
    report.splits = e.splits;
    const fs::path gen_root = c.at(artifact::kGeneratedDir);
    for (const auto& [category, records] : full.categories) {
        const auto git = per_category.find(category);
        if (git == per_category.end() || git->second.size() < 2) {
            throw Error("evaluate: category " + category + " has fewer than 2 generated images");
        }
        if (records.size() < 2) {
            throw Error("evaluate: category " + category + " has fewer than 2 real images");
        }
        std::vector<std::vector<std::uint8_t>> real;
        for (const auto& r : records) {
            real.push_back(read_file_bytes(full.absolute_path(r)));
        }
        std::vector<std::vector<std::uint8_t>> gen;
        std::vector<std::string> texts;
        for (const GeneratedImage* g : git->second) {
            gen.push_back(read_file_bytes(gen_root / g->path));
            const auto pt = prompt_text.find(g->request.prompt_id);
            if (pt == prompt_text.end()) {
                throw Error("evaluate: generated image " + g->request.prompt_id + " has no prompt");
            }
            texts.push_back(pt->second);
        }

        CategoryMetrics m;
        m.n_real = real.size();
        m.n_generated = gen.size();
        m.fid = fid(feature_stats(feature_matrix(real)), feature_stats(feature_matrix(gen)));

        ClassProbabilities probs;
        probs.rows.resize(static_cast<Eigen::Index>(gen.size()), static_cast<Eigen::Index>(classifier->num_classes()));
        for (std::size_t i = 0; i < gen.size(); ++i) {
            const Eigen::VectorXd p = classifier->classify(gen[i]);
            if (static_cast<std::size_t>(p.size()) != classifier->num_classes()) {
                throw Error("evaluate: classifier returned " + std::to_string(p.size()) + " classes");
            }
            probs.rows.row(static_cast<Eigen::Index>(i)) = p.transpose();
        }
        const std::size_t splits = std::min(e.splits, gen.size());
        if (splits < e.splits) {
            spdlog::warn("evaluate: {} has {} images; using {} IS splits", category, gen.size(), splits);
        }
        const InceptionScore is = inception_score(probs, splits);
        m.is_mean = is.mean;
        m.is_std = is.std;

        std::vector<EmbeddingVector> image_emb;
        std::vector<EmbeddingVector> text_emb;
        for (std::size_t i = 0; i < gen.size(); ++i) {
            image_emb.push_back(embedder->embed_image(gen[i]));
            text_emb.push_back(embedder->embed_text(texts[i]));
        }
        m.clip_score = clip_score(image_emb, text_emb, e.clip_convention);
        report.per_category[category] = m;
    }
    aggregate(report);
    const json doc = metric_report_to_json(report);
    const auto problems = validate_metrics_json(doc);
    if (!problems.empty()) {
        throw Error("evaluate: metrics failed validation: " + join(problems, "; "));
    }
    write_json(c.at(artifact::kMetrics), doc);
    spdlog::info("evaluate: FID {:.4f}, IS {:.4f}, CLIP {:.4f}", report.overall.fid, report.overall.is_mean,
                 report.overall.clip_score);
}

void run_stage(Stage stage, const Context& c) {
    switch (stage) {
        case Stage::ingest: return run_ingest(c);
        case Stage::caption: return run_caption(c);
        case Stage::select: return run_select(c);
        case Stage::train: return run_train(c);
        case Stage::transform: return run_transform(c);
        case Stage::generate: return run_generate(c);
        case Stage::evaluate: return run_evaluate(c);
    }
}

void check_writable(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) {
        throw Error("output directory " + dir.string() + " cannot be created: " + ec.message());
    }
    const fs::path probe = dir / ".write-probe";
    write_text_atomic(probe, "");
    fs::remove(probe, ec);
}

}  // namespace

RunReport run_pipeline(const RunConfig& cfg, const BackendRegistry& registry, const RunOptions& options) {
    const Stage from = options.from.value_or(Stage::ingest);
    const Stage until = options.until.value_or(Stage::evaluate);
    if (static_cast<int>(from) > static_cast<int>(until)) {
        throw Error("--from " + std::string(to_string(from)) + " comes after --until " +
                    std::string(to_string(until)));
    }
    check_writable(cfg.out_dir);
    const Context ctx{cfg, registry, cfg.out_dir};

    RunReport report;
    report.config_snapshot = run_config_to_json(cfg);
    bool failed = false;
    for (Stage stage : kAllStages) {
        StageReport sr;
        sr.stage = stage;
        const int idx = static_cast<int>(stage);
        if (failed || idx < static_cast<int>(from) || idx > static_cast<int>(until)) {
            report.stages.push_back(std::move(sr));
            continue;
        }
        const auto start = std::chrono::steady_clock::now();
        try {
            for (const auto& input : stage_inputs(stage)) {
                if (!fs::exists(ctx.at(input))) {
                    throw Error("missing input artifact " + input + " (run the earlier stages first)");
                }
            }
            for (const auto& output : stage_outputs(stage)) {
                fs::remove_all(ctx.at(output));
            }
            spdlog::info("stage {}", to_string(stage));
            run_stage(stage, ctx);
            sr.status = StageStatus::ok;
        } catch (const std::exception& e) {
            sr.status = StageStatus::failed;
            sr.error = e.what();
            failed = true;
            spdlog::error("stage {} failed: {}", to_string(stage), e.what());
        }
        sr.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        for (const auto& output : stage_outputs(stage)) {
            if (fs::exists(ctx.at(output))) {
                sr.artifacts.push_back(output);
            }
        }
        report.stages.push_back(std::move(sr));
    }
    report.digest = run_digest(cfg.out_dir, &report.digest_inputs);
    write_json(ctx.at(artifact::kRunReport), run_report_to_json(report));
    return report;
}

}  // namespace adaptagen
