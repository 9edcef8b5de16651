#include <doctest.h>

#include <set>

#include "adaptagen/evaluation.hpp"
#include "adaptagen/generation.hpp"
#include "adaptagen/pipeline.hpp"
#include "adaptagen/semantic_transform.hpp"
#include "pipeline_fixture.hpp"

using namespace adaptagen;

namespace {

const StageReport& stage(const RunReport& r, Stage s) { return r.stages.at(static_cast<std::size_t>(s)); }

struct Fixture {
    testing::TempDir data;
    BackendRegistry registry = default_registry();
    Fixture() { testing::make_fixture(data.path(), {"apple_scab", "golden_retriever"}, 16); }
};

}  // namespace

TEST_CASE("stage names") {
    for (Stage s : kAllStages) CHECK(stage_from_string(to_string(s)) == s);
    CHECK_THROWS_AS(stage_from_string("finetune"), Error);
    CHECK(stage_inputs(Stage::ingest).empty());
    CHECK(stage_outputs(Stage::evaluate) == std::vector<std::string>{artifact::kMetrics});
}

TEST_CASE("end-to-end run on the fixture") {
    Fixture fx;
    testing::TempDir out;
    const auto cfg = testing::small_run_config(fx.data.path(), out.path());
    const auto report = run_pipeline(cfg, fx.registry);
    for (const auto& s : report.stages) CHECK_MESSAGE(s.status == StageStatus::ok, to_string(s.stage), " ", s.error);
    REQUIRE(report.ok());

    const auto generated = read_generation_manifest(out / artifact::kGenerated);
    CHECK(generated.size() == 128);
    CHECK(verify_generation_manifest(generated, out / artifact::kGeneratedDir).empty());

    const auto prompts = read_prompts(out / artifact::kPrompts);
    CHECK(prompts.size() == 128);
    std::size_t phase2 = 0;
    for (const auto& p : prompts) {
        CHECK(contains_core_tokens(p.caption.text, core_tokens_for(p.category)));
        phase2 += p.caption.phase == Phase::phase2;
    }
    CHECK(phase2 == 2 * (64 - 16));

    const auto metrics = read_json(out / artifact::kMetrics);
    CHECK(validate_metrics_json(metrics).empty());
    CHECK(metrics.at("per_category").size() == 2);
    CHECK(metrics["per_category"]["apple_scab"]["n_generated"] == 64);

    // Single-batch losses are noisy; compare the first and last 20 steps.
    const auto log = read_jsonl(out / artifact::kTrainLog);
    REQUIRE(log.size() >= 40);
    double early = 0, late = 0;
    for (std::size_t i = 0; i < 20; ++i) {
        early += log[i].at("loss").get<double>();
        late += log[log.size() - 1 - i].at("loss").get<double>();
    }
    CHECK(late < early);

    const auto rr = read_json(out / artifact::kRunReport);
    CHECK(rr.at("ok") == true);
    CHECK(rr.at("digest") == report.digest);
    CHECK(std::find(report.digest_inputs.begin(), report.digest_inputs.end(), artifact::kRunReport) ==
          report.digest_inputs.end());
}

TEST_CASE("reruns and relocated runs produce the same digest") {
    Fixture fx;
    testing::TempDir a, b;
    const auto ra = run_pipeline(testing::small_run_config(fx.data.path(), a.path(), 24), fx.registry);
    const auto rb = run_pipeline(testing::small_run_config(fx.data.path(), b.path(), 24), fx.registry);
    REQUIRE(ra.ok());
    REQUIRE(rb.ok());
    CHECK(ra.digest == rb.digest);
    const auto again = run_pipeline(testing::small_run_config(fx.data.path(), a.path(), 24), fx.registry);
    CHECK(again.digest == ra.digest);
    const auto other_seed = run_pipeline(testing::small_run_config(fx.data.path(), b.path(), 24, 8), fx.registry);
    CHECK(other_seed.digest != ra.digest);
}

TEST_CASE("fusion and transform ablations") {
    Fixture fx;
    testing::TempDir out;
    auto cfg = testing::small_run_config(fx.data.path(), out.path(), 24);
    cfg.transform.disable_fusion = true;
    REQUIRE(run_pipeline(cfg, fx.registry).ok());
    for (const auto& p : read_prompts(out / artifact::kPrompts)) CHECK(p.caption.phase == Phase::phase1);
    CHECK(validate_metrics_json(read_json(out / artifact::kMetrics)).empty());

    cfg.transform.disable_fusion = false;
    cfg.transform.disable_transform = true;
    REQUIRE(run_pipeline(cfg, fx.registry).ok());
    const auto selected = read_jsonl(out / artifact::kSelected);
    std::set<std::string> texts;
    for (const auto& row : selected) texts.insert(row.at("text").get<std::string>());
    for (const auto& p : read_prompts(out / artifact::kPrompts)) {
        CHECK(texts.count(p.caption.text) == 1);
        CHECK_FALSE(p.caption.tau_used.has_value());
    }
}

TEST_CASE("stage ranges resume from persisted artifacts") {
    Fixture fx;
    testing::TempDir full, split;
    const auto cfg_full = testing::small_run_config(fx.data.path(), full.path(), 20);
    const auto cfg_split = testing::small_run_config(fx.data.path(), split.path(), 20);
    const auto whole = run_pipeline(cfg_full, fx.registry);
    REQUIRE(whole.ok());

    const auto first = run_pipeline(cfg_split, fx.registry, {std::nullopt, Stage::train});
    REQUIRE(first.ok());
    CHECK(stage(first, Stage::train).status == StageStatus::ok);
    CHECK(stage(first, Stage::transform).status == StageStatus::skipped);
    CHECK_FALSE(std::filesystem::exists(split / artifact::kPrompts));
    const auto second = run_pipeline(cfg_split, fx.registry, {Stage::transform, std::nullopt});
    REQUIRE(second.ok());
    CHECK(stage(second, Stage::ingest).status == StageStatus::skipped);
    CHECK(second.digest == whole.digest);

    std::filesystem::remove(split / artifact::kMetrics);
    std::filesystem::remove_all(split / artifact::kGeneratedDir);
    const auto third = run_pipeline(cfg_split, fx.registry, {Stage::generate, std::nullopt});
    REQUIRE(third.ok());
    CHECK(third.digest == whole.digest);
}

TEST_CASE("missing inputs fail the stage and skip the rest") {
    Fixture fx;
    testing::TempDir out;
    const auto cfg = testing::small_run_config(fx.data.path(), out.path(), 20);
    const auto r = run_pipeline(cfg, fx.registry, {Stage::select, std::nullopt});
    CHECK_FALSE(r.ok());
    CHECK(stage(r, Stage::select).status == StageStatus::failed);
    CHECK(stage(r, Stage::select).error.find("missing input artifact") != std::string::npos);
    CHECK(stage(r, Stage::train).status == StageStatus::skipped);
    CHECK(read_json(out / artifact::kRunReport).at("ok") == false);
    CHECK_THROWS_AS(run_pipeline(cfg, fx.registry, {Stage::evaluate, Stage::ingest}), Error);
}

TEST_CASE("a bad dataset fails ingest") {
    BackendRegistry reg = default_registry();
    testing::TempDir out;
    auto cfg = testing::small_run_config(out / "nowhere", out / "run", 20);
    const auto r = run_pipeline(cfg, reg);
    CHECK_FALSE(r.ok());
    CHECK(stage(r, Stage::ingest).status == StageStatus::failed);
    CHECK(stage(r, Stage::ingest).error.find("does not exist") != std::string::npos);
}

TEST_CASE("tampered adapter is refused at generate") {
    Fixture fx;
    testing::TempDir out;
    const auto cfg = testing::small_run_config(fx.data.path(), out.path(), 20);
    REQUIRE(run_pipeline(cfg, fx.registry, {std::nullopt, Stage::transform}).ok());
    const auto rel = read_json(out / artifact::kTrainResult).at("checkpoint").get<std::string>();
    auto bytes = read_file_bytes(out / rel);
    bytes.back() ^= 0x1;
    write_file_atomic(out / rel, bytes);
    const auto r = run_pipeline(cfg, fx.registry, {Stage::generate, std::nullopt});
    CHECK(stage(r, Stage::generate).status == StageStatus::failed);
}
