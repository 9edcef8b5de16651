#include <doctest.h>

#include "adaptagen/config.hpp"
#include "adaptagen/registry.hpp"
#include "support.hpp"

using namespace adaptagen;

namespace {

std::string error_of(const std::string& text, const BackendRegistry* reg = nullptr) {
    try {
        validate_config(text, reg);
    } catch (const Error& e) {
        return e.what();
    }
    return "";
}

bool mentions(const std::string& haystack, const std::string& needle) {
    return haystack.find(needle) != std::string::npos;
}

}  // namespace

TEST_CASE("minimal config takes defaults") {
    const auto cfg = validate_config("dataset:\n  root: /data/x\n");
    CHECK(cfg.dataset.root == "/data/x");
    CHECK(cfg.dataset.k == 16);
    CHECK(cfg.seed == 0);
    CHECK(cfg.transform.temperature.tau_base == 0.8);
    CHECK(cfg.transform.temperature.delta_tau == 0.2);
    CHECK(cfg.generate.steps == 30);
    CHECK(cfg.generate.omega == 7.5);
    CHECK(cfg.generate.s == 1.0);
    CHECK(cfg.generate.width == 512);
    CHECK(cfg.lora.lora.rank == 4);
    CHECK(cfg.caption.templates.size() == 4);
    CHECK(cfg.caption.backend.name == "mock");
    CHECK(cfg.evaluate.clip_convention == ClipConvention::raw);
    CHECK_FALSE(cfg.transform.disable_fusion);
    CHECK(&cfg.eval_embedder() == &cfg.select.backend);
}

TEST_CASE("explicit values are read") {
    const auto cfg = validate_config(R"(
seed: 9
dataset: {root: d, k: 4, seed: 3}
lora: {rank: 8, alpha: 16, scale_mode: conventional, learning_rate: 0.01, max_steps: 20}
transform: {tau_base: 0.9, delta_tau: 0.1, disable_fusion: true}
generate: {n: 12, omega: 3.5, s: 0.5, size: [64, 128], per_category_count: 7, parallelism: 2}
evaluate: {splits: 4, clip_convention: scaled, embedder_backend: mock, embedder_options: {dim: 8}}
output: {out_dir: runs/a}
)");
    CHECK(cfg.seed == 9);
    CHECK(cfg.dataset_seed() == 3);
    CHECK(cfg.lora.lora.rank == 8);
    CHECK(cfg.lora.lora.scale_mode == ScaleMode::conventional);
    CHECK_FALSE(cfg.lora.seed_given);
    CHECK(cfg.resolved_lora().seed == derive_seed(9, "lora"));
    CHECK(cfg.transform.disable_fusion);
    CHECK(cfg.generate.width == 64);
    CHECK(cfg.generate.height == 128);
    CHECK(cfg.generate.per_category_count == 7);
    CHECK(cfg.evaluate.clip_convention == ClipConvention::scaled);
    CHECK(cfg.eval_embedder().options.at("dim") == 8);
    CHECK(cfg.out_dir == "runs/a");
    CHECK(validate_config("dataset: {root: d}\ngenerate: {size: 128}\n").generate.height == 128);
    CHECK(validate_config("dataset: {root: d}\nlora: {seed: 5}\n").resolved_lora().seed == 5);
}

TEST_CASE("errors name the offending key") {
    CHECK(mentions(error_of("dataset: {root: d}\nlora: {rnk: 4}\n"), "lora.rnk"));
    CHECK(mentions(error_of("dataset: {root: d}\nbogus: 1\n"), "bogus"));
    CHECK(mentions(error_of("dataset: {k: 4}\n"), "dataset.root"));
    CHECK(mentions(error_of("dataset: {root: d}\ntransform: {delta_tau: 0.9}\n"), "transform.delta_tau"));
    CHECK(mentions(error_of("dataset: {root: d}\nlora: {rank: 0}\n"), "lora"));
    CHECK(mentions(error_of("dataset: {root: d}\ngenerate: {n: 0}\n"), "generate"));
    CHECK(mentions(error_of("dataset: {root: d, k: -2}\n"), "dataset.k"));
    CHECK(mentions(error_of("dataset: {root: d}\nevaluate: {clip_convention: cosine}\n"), "clip_convention"));
    CHECK_FALSE(error_of("dataset: [\n").empty());
}

TEST_CASE("backends are checked against the registry") {
    const auto reg = default_registry();
    CHECK(error_of("dataset: {root: d}\n", &reg).empty());
    const auto e = error_of("dataset: {root: d}\ngenerate: {backend: sdxl}\n", &reg);
    CHECK(mentions(e, "sdxl"));
    CHECK(mentions(e, "generate"));
    CHECK(error_of("dataset: {root: d}\ngenerate: {backend: sdxl}\n").empty());
}

TEST_CASE("snapshot round trip") {
    const auto cfg = validate_config(
        "seed: 4\ndataset: {root: /x}\ntransform: {tau_base: 0.7}\ncaption: {templates: [{template_id: a, "
        "perspective: object_recognition, instruction_text: describe}]}\n");
    const json snap = run_config_to_json(cfg);
    const auto again = validate_config(snap.dump());
    CHECK(run_config_to_json(again) == snap);
    CHECK(again.caption.templates.size() == 1);
    CHECK(again.transform.temperature.tau_base == 0.7);
}

TEST_CASE("load_config reads files") {
    testing::TempDir dir;
    write_text_atomic(dir / "c.yaml", "dataset:\n  root: here\n");
    CHECK(load_config(dir / "c.yaml").dataset.root == "here");
    CHECK_THROWS_AS(load_config(dir / "missing.yaml"), Error);
}
