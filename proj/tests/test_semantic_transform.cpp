#include <doctest.h>

#include <set>

#include "adaptagen/mock_backends.hpp"
#include "adaptagen/semantic_transform.hpp"
#include "corpus_fixture.hpp"
#include "support.hpp"

using namespace adaptagen;

namespace {

class DroppingParaphraser : public ParaphraserBackend {
public:
    std::string name() const override { return "dropping"; }
    std::string transform(const std::string&, double, std::uint64_t) override {
        ++calls;
        return "something unrelated";
    }
    int calls = 0;
};

class ThrowingParaphraser : public ParaphraserBackend {
public:
    std::string name() const override { return "throwing"; }
    std::string transform(const std::string&, double, std::uint64_t) override { throw Error("offline"); }
};

class RecordingParaphraser : public ParaphraserBackend {
public:
    std::string name() const override { return "recording"; }
    std::string transform(const std::string& text, double t, std::uint64_t seed) override {
        temps.push_back(t);
        seeds.push_back(seed);
        return text;
    }
    std::vector<double> temps;
    std::vector<std::uint64_t> seeds;
};

std::vector<std::string> texts(const std::vector<Segment>& segs) {
    std::vector<std::string> out;
    for (const auto& s : segs) out.push_back(s.text);
    return out;
}

}  // namespace

TEST_CASE("temperature spec invariants") {
    CHECK_NOTHROW(TemperatureSpec{}.validate());
    CHECK_THROWS_AS((TemperatureSpec{0.8, 0.9}.validate()), Error);
    CHECK_THROWS_AS((TemperatureSpec{0.8, 0.8}.validate()), Error);
    CHECK_THROWS_AS((TemperatureSpec{0.8, -0.1}.validate()), Error);
}

TEST_CASE("temperatures stay within bounds; zero spread is exact") {
    const TemperatureSpec spec;
    double lo = 10, hi = -10;
    for (std::uint64_t s = 0; s < 2000; ++s) {
        const double t = sample_temperature(spec, s);
        lo = std::min(lo, t);
        hi = std::max(hi, t);
    }
    CHECK(lo >= 0.6);
    CHECK(hi <= 1.0);
    CHECK(lo < 0.62);
    CHECK(hi > 0.98);
    CHECK(sample_temperature({0.7, 0.0}, 12345) == 0.7);
    CHECK(sample_temperature(spec, 5) == sample_temperature(spec, 5));
}

TEST_CASE("core tokens") {
    CHECK(core_tokens_for("Apple___scab") == std::vector<std::string>{"apple", "scab"});
    CHECK(core_tokens_for("golden-retriever") == std::vector<std::string>{"golden", "retriever"});
    CHECK_THROWS_AS(core_tokens_for("__"), Error);
    const std::vector<std::string> core = {"apple", "scab"};
    CHECK(contains_core_tokens("A photo of Apple scab.", core));
    CHECK_FALSE(contains_core_tokens("a photo of pineapple scabs", core));
    CHECK(ensure_core_tokens("a leaf", core) == "apple scab, a leaf");
    CHECK(ensure_core_tokens("apple scab leaf", core) == "apple scab leaf");
}

TEST_CASE("phase 1 keeps arity, core tokens and determinism") {
    const auto selected = testing::mock_selected("apple_scab", 16);
    const auto core = core_tokens_for("apple_scab");
    mock::MockParaphraser para;
    const auto out = phase1_transform(selected, core, para, {}, 21);
    REQUIRE(out.size() == 16);
    for (std::size_t i = 0; i < out.size(); ++i) {
        CHECK(out[i].phase == Phase::phase1);
        CHECK(out[i].source_image_id == selected[i].image_id);
        CHECK(contains_core_tokens(out[i].text, core));
        REQUIRE(out[i].tau_used.has_value());
        CHECK(*out[i].tau_used >= 0.6);
        CHECK(*out[i].tau_used <= 1.0);
    }
    const auto again = phase1_transform(selected, core, para, {}, 21);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(again[i].text == out[i].text);
    CHECK_THROWS_AS(phase1_transform({}, core, para, {}, 0), Error);
}

TEST_CASE("mock paraphraser keeps the category words") {
    mock::MockParaphraser para;
    const std::vector<std::string> core = {"apple", "scab"};
    std::set<std::string> variants;
    for (std::uint64_t s = 0; s < 50; ++s) {
        const auto out = para.transform("a photo of apple scab leaf", 1.0, s);
        CHECK(normalize_text(out).find("apple scab") != std::string::npos);
        variants.insert(out);
    }
    CHECK(variants.size() > 1);
}

TEST_CASE("phase 1 retries once and then falls back to the source caption") {
    const auto selected = testing::mock_selected("pizza", 3);
    const auto core = core_tokens_for("pizza");
    DroppingParaphraser drop;
    const auto out = phase1_transform(selected, core, drop, {}, 1);
    CHECK(drop.calls == 6);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out[i].text == selected[i].text);

    ThrowingParaphraser boom;
    const auto out2 = phase1_transform(selected, core, boom, {}, 1);
    for (std::size_t i = 0; i < 3; ++i) CHECK(out2[i].text == selected[i].text);
}

TEST_CASE("per-item temperature follows the derived seed") {
    const auto selected = testing::mock_selected("pizza", 4);
    RecordingParaphraser rec;
    phase1_transform(selected, {"pizza"}, rec, {}, 99);
    REQUIRE(rec.temps.size() == 4);
    std::set<double> distinct(rec.temps.begin(), rec.temps.end());
    CHECK(distinct.size() == 4);
    std::set<std::uint64_t> seeds(rec.seeds.begin(), rec.seeds.end());
    CHECK(seeds.size() == 4);
}

TEST_CASE("segment splitting rule") {
    const std::vector<std::string> core = {"pizza"};
    const auto a = split_segments("a photo of pizza with basil", "i1", core);
    CHECK(texts(a) == std::vector<std::string>{"a photo of pizza", "with basil"});
    CHECK(a[1].lead == "with");
    CHECK(a[1].attribute);
    CHECK_FALSE(a[0].attribute);
    const auto b = split_segments("a rustic pizza on a wooden table", "i2", core);
    CHECK(texts(b) == std::vector<std::string>{"a rustic pizza", "on a wooden table"});
    const auto c = split_segments("pizza, fresh basil; near a window and cheese.", "i3", core);
    CHECK(texts(c) == std::vector<std::string>{"pizza", "fresh basil", "near a window", "and cheese"});
    CHECK(c[1].joiner == ", ");
    CHECK(c[2].joiner == ", ");
    CHECK(c[3].joiner == " ");
    for (const auto& s : c) CHECK(s.source_image_id == "i3");
}

TEST_CASE("corpus pools attribute segments with provenance") {
    const std::vector<SelectedCaption> sel = {{"pizza/1", "a photo of pizza with basil", "t", 0},
                                              {"pizza/2", "a rustic pizza on a wooden table", "t", 0}};
    const auto corpus = build_corpus(sel, "pizza", {"pizza"});
    CHECK(corpus.fusion_capable);
    CHECK(corpus.source_count() == 2);
    std::set<std::string> seg;
    for (const auto& s : corpus.segments) {
        seg.insert(s.text);
        CHECK((s.source_image_id == "pizza/1" || s.source_image_id == "pizza/2"));
    }
    CHECK(seg.count("with basil") == 1);
    CHECK(seg.count("on a wooden table") == 1);
}

TEST_CASE("degenerate corpora are fusion-incapable") {
    CHECK_FALSE(build_corpus({{"pizza/1", "pizza", "t", 0}}, "pizza", {"pizza"}).fusion_capable);
    CHECK_FALSE(build_corpus({{"pizza/1", "pizza with basil", "t", 0}}, "pizza", {"pizza"}).fusion_capable);
    CHECK_FALSE(build_corpus({{"pizza/1", "a pizza", "t", 0}, {"pizza/2", "the pizza, of pizza", "t", 0}}, "pizza",
                             {"pizza"})
                    .fusion_capable);
}

TEST_CASE("phase 2 on a 16-caption corpus") {
    const auto sel = testing::mock_selected("golden_retriever", 16);
    const auto core = core_tokens_for("golden_retriever");
    const auto corpus = build_corpus(sel, "golden_retriever", core);
    REQUIRE(corpus.fusion_capable);
    mock::MockParaphraser para;

    const auto out24 = phase2_fuse(corpus, 24, 5, para, {});
    CHECK(out24.size() == 24);

    const auto out = phase2_fuse(corpus, 100, 5, para, {});
    REQUIRE(out.size() == 100);
    std::set<std::string> seen;
    for (const auto& p : out) {
        CHECK(p.phase == Phase::phase2);
        CHECK(contains_core_tokens(p.text, core));
        seen.insert(normalize_text(p.text));
        REQUIRE(p.source_image_ids.size() >= 2);
        CHECK(p.source_image_ids.front() == p.source_image_id);
        CHECK(std::any_of(p.source_image_ids.begin() + 1, p.source_image_ids.end(),
                          [&](const std::string& id) { return id != p.source_image_id; }));
    }
    CHECK(seen.size() == 100);

    const auto again = phase2_fuse(corpus, 100, 5, para, {});
    for (std::size_t i = 0; i < 100; ++i) CHECK(again[i].text == out[i].text);
}

TEST_CASE("fusion-incapable corpus degrades to cycled paraphrases") {
    const std::vector<SelectedCaption> sel = {{"pizza/1", "pizza", "t", 0}};
    const auto corpus = build_corpus(sel, "pizza", {"pizza"});
    RecordingParaphraser rec;
    const auto out = phase2_fuse(corpus, 5, 3, rec, {});
    REQUIRE(out.size() == 5);
    for (const auto& p : out) {
        CHECK(p.phase == Phase::phase1);
        CHECK(contains_core_tokens(p.text, {"pizza"}));
    }
    CHECK(std::set<std::uint64_t>(rec.seeds.begin(), rec.seeds.end()).size() == 5);
}

TEST_CASE("cycle_phase1 cycles bases with distinct seeds") {
    const auto sel = testing::mock_selected("pizza", 3);
    mock::MockParaphraser para;
    const auto out = cycle_phase1(sel, {"pizza"}, 7, para, {}, 4);
    REQUIRE(out.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) CHECK(out[i].source_image_id == sel[i % 3].image_id);
    std::set<std::uint64_t> seeds;
    for (const auto& p : out) seeds.insert(p.seed);
    CHECK(seeds.size() == 7);
}

TEST_CASE("prompt plan arithmetic") {
    CHECK(plan_prompts(16, 16) == PromptPlan{16, 0});
    CHECK(plan_prompts(16, 40) == PromptPlan{16, 24});
    CHECK(plan_prompts(16, 1000) == PromptPlan{16, 984});
    CHECK(plan_prompts(16, 5) == PromptPlan{5, 0});
    CHECK_THROWS_AS(plan_prompts(0, 5), Error);
}

TEST_CASE("prompts.jsonl schema and round trip") {
    testing::TempDir dir;
    TransformedCaption a;
    a.source_image_id = "c/1";
    a.source_image_ids = {"c/1"};
    a.text = "c photo";
    a.tau_used = 0.75;
    a.seed = 11;
    TransformedCaption b = a;
    b.phase = Phase::phase2;
    b.tau_used.reset();
    b.source_image_ids = {"c/1", "c/2"};
    write_prompts(dir / "p.jsonl", {{"c-0000", "c", a}, {"c-0001", "c", b}});
    const auto rows = read_jsonl(dir / "p.jsonl");
    CHECK(rows[0].at("tau") == 0.75);
    CHECK(rows[1].at("tau").is_null());
    CHECK(rows[1].at("phase") == "phase2");
    for (const char* key : {"prompt_id", "category", "text", "phase", "source_image_ids", "tau", "seed"}) {
        CHECK(rows[0].contains(key));
    }
    const auto back = read_prompts(dir / "p.jsonl");
    REQUIRE(back.size() == 2);
    CHECK(back[1].caption.source_image_ids == b.source_image_ids);
    CHECK_FALSE(back[1].caption.tau_used.has_value());
    CHECK(back[0].caption.seed == 11);
}
