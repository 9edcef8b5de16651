#include <doctest.h>

#include <algorithm>
#include <atomic>
#include <set>

#include "adaptagen/generation.hpp"
#include "adaptagen/mock_backends.hpp"
#include "support.hpp"

using namespace adaptagen;

namespace {

GenerationRequest request(const std::string& id, const std::string& prompt = "a photo of pizza") {
    GenerationRequest r;
    r.prompt_id = id;
    r.category = "pizza";
    r.prompt = prompt;
    r.seed = request_seed(3, id);
    r.width = 64;
    r.height = 64;
    return r;
}

std::vector<GenerationRequest> requests(std::size_t n) {
    std::vector<GenerationRequest> out;
    for (std::size_t i = 0; i < n; ++i) {
        char id[32];
        std::snprintf(id, sizeof id, "pizza-%04zu", i);
        out.push_back(request(id, "pizza prompt " + std::to_string(i % 9)));
    }
    return out;
}

/// Fails every call for ids in `bad`.
class FlakyGenerator : public GeneratorBackend {
public:
    explicit FlakyGenerator(std::set<std::string> bad) : bad_(std::move(bad)) {}
    std::string name() const override { return "flaky"; }
    std::size_t max_concurrency() const override { return 0; }
    Image generate(const GenerationRequest& r, const AdapterRef* a) override {
        ++calls;
        if (bad_.count(r.prompt_id)) throw Error("out of memory");
        return inner_.generate(r, a);
    }
    std::atomic<int> calls{0};

private:
    std::set<std::string> bad_;
    mock::MockGenerator inner_;
};

/// Fails the first call for every request, then succeeds.
class OnceFailing : public GeneratorBackend {
public:
    std::string name() const override { return "once"; }
    Image generate(const GenerationRequest& r, const AdapterRef* a) override {
        if (seen_.insert(r.prompt_id).second) throw Error("transient");
        return inner_.generate(r, a);
    }

private:
    std::set<std::string> seen_;
    mock::MockGenerator inner_;
};

class CountingSerialGenerator : public GeneratorBackend {
public:
    std::string name() const override { return "serial"; }
    Image generate(const GenerationRequest& r, const AdapterRef* a) override {
        const int now = ++active;
        int prev = peak.load();
        while (now > prev && !peak.compare_exchange_weak(prev, now)) {
        }
        auto img = inner_.generate(r, a);
        --active;
        return img;
    }
    std::atomic<int> active{0}, peak{0};

private:
    mock::MockGenerator inner_;
};

}  // namespace

TEST_CASE("generation request validation") {
    CHECK_NOTHROW(request("a").validate());
    auto r = request("a");
    r.steps = 0;
    CHECK_THROWS_AS(r.validate(), Error);
    r = request("a");
    r.guidance = -1;
    CHECK_THROWS_AS(r.validate(), Error);
    r = request("a");
    r.width = 0;
    CHECK_THROWS_AS(r.validate(), Error);
    r = request("a");
    r.prompt = "";
    CHECK_THROWS_AS(r.validate(), Error);
    r = request("a");
    r.lora_scale = std::nan("");
    CHECK_THROWS_AS(r.validate(), Error);
}

TEST_CASE("request seeds and output paths") {
    CHECK(request_seed(42, "cat-0000") == derive_seed(42, "generate/cat-0000"));
    CHECK(request_seed(42, "cat-0000") != request_seed(42, "cat-0001"));
    auto r = request("pizza-0007");
    r.seed = 99;
    CHECK(output_relpath(r) == std::filesystem::path("pizza/pizza-0007-99.png"));
}

TEST_CASE("mock generator is deterministic and input-sensitive") {
    mock::MockGenerator gen;
    const auto a = pixel_hash(gen.generate(request("x"), nullptr));
    CHECK(a == pixel_hash(gen.generate(request("x"), nullptr)));
    CHECK(a != pixel_hash(gen.generate(request("x", "another prompt"), nullptr)));
    auto other_seed = request("x");
    other_seed.seed += 1;
    CHECK(a != pixel_hash(gen.generate(other_seed, nullptr)));
    const auto img = gen.generate(request("x"), nullptr);
    CHECK(img.width == 64);
    CHECK(img.height == 64);
}

TEST_CASE("generate writes the PNG and records its hash") {
    testing::TempDir dir;
    mock::MockGenerator gen;
    const auto g = generate(request("pizza-0001"), gen, nullptr, dir.path());
    REQUIRE(g.status == GenerationStatus::ok);
    CHECK(g.path == output_relpath(g.request));
    REQUIRE(std::filesystem::exists(dir.path() / g.path));
    CHECK(pixel_hash(read_png(dir.path() / g.path)) == g.content_hash);
    auto bad = request("pizza-0002");
    bad.steps = -1;
    CHECK_THROWS_AS(generate(bad, gen, nullptr, dir.path()), Error);
}

TEST_CASE("a failing call is retried once") {
    testing::TempDir dir;
    OnceFailing gen;
    const auto g = generate(request("r"), gen, nullptr, dir.path());
    CHECK(g.status == GenerationStatus::ok);

    FlakyGenerator flaky({"r"});
    const auto f = generate(request("r"), flaky, nullptr, dir.path());
    CHECK(f.status == GenerationStatus::failed);
    CHECK(flaky.calls == 2);
    CHECK(f.error.find("out of memory") != std::string::npos);
    CHECK(f.content_hash.empty());
}

TEST_CASE("batch output does not depend on parallelism") {
    testing::TempDir d1, d4;
    mock::MockGenerator gen;
    const auto reqs = requests(64);
    const auto a = batch_generate(reqs, gen, nullptr, d1.path(), 1);
    const auto b = batch_generate(reqs, gen, nullptr, d4.path(), 4);
    REQUIRE(a.images.size() == 64);
    REQUIRE(b.images.size() == 64);
    CHECK(a.failed == 0);
    std::multiset<std::string> ha, hb;
    for (std::size_t i = 0; i < 64; ++i) {
        CHECK(a.images[i].request.prompt_id == reqs[i].prompt_id);
        CHECK(b.images[i].request.prompt_id == reqs[i].prompt_id);
        CHECK(a.images[i].path == b.images[i].path);
        ha.insert(a.images[i].content_hash);
        hb.insert(b.images[i].content_hash);
    }
    CHECK(ha == hb);
    testing::TempDir m;
    write_generation_manifest(m / "a.jsonl", a.images);
    write_generation_manifest(m / "b.jsonl", b.images);
    CHECK(read_text_file(m / "a.jsonl") == read_text_file(m / "b.jsonl"));
}

TEST_CASE("serial backends are not called concurrently") {
    testing::TempDir dir;
    CountingSerialGenerator gen;
    batch_generate(requests(16), gen, nullptr, dir.path(), 8);
    CHECK(gen.peak == 1);
}

TEST_CASE("duplicate prompt ids are rejected before generating") {
    testing::TempDir dir;
    FlakyGenerator gen({});
    auto reqs = requests(4);
    reqs[3].prompt_id = reqs[1].prompt_id;
    CHECK_THROWS_AS(batch_generate(reqs, gen, nullptr, dir.path(), 2), Error);
    CHECK(gen.calls == 0);
}

TEST_CASE("failure threshold") {
    testing::TempDir dir;
    const auto reqs = requests(20);
    FlakyGenerator two({reqs[0].prompt_id, reqs[5].prompt_id});
    const auto a = batch_generate(reqs, two, nullptr, dir.path(), 3);
    CHECK(a.failed == 2);
    CHECK_FALSE(a.failure_threshold_exceeded());
    CHECK(a.images[5].status == GenerationStatus::failed);
    FlakyGenerator three({reqs[0].prompt_id, reqs[5].prompt_id, reqs[9].prompt_id});
    const auto b = batch_generate(reqs, three, nullptr, dir.path(), 3);
    CHECK(b.failed == 3);
    CHECK(b.failure_threshold_exceeded());
}

TEST_CASE("manifest round trip and verification") {
    testing::TempDir dir;
    mock::MockGenerator gen;
    const auto batch = batch_generate(requests(5), gen, nullptr, dir.path(), 2);
    write_generation_manifest(dir / "generated.jsonl", batch.images);
    const auto back = read_generation_manifest(dir / "generated.jsonl");
    REQUIRE(back.size() == 5);
    CHECK(back[2].request.category == "pizza");
    CHECK(back[2].request.seed == batch.images[2].request.seed);
    CHECK(back[2].path == batch.images[2].path);
    const auto row = read_jsonl(dir / "generated.jsonl").at(0);
    for (const char* key : {"prompt_id", "seed", "path", "content_hash", "status", "n", "omega", "s"}) {
        CHECK_MESSAGE(row.contains(key), key);
    }
    CHECK(verify_generation_manifest(back, dir.path()).empty());
    write_png(dir.path() / back[1].path, gen.generate(request("other"), nullptr));
    CHECK(verify_generation_manifest(back, dir.path()) == std::vector<std::string>{back[1].request.prompt_id});
}

TEST_CASE("adapter reference hashes the file and affects output") {
    testing::TempDir dir;
    write_text_atomic(dir / "a.bin", "adapter-a");
    write_text_atomic(dir / "b.bin", "adapter-b");
    const auto a = AdapterRef::from_file(dir / "a.bin");
    const auto b = AdapterRef::from_file(dir / "b.bin");
    CHECK(a.sha256 == sha256_hex(std::string("adapter-a")));
    CHECK_THROWS_AS(AdapterRef::from_file(dir / "missing.bin"), Error);
    mock::MockGenerator gen;
    const auto r = request("x");
    CHECK(pixel_hash(gen.generate(r, &a)) != pixel_hash(gen.generate(r, &b)));
    auto zero = r;
    zero.lora_scale = 0.0;
    CHECK(pixel_hash(gen.generate(zero, &a)) == pixel_hash(gen.generate(zero, &b)));
}
