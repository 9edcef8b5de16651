#include <doctest.h>

#include <set>

#include "adaptagen/common.hpp"
#include "adaptagen/image_io.hpp"
#include "adaptagen/parallel.hpp"
#include "support.hpp"

using namespace adaptagen;

// Frozen values computed with an independent Python implementation of
// FNV-1a + splitmix64.
TEST_CASE("stable_hash matches frozen reference values") {
    CHECK(stable_hash("") == 17665956581633026203ULL);
    CHECK(stable_hash("apple") == 13442815656432221361ULL);
    CHECK(stable_hash32("apple") == 1950205228U);
    CHECK(derive_seed(0, "caption") == 6733836159692689200ULL);
    CHECK(derive_seed(42, "generate/cat-0000") == 15777548049358225845ULL);
}

TEST_CASE("derive_seed separates sites and parents") {
    CHECK(derive_seed(1, "a") != derive_seed(1, "b"));
    CHECK(derive_seed(1, "a") != derive_seed(2, "a"));
    CHECK(derive_seed(1, "a") == derive_seed(1, "a"));
}

TEST_CASE("sha256 of known vectors") {
    CHECK(sha256_hex(std::string_view("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    Sha256 h;
    h.update(std::string_view("a"));
    h.update(std::string_view("bc"));
    CHECK(h.finish_hex() == sha256_hex(std::string_view("abc")));
}

TEST_CASE("rng draws are reproducible and in range") {
    Rng a(7), b(7);
    for (int i = 0; i < 1000; ++i) {
        const double u = a.uniform(-1.0, 1.0);
        CHECK(u == b.uniform(-1.0, 1.0));
        CHECK(u >= -1.0);
        CHECK(u <= 1.0);
        const auto k = a.below(5);
        CHECK(k == b.below(5));
        CHECK(k < 5);
    }
    CHECK(a.state() == b.state());
    CHECK_THROWS_AS(a.below(0), Error);
}

TEST_CASE("gaussian draws have unit moments") {
    Rng rng(3);
    double sum = 0, sq = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        const double g = rng.gaussian();
        sum += g;
        sq += g * g;
    }
    CHECK(std::abs(sum / n) < 0.03);
    CHECK(std::abs(sq / n - 1.0) < 0.05);
}

TEST_CASE("text helpers") {
    CHECK(trim("  a b \n") == "a b");
    CHECK(word_tokens("Apple___scab, LEAF!") == std::vector<std::string>{"apple", "scab", "leaf"});
    CHECK(normalize_text("  A photo,  of   PIZZA. ") == "a photo of pizza");
    CHECK(join({"a", "b", "c"}, "-") == "a-b-c");
}

TEST_CASE("jsonl round trip with sorted keys") {
    testing::TempDir dir;
    const std::vector<json> rows = {{{"b", 1}, {"a", "x"}}, {{"z", nullptr}}};
    write_jsonl(dir / "rows.jsonl", rows);
    CHECK(read_text_file(dir / "rows.jsonl") == "{\"a\":\"x\",\"b\":1}\n{\"z\":null}\n");
    CHECK(read_jsonl(dir / "rows.jsonl") == rows);
}

TEST_CASE("png round trip preserves pixels") {
    testing::TempDir dir;
    const Image img = testing::fixture_image(11, 20);
    write_png(dir / "x.png", img);
    const Image back = read_png(dir / "x.png");
    CHECK(back.width == 20);
    CHECK(back.height == 20);
    CHECK(back.rgb == img.rgb);
    const auto bytes = read_file_bytes(dir / "x.png");
    CHECK(is_png(bytes));
    CHECK(pixel_bytes(bytes) == img.rgb);
    const std::vector<std::uint8_t> raw = {1, 2, 3};
    CHECK(pixel_bytes(raw) == raw);
}

TEST_CASE("parallel_for covers every index once and rethrows") {
    std::vector<int> hits(1000, 0);
    parallel_for(hits.size(), 8, [&](std::size_t i) { hits[i] += 1; });
    CHECK(std::all_of(hits.begin(), hits.end(), [](int h) { return h == 1; }));
    CHECK_THROWS_AS(parallel_for(10, 4,
                                 [](std::size_t i) {
                                     if (i == 7) throw Error("boom");
                                 }),
                    Error);
}
