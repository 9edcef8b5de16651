#include <doctest.h>

#include <cmath>

#include "adaptagen/dataset.hpp"
#include "adaptagen/mock_backends.hpp"
#include "adaptagen/prompt_matrix.hpp"
#include "support.hpp"
#include "table_embedder.hpp"

using namespace adaptagen;

namespace {

double oracle_cosine(const std::vector<double>& u, const std::vector<double>& v) {
    double dot = 0, nu = 0, nv = 0;
    for (std::size_t i = 0; i < u.size(); ++i) {
        dot += u[i] * v[i];
        nu += u[i] * u[i];
        nv += v[i] * v[i];
    }
    return dot / (std::sqrt(nu) * std::sqrt(nv));
}

struct Fixture {
    testing::TempDir dir;
    DatasetManifest manifest;
    std::vector<ImageRecord> records;
    std::vector<std::string> hashes;

    explicit Fixture(std::size_t n) {
        testing::make_fixture(dir.path(), {"c"}, n);
        manifest = scan_dataset(dir.path());
        records = manifest.all_records();
        for (const auto& r : records) {
            hashes.push_back(sha256_hex(read_file_bytes(manifest.absolute_path(r))));
        }
    }
};

std::vector<CandidateSet> make_sets(const std::vector<ImageRecord>& records, std::size_t m) {
    std::vector<CandidateSet> sets;
    for (const auto& r : records) {
        CandidateSet s{r.image_id, {}};
        for (std::size_t j = 0; j < m; ++j) {
            s.candidates.push_back({r.image_id, "t" + std::to_string(j), r.image_id + " caption " + std::to_string(j)});
        }
        sets.push_back(std::move(s));
    }
    return sets;
}

std::vector<double> gaussian_vec(Rng& rng, std::size_t d) {
    std::vector<double> v(d);
    for (auto& x : v) x = rng.gaussian();
    return v;
}

SimilarityMatrix matrix_of(const std::vector<std::vector<double>>& rows) {
    SimilarityMatrix m;
    m.entries.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rows[0].size()));
    for (std::size_t i = 0; i < rows.size(); ++i) {
        m.image_ids.push_back("img" + std::to_string(i));
        m.template_ids.emplace_back();
        for (std::size_t j = 0; j < rows[i].size(); ++j) {
            m.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
            m.template_ids.back().push_back("t" + std::to_string(j));
        }
    }
    return m;
}

std::vector<CandidateSet> sets_for(const SimilarityMatrix& m) {
    std::vector<CandidateSet> sets;
    for (std::size_t i = 0; i < m.rows(); ++i) {
        CandidateSet s{m.image_ids[i], {}};
        for (std::size_t j = 0; j < m.cols(); ++j) {
            s.candidates.push_back({m.image_ids[i], m.template_ids[i][j], "text " + std::to_string(j)});
        }
        sets.push_back(s);
    }
    return sets;
}

}  // namespace

TEST_CASE("cosine reference cases") {
    const EmbeddingVector v({0.3, -1.2, 2.0});
    CHECK(cosine(v, v) == doctest::Approx(1.0).epsilon(1e-15));
    CHECK(cosine(EmbeddingVector({1, 0}), EmbeddingVector({0, 1})) == 0.0);
    CHECK(cosine(EmbeddingVector({1, 2, 2}), EmbeddingVector({2, 1, 2})) == doctest::Approx(8.0 / 9.0).epsilon(1e-15));
    CHECK_THROWS_AS(cosine(EmbeddingVector({1, 0}), EmbeddingVector({1, 0, 0})), Error);
}

TEST_CASE("embedding construction rejects degenerate vectors") {
    CHECK_THROWS_AS(EmbeddingVector({}), Error);
    CHECK_THROWS_AS(EmbeddingVector({0.0, 0.0}), Error);
    CHECK_THROWS_AS(EmbeddingVector({1.0, NAN}), Error);
    const EmbeddingVector e({3.0, 4.0});
    CHECK(e.original_norm() == doctest::Approx(5.0));
    CHECK(e.values()[0] == doctest::Approx(0.6));
}

TEST_CASE("select_optimal picks the row max with lowest-index ties") {
    const auto m = matrix_of({{0.1, 0.9, 0.3}, {0.5, 0.5, 0.2}});
    const auto sel = select_optimal(m, sets_for(m));
    CHECK(sel[0].template_id == "t1");
    CHECK(sel[0].score == 0.9);
    CHECK(sel[1].template_id == "t0");
    CHECK(sel[1].score == 0.5);
}

TEST_CASE("matrix shape and constant embeddings") {
    Fixture f(2);
    auto sets = make_sets(f.records, 3);
    testing::TableEmbedder emb(4);
    for (const auto& h : f.hashes) emb.images[h] = {1, 0, 0, 0};
    for (const auto& s : sets)
        for (const auto& c : s.candidates) emb.texts[c.text] = {1, 0, 0, 0};
    const auto m = build_similarity_matrix(f.records, sets, emb, f.manifest.root);
    CHECK(m.rows() == 2);
    CHECK(m.cols() == 3);
    CHECK((m.entries.array() == 1.0).all());
    CHECK(emb.image_calls == 2);
    CHECK(emb.text_calls == 6);
}

TEST_CASE("random 10 x 6 matrices match a brute-force oracle") {
    Fixture f(10);
    Rng rng(123);
    for (int trial = 0; trial < 50; ++trial) {
        auto sets = make_sets(f.records, 6);
        testing::TableEmbedder emb(8);
        std::vector<std::vector<double>> img(10);
        std::vector<std::vector<std::vector<double>>> txt(10, std::vector<std::vector<double>>(6));
        for (std::size_t i = 0; i < 10; ++i) {
            img[i] = gaussian_vec(rng, 8);
            emb.images[f.hashes[i]] = img[i];
            for (std::size_t j = 0; j < 6; ++j) {
                txt[i][j] = gaussian_vec(rng, 8);
                if (trial % 2 == 1 && j == 4) {
                    txt[i][j] = txt[i][1];  // constructed tie
                }
                emb.texts[sets[i].candidates[j].text] = txt[i][j];
            }
        }
        const auto m = build_similarity_matrix(f.records, sets, emb, f.manifest.root, 3);
        const auto sel = select_optimal(m, sets);
        for (std::size_t i = 0; i < 10; ++i) {
            std::size_t best = 0;
            double best_v = -2;
            for (std::size_t j = 0; j < 6; ++j) {
                const double c = oracle_cosine(img[i], txt[i][j]);
                CHECK(m.entries(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) ==
                      doctest::Approx(c).epsilon(1e-12));
                if (c > best_v + 1e-12) {
                    best_v = c;
                    best = j;
                }
            }
            CHECK(sel[i].template_id == "t" + std::to_string(best));
            CHECK(sel[i].score == m.entries.row(static_cast<Eigen::Index>(i)).maxCoeff());
        }
    }
}

TEST_CASE("positive rescaling leaves the matrix unchanged") {
    Fixture f(3);
    Rng rng(9);
    auto sets = make_sets(f.records, 4);
    testing::TableEmbedder a(8), b(8);
    for (const auto& h : f.hashes) {
        auto v = gaussian_vec(rng, 8);
        a.images[h] = v;
        for (auto& x : v) x *= 37.5;
        b.images[h] = v;
    }
    for (const auto& s : sets)
        for (const auto& c : s.candidates) {
            auto v = gaussian_vec(rng, 8);
            a.texts[c.text] = v;
            for (auto& x : v) x *= 0.01;
            b.texts[c.text] = v;
        }
    const auto ma = build_similarity_matrix(f.records, sets, a, f.manifest.root);
    const auto mb = build_similarity_matrix(f.records, sets, b, f.manifest.root);
    CHECK((ma.entries - mb.entries).cwiseAbs().maxCoeff() < 1e-12);
    const auto sa = select_optimal(ma, sets);
    const auto sb = select_optimal(mb, sets);
    for (std::size_t i = 0; i < sa.size(); ++i) {
        CHECK(sa[i].template_id == sb[i].template_id);
        CHECK(sa[i].score == doctest::Approx(sb[i].score).epsilon(1e-12));
    }
}

TEST_CASE("permuting images permutes selections") {
    Fixture f(4);
    mock::MockEmbedder emb;
    std::vector<CandidateSet> sets;
    for (const auto& r : f.records) {
        sets.push_back({r.image_id,
                        {{r.image_id, "a", "a photo of c"}, {r.image_id, "b", "scene with c"}, {r.image_id, "c", "c on grass"}}});
    }
    const auto sel = select_optimal(build_similarity_matrix(f.records, sets, emb, f.manifest.root), sets);
    std::vector<ImageRecord> rr(f.records.rbegin(), f.records.rend());
    std::vector<CandidateSet> rs(sets.rbegin(), sets.rend());
    auto rsel = select_optimal(build_similarity_matrix(rr, rs, emb, f.manifest.root), rs);
    std::reverse(rsel.begin(), rsel.end());
    CHECK(rsel == sel);
}

TEST_CASE("alignment and backend errors name the item") {
    Fixture f(2);
    auto sets = make_sets(f.records, 3);
    testing::TableEmbedder emb(4);
    std::swap(sets[0], sets[1]);
    CHECK_THROWS_AS(build_similarity_matrix(f.records, sets, emb, f.manifest.root), Error);
    std::swap(sets[0], sets[1]);
    sets[1].candidates.pop_back();
    CHECK_THROWS_AS(build_similarity_matrix(f.records, sets, emb, f.manifest.root), Error);
    sets = make_sets(f.records, 3);
    for (std::size_t i = 0; i < 2; ++i) emb.images[f.hashes[i]] = {1, 0, 0, 0};
    CHECK_THROWS_WITH_AS(build_similarity_matrix(f.records, sets, emb, f.manifest.root),
                         doctest::Contains(f.records[0].image_id.c_str()), Error);
}

TEST_CASE("similarity matrix and selections round trip through files") {
    Fixture f(3);
    mock::MockEmbedder emb;
    std::vector<CandidateSet> sets;
    for (const auto& r : f.records) sets.push_back({r.image_id, {{r.image_id, "a", "x one"}, {r.image_id, "b", "y two"}}});
    const auto m = build_similarity_matrix(f.records, sets, emb, f.manifest.root);
    const auto back = similarity_matrix_from_json(json::parse(similarity_matrix_to_json(m).dump()));
    CHECK(back.image_ids == m.image_ids);
    CHECK(back.template_ids == m.template_ids);
    CHECK(back.entries == m.entries);
    const auto sel = select_optimal(m, sets);
    write_selected(f.dir / "sel.jsonl", sel);
    CHECK(read_selected(f.dir / "sel.jsonl") == sel);
    for (Eigen::Index i = 0; i < m.entries.rows(); ++i) {
        CHECK(m.entries.row(i).maxCoeff() <= 1.0 + 1e-9);
        CHECK(m.entries.row(i).minCoeff() >= -1.0 - 1e-9);
    }
}
