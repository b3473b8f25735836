#include <catch_amalgamated.hpp>

#include "mrnet/embeddings.hpp"

#include <algorithm>
#include <cmath>

using namespace mrnet;
using Catch::Approx;

namespace {

// "red" and "crimson" appear in exactly the same contexts; "sky" never does.
std::vector<ProductRecord> toy_corpus(std::uint64_t seed) {
    const std::vector<std::string> warm{"apple", "fire", "rose", "cherry", "brick"};
    const std::vector<std::string> cool{"cloud", "ocean", "water", "ice", "rain"};
    Rng rng(seed);
    std::vector<ProductRecord> out;
    for (int i = 0; i < 600; ++i) {
        const int kind = i % 3;
        const std::string& centre = kind == 0 ? "red" : kind == 1 ? "crimson" : "sky";
        const auto& ctx = kind == 2 ? cool : warm;
        ProductRecord r;
        r.id = std::to_string(i);
        r.tokens = {ctx[rng.index(ctx.size())], centre, ctx[rng.index(ctx.size())]};
        out.push_back(std::move(r));
    }
    return out;
}

Word2VecConfig toy_config(std::uint64_t seed) {
    Word2VecConfig cfg;
    cfg.dim = 16;
    cfg.min_count = 1;
    cfg.window = 2;
    cfg.epochs = 10;
    cfg.seed = seed;
    return cfg;
}

}  // namespace

TEST_CASE("SGNS pair loss at zero vectors is (1+k) ln 2", "[embeddings]") {
    const Vec z = Vec::Zero(8);
    for (std::size_t k : {0u, 1u, 5u}) {
        std::vector<Vec> negs(k, z);
        CHECK(sgns_pair_loss(z, z, negs) == Approx(static_cast<double>(1 + k) * std::log(2.0)).epsilon(1e-14));
    }
}

TEST_CASE("production-scale defaults", "[embeddings]") {
    Word2VecConfig cfg;
    CHECK(cfg.dim == 128);
    CHECK(cfg.min_count == 10);
}

TEST_CASE("skip-gram places shared-context words together", "[embeddings][train]") {
    std::vector<double> margins;
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        auto res = train_word2vec(toy_corpus(seed), toy_config(seed));
        const auto& t = res.table;
        margins.push_back(cosine(t.lookup("red"), t.lookup("crimson")) - cosine(t.lookup("red"), t.lookup("sky")));
    }
    std::sort(margins.begin(), margins.end());
    CHECK(margins[2] > 0.0);
}

TEST_CASE("skip-gram loss falls and vectors stay bounded", "[embeddings][train]") {
    auto res = train_word2vec(toy_corpus(3), toy_config(3));
    REQUIRE(res.epoch_losses.size() == 10);
    CHECK(res.epoch_losses.back() < 0.8 * res.epoch_losses.front());
    CHECK(res.table.vectors().allFinite());
    for (Eigen::Index i = 0; i < res.table.vectors().rows(); ++i) CHECK(res.table.vectors().row(i).norm() <= 100.0);
}

TEST_CASE("skip-gram is deterministic under a fixed seed", "[embeddings][train]") {
    auto a = train_word2vec(toy_corpus(1), toy_config(9));
    auto b = train_word2vec(toy_corpus(1), toy_config(9));
    CHECK(a.table.vectors() == b.table.vectors());
    CHECK(a.epoch_losses == b.epoch_losses);
}

TEST_CASE("skip-gram rejects an empty vocabulary", "[embeddings][train]") {
    auto cfg = toy_config(1);
    cfg.min_count = 100000;
    CHECK_THROWS_AS(train_word2vec(toy_corpus(1), cfg), Error);
}

TEST_CASE("lookup", "[embeddings][lookup]") {
    Mat m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    WordEmbeddingTable t(Vocab({{"red", 5, 5}, {"chair", 2, 2}}), m);
    CHECK(t.lookup("chair") == Vec(m.row(1).transpose()));
    CHECK(t.lookup("sofa") == Vec::Zero(3));
    CHECK(t.lookup("red") == t.lookup("red"));
    CHECK_THROWS_AS(WordEmbeddingTable(Vocab({{"red", 1, 1}}), m), Error);
}

TEST_CASE("word vector text format", "[embeddings][io]") {
    auto res = train_word2vec(toy_corpus(2), toy_config(2));
    const auto text = format_word_vectors(res.table);
    CHECK(text.rfind(std::to_string(res.table.size()) + " 16\n", 0) == 0);
    auto back = parse_word_vectors(text);
    CHECK(back.vectors() == res.table.vectors());
    for (std::size_t i = 0; i < back.size(); ++i) CHECK(back.vocab()[i].token == res.table.vocab()[i].token);

    CHECK_THROWS_AS(parse_word_vectors("2 3\nred 1 2 3\n"), Error);
    CHECK_THROWS_AS(parse_word_vectors("1 3\nred 1 2\n"), Error);
    CHECK_THROWS_AS(parse_word_vectors("1 3\nred 1 2 3 4\n"), Error);
    CHECK_THROWS_AS(parse_word_vectors("x y\n"), Error);
    CHECK(parse_word_vectors("1 2\nred 0.5 -1\n").lookup("red")(1) == -1.0);
}
