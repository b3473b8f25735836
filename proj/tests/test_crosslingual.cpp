#include <catch_amalgamated.hpp>

#include "mrnet/crosslingual.hpp"

#include <algorithm>
#include <cmath>

using namespace mrnet;
using Catch::Approx;

namespace {

EmbeddingFile gaussian_region(std::size_t n, std::size_t dim, std::uint64_t seed) {
    Rng rng(seed);
    EmbeddingFile f;
    f.dim = static_cast<std::uint32_t>(dim);
    const Real sd = 1.0 / std::sqrt(static_cast<Real>(dim));
    for (std::size_t i = 0; i < n; ++i) {
        Vec v(static_cast<Eigen::Index>(dim));
        for (Eigen::Index k = 0; k < v.size(); ++k) v(k) = sd * rng.normal();
        f.add("p" + std::to_string(i), v);
    }
    return f;
}

Vec concat(const Vec& a, const Vec& b) {
    Vec out(a.size() + b.size());
    out << a, b;
    return out;
}


/// Held-out mean ||project([0,f]) - u||^2 relative to mean ||u||^2 on identical pairs.
Real self_alignment_error(std::size_t hidden) {
    const std::size_t m = 8;
    auto region = gaussian_region(300, m, 5);
    std::vector<PairedEmbedding> pairs;
    for (std::size_t i = 0; i < region.records.size(); ++i) pairs.push_back({region.records[i].id, region.vector(i), region.vector(i)});
    const std::vector<PairedEmbedding> train(pairs.begin(), pairs.begin() + 250), held(pairs.begin() + 250, pairs.end());
    CrossAEConfig cfg;
    cfg.hidden = hidden;
    cfg.batch_size = 64;
    cfg.steps = 3000;
    cfg.adam.lr = 0.005;
    auto res = train_multimodal_ae(make_pairs_dataset(train, 1), cfg);
    Real err = 0, energy = 0;
    for (const auto& p : held) {
        err += (project_cross(res.model, p.b) - p.a).squaredNorm();
        energy += p.a.squaredNorm();
    }
    return err / energy;
}

}  // namespace

TEST_CASE("pairs dataset has the three shapes", "[crosslingual][dataset]") {
    Vec u(2), f(2);
    u << 1, 2;
    f << 3, 4;
    const std::vector<PairedEmbedding> one{{"x", u, f}};
    auto ds = make_pairs_dataset(one, 5);
    REQUIRE(ds.size() == 3);
    const Vec z = Vec::Zero(2);
    auto has = [&](const Vec& in, const Vec& out) {
        return std::count_if(ds.begin(), ds.end(), [&](const CrossExample& e) { return e.input == in && e.target == out; });
    };
    CHECK(has(concat(u, z), concat(z, f)) == 1);
    CHECK(has(concat(z, f), concat(u, z)) == 1);
    CHECK(has(concat(u, f), concat(u, f)) == 1);

    CHECK_THROWS_AS(make_pairs_dataset(std::vector<PairedEmbedding>{}, 1), Error);
    CHECK_THROWS_AS(make_pairs_dataset(std::vector<PairedEmbedding>{{"x", u, Vec::Zero(3)}}, 1), Error);
}

TEST_CASE("pairs dataset size and dimension", "[crosslingual][dataset]") {
    auto region = gaussian_region(40, 256, 1);
    auto pairs = make_rotated_pairs(region, 0.0, 2);
    auto ds = make_pairs_dataset(pairs, 3);
    CHECK(ds.size() == 120);
    for (const auto& e : ds) {
        CHECK(e.input.size() == 512);
        CHECK(e.target.size() == 512);
    }
    // Every pair contributes each shape exactly once.
    std::size_t a_only = 0, b_only = 0, both = 0;
    for (const auto& e : ds) {
        const bool a = !e.input.head(256).isZero(), b = !e.input.tail(256).isZero();
        a_only += a && !b;
        b_only += b && !a;
        both += a && b;
    }
    CHECK(a_only == 40);
    CHECK(b_only == 40);
    CHECK(both == 40);
    auto again = make_pairs_dataset(pairs, 3);
    for (std::size_t i = 0; i < ds.size(); ++i) CHECK(again[i].input == ds[i].input);
}

TEST_CASE("random rotation is orthogonal", "[crosslingual]") {
    Rng rng(9);
    const Mat q = random_orthogonal(16, rng);
    CHECK((q.transpose() * q - Mat::Identity(16, 16)).cwiseAbs().maxCoeff() < 1e-12);
    auto region = gaussian_region(5, 16, 3);
    auto pairs = make_rotated_pairs(region, 0.0, 4);
    for (const auto& p : pairs) CHECK(p.b.norm() == Approx(p.a.norm()).epsilon(1e-12));
}

TEST_CASE("zero model predicts zero and starts at the target energy", "[crosslingual][train]") {
    CrossAEModel zero(4, 4);
    CHECK(project_cross(zero, Vec::Ones(4)).isZero());

    auto pairs = make_rotated_pairs(gaussian_region(10, 4, 1), 0.05, 2);
    auto ds = make_pairs_dataset(pairs, 1);
    Real expect = 0;
    for (const auto& e : ds) expect += e.target.squaredNorm() / 8.0;
    expect /= static_cast<Real>(ds.size());
    CrossAEConfig cfg;
    cfg.steps = 1;
    cfg.batch_size = ds.size();
    auto res = train_multimodal_ae(ds, cfg);
    CHECK(res.losses.front() == Approx(expect).epsilon(1e-12));
}

TEST_CASE("cross autoencoder gradient matches finite differences", "[crosslingual][gradcheck]") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        CrossAEModel m(3, 4);
        Rng rng(seed);
        for (auto& t : m.params()) fill_uniform(t.value, rng, -0.6, 0.6);
        Mat x(5, 6), y(5, 6);
        for (Eigen::Index i = 0; i < x.size(); ++i) {
            x.data()[i] = rng.normal();
            y.data()[i] = rng.normal();
        }
        auto r = grad_check([&](ParamStore&) { return cross_ae_loss_and_grad(m, x, y); }, m.params());
        INFO("seed " << seed << " worst " << r.worst_tensor);
        CHECK(r.max_relative_error < 1e-5);
    }
}

TEST_CASE("batched forward agrees with the single-vector path", "[crosslingual]") {
    CrossAEModel m(3, 5);
    Rng rng(2);
    for (auto& t : m.params()) fill_uniform(t.value, rng, -0.5, 0.5);
    Vec x(6), y = Vec::Zero(6);
    for (Eigen::Index k = 0; k < 6; ++k) x(k) = rng.normal();
    const Real batched = cross_ae_loss_and_grad(m, Mat(x.transpose()), Mat(y.transpose()));
    CHECK(batched == Approx(m.forward(x).squaredNorm() / 6.0).epsilon(1e-12));
}

TEST_CASE("identical pairs self-align", "[crosslingual][train]") {
    // With a hidden layer as wide as both regions the block swap is representable.
    CHECK(self_alignment_error(16) < 0.1);
    // At hidden = region width the swap has rank 2m > m; the best linear fit
    // returns u/2, a relative error of 0.25.
    const Real narrow = self_alignment_error(8);
    CHECK(narrow < 0.3);
    CHECK(narrow > 0.1);
}

TEST_CASE("rotation-paired regions are recoverable", "[crosslingual][train]") {
    const std::size_t m = 16;
    auto all = make_rotated_pairs(gaussian_region(300, m, 7), 0.01, 8);
    const std::vector<PairedEmbedding> train(all.begin(), all.begin() + 200), held(all.begin() + 200, all.end());
    CrossAEConfig cfg;
    cfg.batch_size = 128;
    cfg.steps = 2500;
    cfg.adam.lr = 0.005;
    cfg.seed = 4;
    auto res = train_multimodal_ae(make_pairs_dataset(train, 2), cfg);
    CHECK(res.losses.back() <= 0.5 * res.losses.front());
    CHECK(top1_retrieval(res.model, train) >= 0.8);
    CHECK(top1_retrieval(res.model, held) > 1.0 / static_cast<Real>(held.size()));
    CHECK(top1_retrieval(res.model, train, CrossDirection::a_to_b) > 10.0 / static_cast<Real>(train.size()));

    const Vec p = project_cross(res.model, held[0].b);
    CHECK(p == project_cross(res.model, held[0].b));
    // Reverse projection is the same network with the blocks swapped.
    const Vec x = concat(held[0].a, Vec::Zero(16));
    CHECK(project_cross(res.model, held[0].a, CrossDirection::a_to_b) == res.model.forward(x).tail(16));
}

TEST_CASE("cross autoencoder determinism and checkpoint", "[crosslingual][checkpoint]") {
    auto pairs = make_rotated_pairs(gaussian_region(30, 4, 1), 0.05, 2);
    auto ds = make_pairs_dataset(pairs, 1);
    CrossAEConfig cfg;
    cfg.steps = 20;
    cfg.batch_size = 16;
    auto a = train_multimodal_ae(ds, cfg), b = train_multimodal_ae(ds, cfg);
    CHECK(a.losses == b.losses);
    const auto bytes = encode_checkpoint(to_checkpoint(a.model));
    CHECK(bytes == encode_checkpoint(to_checkpoint(b.model)));
    auto back = cross_ae_from_checkpoint(decode_checkpoint(bytes));
    round_to_f32(a.model.params());
    CHECK(project_cross(back, pairs[0].b) == project_cross(a.model, pairs[0].b));
    CHECK_THROWS_AS(project_cross(back, Vec::Zero(5)), Error);
}

TEST_CASE("alignment files", "[crosslingual][io]") {
    const Alignment rows{{"uk1", "fr9"}, {"uk2", "fr3"}};
    const auto text = format_alignment(rows);
    CHECK(text == "uk1\tfr9\nuk2\tfr3\n");
    CHECK(parse_alignment(text) == rows);
    CHECK(parse_alignment("a\tb\r\n\nc\td") == Alignment{{"a", "b"}, {"c", "d"}});
    CHECK_THROWS_AS(parse_alignment("a b\n"), Error);
    CHECK_THROWS_AS(parse_alignment("a\tb\tc\n"), Error);
    CHECK_THROWS_AS(parse_alignment("a\tb\na\tc\n"), Error);
    CHECK_THROWS_AS(parse_alignment("\tb\n"), Error);

    EmbeddingFile a, b;
    a.dim = b.dim = 2;
    a.add("uk1", Vec::Ones(2));
    a.add("uk2", Vec::Zero(2));
    b.add("fr9", Vec::Constant(2, 2.0));
    b.add("fr3", Vec::Constant(2, 3.0));
    auto joined = join_pairs(a, b, rows);
    REQUIRE(joined.size() == 2);
    CHECK(joined[1].b == Vec::Constant(2, 3.0));
    CHECK_THROWS_AS(join_pairs(a, b, {{"uk1", "fr0"}}), Error);
}
