#include <catch_amalgamated.hpp>

#include "mrnet/catalog.hpp"
#include "mrnet/encoder.hpp"

#include <cmath>

using namespace mrnet;
using Catch::Approx;

namespace {

Vec random_vec(Rng& rng, Eigen::Index n, double scale = 1.0) {
    Vec v(n);
    for (Eigen::Index i = 0; i < n; ++i) v(i) = scale * rng.normal();
    return v;
}

std::vector<Vec> random_sequence(Rng& rng, std::size_t T, Eigen::Index dim) {
    std::vector<Vec> xs;
    for (std::size_t t = 0; t < T; ++t) xs.push_back(random_vec(rng, dim));
    return xs;
}

/// Randomizes every encoder parameter, including biases, so no gate is trivially saturated.
void randomize(ParamStore& store, Rng& rng, double scale) {
    for (auto& t : store) fill_uniform(t.value, rng, -scale, scale);
}

}  // namespace

TEST_CASE("lstm_step closed form at zero weights", "[encoder][lstm]") {
    const Mat w_in = Mat::Zero(8, 3), w_rec = Mat::Zero(8, 2), bias = Mat::Zero(8, 1);
    const CellWeights w{w_in, w_rec, bias};
    Vec v(2);
    v << 0.8, -2.0;
    auto s = lstm_step(w, Vec::Zero(3), {Vec::Zero(2), v});
    for (int k = 0; k < 2; ++k) {
        CHECK(s.c(k) == Approx(0.5 * v(k)).epsilon(1e-15));
        CHECK(s.h(k) == Approx(0.5 * std::tanh(0.5 * v(k))).epsilon(1e-15));
    }
    auto z = lstm_step(w, Vec::Zero(3), RecurrentState::zeros(2));
    CHECK(z.h == Vec::Zero(2));
    CHECK(z.c == Vec::Zero(2));
    CHECK_THROWS_AS(lstm_step(w, Vec::Zero(4), RecurrentState::zeros(2)), Error);
}

TEST_CASE("lstm_step backward matches finite differences", "[encoder][lstm][gradcheck]") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const Eigen::Index d = 3, h = 2;
        ParamStore store;
        auto wi = store.add("w_in", 4 * h, d);
        auto wr = store.add("w_rec", 4 * h, h);
        auto b = store.add("bias", 4 * h, 1);
        auto x = store.add("x", d, 1);
        auto hp = store.add("h_prev", h, 1);
        auto cp = store.add("c_prev", h, 1);
        randomize(store, rng, 0.8);
        const Vec ph = random_vec(rng, h), pc = random_vec(rng, h);

        auto loss = [&](ParamStore& s) {
            const CellWeights w{s.value(wi), s.value(wr), s.value(b)};
            StepCache cache;
            auto next = lstm_step(w, s.value(x).col(0), {s.value(hp).col(0), s.value(cp).col(0)}, &cache);
            auto g = lstm_step_backward(w, cache, ph, pc, {s.grad(wi), s.grad(wr), s.grad(b)});
            s.grad(x).col(0) += g.dx;
            s.grad(hp).col(0) += g.dh_prev;
            s.grad(cp).col(0) += g.dc_prev;
            return ph.dot(next.h) + pc.dot(next.c);
        };
        CHECK(grad_check(loss, store).max_relative_error < 1e-5);
    }
}

TEST_CASE("encode with T=1 runs one step per direction", "[encoder]") {
    Rng rng(4);
    ParamStore store;
    BiEncoder enc({CellType::lstm, 3, 2, 32}, store, rng);
    randomize(store, rng, 0.5);
    const Vec x = random_vec(rng, 3);
    const Vec e = enc.encode(store, std::vector<Vec>{x});
    auto f = lstm_step({store.value(0), store.value(1), store.value(2)}, x, RecurrentState::zeros(2));
    auto b = lstm_step({store.value(3), store.value(4), store.value(5)}, x, RecurrentState::zeros(2));
    CHECK(e.head(2) == f.h);
    CHECK(e.tail(2) == b.h);
    CHECK(enc.output_dim() == 4);
}

TEST_CASE("palindromic input with tied directions gives equal halves", "[encoder]") {
    Rng rng(8);
    ParamStore store;
    BiEncoder enc({CellType::lstm, 2, 3, 32}, store, rng);
    randomize(store, rng, 0.6);
    for (int k = 0; k < 3; ++k) store.value(3 + static_cast<std::size_t>(k)) = store.value(static_cast<std::size_t>(k));
    const Vec a = random_vec(rng, 2), b = random_vec(rng, 2), c = random_vec(rng, 2);
    const Vec e = enc.encode(store, std::vector<Vec>{a, b, c, b, a});
    CHECK((e.head(3) - e.tail(3)).norm() == 0.0);
}

TEST_CASE("encoder initialization", "[encoder]") {
    Rng rng(1);
    ParamStore store;
    BiEncoder enc({CellType::lstm, 4, 3, 32, 0.08, 1.0}, store, rng);
    for (std::size_t i : enc.param_indices()) CHECK(store.value(i).cwiseAbs().maxCoeff() <= 1.0);
    const Mat& bias = store.value(store.index_of("encoder.fwd.bias"));
    CHECK(bias.block(3, 0, 3, 1) == Mat::Constant(3, 1, 1.0));
    CHECK(bias.block(0, 0, 3, 1) == Mat::Zero(3, 1));
    CHECK(store.value(store.index_of("encoder.fwd.w_in")).cwiseAbs().maxCoeff() <= 0.08);
}

TEST_CASE("BPTT matches finite differences on micro instances", "[encoder][gradcheck]") {
    for (CellType cell : {CellType::lstm, CellType::rnn}) {
        for (std::uint64_t seed = 1; seed <= 5; ++seed) {
            Rng rng(seed * 31 + static_cast<std::uint64_t>(cell));
            ParamStore store;
            BiEncoder enc({cell, 2, 3, 32}, store, rng);
            randomize(store, rng, 0.7);
            const auto xs = random_sequence(rng, 4, 2);
            const Vec probe = random_vec(rng, 6);
            // Inputs are checked through an extra tensor holding the sequence.
            auto xi = store.add("inputs", 4, 2);
            for (int t = 0; t < 4; ++t) store.value(xi).row(t) = xs[static_cast<std::size_t>(t)].transpose();

            auto loss = [&](ParamStore& s) {
                std::vector<Vec> seq;
                for (int t = 0; t < 4; ++t) seq.push_back(s.value(xi).row(t).transpose());
                EncodeTape tape;
                const Vec e = enc.encode(s, seq, &tape);
                auto dx = enc.backward(s, tape, probe);
                for (int t = 0; t < 4; ++t) s.grad(xi).row(t) += dx[static_cast<std::size_t>(t)].transpose();
                return probe.dot(e);
            };
            auto r = grad_check(loss, store);
            INFO("cell " << to_string(cell) << " seed " << seed << " worst " << r.worst_tensor);
            CHECK(r.max_relative_error < 1e-5);
        }
    }
}

TEST_CASE("encode is pure and truncates long titles", "[encoder]") {
    Rng rng(12);
    ParamStore store;
    BiEncoder enc({CellType::lstm, 3, 4, 5}, store, rng);
    const auto xs = random_sequence(rng, 9, 3);
    const Vec a = enc.encode(store, xs);
    CHECK(a == enc.encode(store, xs));
    const std::vector<Vec> head(xs.begin(), xs.begin() + 5);
    CHECK(a == enc.encode(store, head));
    CHECK_THROWS_AS(enc.encode(store, std::vector<Vec>{}), Error);
}

TEST_CASE("encoder is order-sensitive while TF-IDF is not", "[encoder][property]") {
    Rng rng(21);
    ParamStore store;
    BiEncoder enc({CellType::lstm, 3, 4, 32}, store, rng);
    randomize(store, rng, 0.9);
    const std::vector<std::string> title{"red", "oak", "table"}, shuffled{"table", "red", "oak"};
    std::map<std::string, Vec> wv;
    for (const auto& t : title) wv[t] = random_vec(rng, 3);
    auto seq = [&](const std::vector<std::string>& toks) {
        std::vector<Vec> xs;
        for (const auto& t : toks) xs.push_back(wv[t]);
        return xs;
    };
    CHECK((enc.encode(store, seq(title)) - enc.encode(store, seq(shuffled))).norm() > 1e-6);

    ProductRecord r;
    r.tokens = title;
    auto model = build_tfidf({r}, 8, 1);
    CHECK(tfidf_vector(model, title) == tfidf_vector(model, shuffled));
}

TEST_CASE("attach binds to existing parameters", "[encoder]") {
    Rng rng(2);
    ParamStore store;
    EncoderConfig cfg{CellType::rnn, 3, 2, 32};
    BiEncoder enc(cfg, store, rng);
    auto again = BiEncoder::attach(cfg, store);
    const auto xs = random_sequence(rng, 3, 3);
    CHECK(enc.encode(store, xs) == again.encode(store, xs));
    ParamStore empty;
    CHECK_THROWS_AS(BiEncoder::attach(cfg, empty), Error);
}
