#include <catch_amalgamated.hpp>

#include "mrnet/analytics.hpp"

#include <algorithm>
#include <cmath>

using namespace mrnet;
using Catch::Approx;

namespace {

Mat random_matrix(Rng& rng, Eigen::Index rows, Eigen::Index cols) {
    Mat m(rows, cols);
    for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = rng.normal();
    return m;
}

/// Full sort of every stored vector by (distance, id).
std::vector<std::string> brute_force_knn(const std::vector<std::string>& ids, const Mat& x, const Vec& q, std::size_t k) {
    std::vector<std::pair<double, std::string>> all;
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        double d = 0;
        for (Eigen::Index j = 0; j < x.cols(); ++j) d += (x(i, j) - q(j)) * (x(i, j) - q(j));
        all.emplace_back(d, ids[static_cast<std::size_t>(i)]);
    }
    std::sort(all.begin(), all.end());
    std::vector<std::string> out;
    for (std::size_t i = 0; i < k; ++i) out.push_back(all[i].second);
    return out;
}

double pairwise_auc(const std::vector<double>& s, const std::vector<int>& y) {
    double num = 0, den = 0;
    for (std::size_t i = 0; i < s.size(); ++i) {
        for (std::size_t j = 0; j < s.size(); ++j) {
            if (y[i] == 1 && y[j] == 0) {
                den += 1;
                num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
            }
        }
    }
    return num / den;
}

ProductRecord titled(const std::string& id, std::vector<std::string> tokens) {
    ProductRecord r;
    r.id = id;
    r.tokens = std::move(tokens);
    return r;
}

}  // namespace

TEST_CASE("knn hand cases", "[analytics][knn]") {
    Mat x(3, 1);
    x << 0, 1, 3;
    KnnIndex idx({"a", "b", "c"}, x);
    Vec q(1);
    q << 0.9;
    auto r = knn(idx, q, 2);
    REQUIRE(r.size() == 2);
    CHECK(r[0].id == "b");
    CHECK(r[1].id == "a");
    CHECK(r[0].distance == Approx(0.1).epsilon(1e-12));

    q << 3;
    CHECK(knn(idx, q, 1)[0].id == "c");
    CHECK(knn(idx, q, 1)[0].distance == 0.0);

    // Equidistant points order by id.
    Mat t(2, 1);
    t << 1, -1;
    q << 0;
    CHECK(knn(KnnIndex({"z", "y"}, t), q, 2)[0].id == "y");

    CHECK_THROWS_AS(knn(idx, q, 0), Error);
    CHECK_THROWS_AS(knn(idx, q, 4), Error);
    CHECK_THROWS_AS(knn(idx, Vec::Zero(2), 1), Error);
}

TEST_CASE("knn equals brute force on random instances", "[analytics][knn][oracle]") {
    Rng rng(17);
    for (int trial = 0; trial < 20; ++trial) {
        const Mat x = random_matrix(rng, 200, 16);
        std::vector<std::string> ids;
        for (int i = 0; i < 200; ++i) ids.push_back("id" + std::to_string(rng.index(1000000)) + "_" + std::to_string(i));
        KnnIndex idx(ids, x);
        Vec q = random_matrix(rng, 16, 1).col(0);
        const std::size_t k = 1 + rng.index(20);
        auto got = knn(idx, q, k);
        auto want = brute_force_knn(ids, x, q, k);
        for (std::size_t i = 0; i < k; ++i) CHECK(got[i].id == want[i]);
    }
}

TEST_CASE("auc closed cases and pairwise oracle", "[analytics][auc][oracle]") {
    const std::vector<int> y{0, 0, 1, 1};
    CHECK(auc(std::vector<double>{1, 2, 3, 4}, y) == 1.0);
    CHECK(auc(std::vector<double>{4, 3, 2, 1}, y) == 0.0);
    CHECK(auc(std::vector<double>{0.1, 0.4, 0.35, 0.8}, y) == Approx(0.75).epsilon(1e-15));
    CHECK(auc(std::vector<double>{1, 1, 1, 1}, y) == 0.5);
    CHECK_THROWS_AS(auc(std::vector<double>{1, 2}, std::vector<int>{1, 1}), Error);

    Rng rng(5);
    for (int trial = 0; trial < 50; ++trial) {
        const std::size_t n = 2 + rng.index(60);
        std::vector<double> s(n);
        std::vector<int> l(n);
        for (std::size_t i = 0; i < n; ++i) {
            s[i] = static_cast<double>(rng.index(8));  // many ties
            l[i] = rng.bernoulli(0.4) ? 1 : 0;
        }
        l[0] = 0;
        l[1] = 1;
        CHECK(std::abs(auc(s, l) - pairwise_auc(s, l)) <= 1e-12);
        // Invariant under strictly monotone transforms.
        std::vector<double> t(n);
        for (std::size_t i = 0; i < n; ++i) t[i] = std::exp(0.3 * s[i]) - 7;
        CHECK(auc(t, l) == auc(s, l));
    }
}

TEST_CASE("logistic regression", "[analytics][logreg]") {
    Mat x(6, 1);
    x << -3, -2, -1, 1, 2, 3;
    const std::vector<int> y{0, 0, 0, 1, 1, 1};
    LogRegModel zero{Vec::Zero(1), 0};
    CHECK(logreg_loss(zero, x, y, 0.1) == Approx(std::log(2.0)).epsilon(1e-15));

    auto m = train_logreg(x, y);
    std::vector<int> pred;
    for (Eigen::Index i = 0; i < x.rows(); ++i) pred.push_back(m.score(x.row(i).transpose()) > 0 ? 1 : 0);
    CHECK(accuracy(pred, y) == 1.0);

    CHECK_THROWS_AS(train_logreg(x, std::vector<int>(6, 1)), Error);
    CHECK_THROWS_AS(train_logreg(x, std::vector<int>{0, 1}), Error);
}

TEST_CASE("logistic regression gradient matches finite differences", "[analytics][logreg][gradcheck]") {
    Rng rng(2);
    const Mat x = random_matrix(rng, 12, 4);
    std::vector<int> y;
    for (int i = 0; i < 12; ++i) y.push_back(i % 2);
    ParamStore store;
    auto wi = store.add("w", 4, 1);
    auto bi = store.add("b", 1, 1);
    for (auto& t : store) fill_uniform(t.value, rng, -1, 1);
    auto r = grad_check(
        [&](ParamStore& s) {
            LogRegModel m{s.value(wi).col(0), s.value(bi)(0, 0)};
            Vec dw;
            Real db = 0;
            const Real l = logreg_loss(m, x, y, 0.3, &dw, &db);
            s.grad(wi).col(0) += dw;
            s.grad(bi)(0, 0) += db;
            return l;
        },
        store);
    CHECK(r.max_relative_error < 1e-6);
}

TEST_CASE("logistic regression AUC is invariant to matched feature rescaling", "[analytics][logreg][property]") {
    Rng rng(9);
    const Mat x = random_matrix(rng, 200, 5);
    Vec w_true(5);
    w_true << 1.0, -0.5, 0.3, 0, 0;
    std::vector<int> y;
    for (Eigen::Index i = 0; i < x.rows(); ++i) y.push_back(rng.bernoulli(sigmoid(x.row(i).dot(w_true))) ? 1 : 0);
    LogRegConfig cfg;
    cfg.l2 = 0.01;
    cfg.iterations = 2000;
    cfg.adam.lr = 0.02;
    const Real a = auc(train_logreg(x, y, cfg).scores(x), y);
    cfg.l2 *= 4;
    const Real b = auc(train_logreg(2 * x, y, cfg).scores(2 * x), y);
    CHECK(std::abs(a - b) <= 0.01);
}

TEST_CASE("random forest recovers the signal feature", "[analytics][forest]") {
    for (std::uint64_t seed = 1; seed <= 5; ++seed) {
        Rng rng(seed);
        const Mat x = random_matrix(rng, 300, 16);
        std::vector<int> y;
        for (Eigen::Index i = 0; i < x.rows(); ++i) y.push_back(x(i, 0) > 0 ? 1 : 0);
        ForestConfig cfg;
        cfg.trees = 20;
        cfg.seed = seed;
        auto f = train_rf(x, y, cfg);
        Eigen::Index best = -1;
        f.importance.maxCoeff(&best);
        CHECK(best == 0);
        CHECK(f.importance.sum() == Approx(1.0).margin(1e-9));
        CHECK(f.importance.minCoeff() >= 0.0);
    }
}

TEST_CASE("random forest degenerate and hand cases", "[analytics][forest]") {
    Rng rng(3);
    const Mat x = random_matrix(rng, 40, 3);
    auto constant = train_rf(x, std::vector<int>(40, 1));
    for (const auto& t : constant.trees) CHECK(t.split_count() == 0);
    CHECK(constant.importance.isZero());
    CHECK(constant.predict(x.row(0).transpose()) == 1);
    CHECK(constant.predict_proba(x.row(5).transpose()) == constant.predict_proba(x.row(9).transpose()));

    // A single depth-1 tree on one feature splits at the midpoint of the gap.
    Mat one(6, 1);
    one << 0, 1, 2, 10, 11, 12;
    ForestConfig cfg;
    cfg.trees = 1;
    cfg.max_depth = 1;
    cfg.bootstrap = false;
    auto stump = train_rf(one, std::vector<int>{0, 0, 0, 1, 1, 1}, cfg);
    const auto& root = stump.trees[0].nodes[0];
    CHECK(root.feature == 0);
    CHECK(root.threshold == 6.0);
    for (double v : {-5.0, 5.9, 6.0, 6.1, 50.0}) {
        Vec q(1);
        q << v;
        CHECK(stump.predict(q) == (v <= 6.0 ? 0 : 1));
    }
    CHECK_THROWS_AS(train_rf(Mat(0, 3), std::vector<int>{}), Error);

    // Multiclass labels.
    Mat three(9, 1);
    three << 0, 0.1, 0.2, 5, 5.1, 5.2, 9, 9.1, 9.2;
    cfg.max_depth = 3;
    auto multi = train_rf(three, std::vector<int>{0, 0, 0, 1, 1, 1, 2, 2, 2}, cfg);
    CHECK(multi.num_classes == 3);
    Vec q(1);
    q << 9.05;
    CHECK(multi.predict(q) == 2);
}

TEST_CASE("random forest is seed-deterministic", "[analytics][forest]") {
    Rng rng(4);
    const Mat x = random_matrix(rng, 80, 6);
    std::vector<int> y;
    for (Eigen::Index i = 0; i < x.rows(); ++i) y.push_back(x(i, 2) + 0.3 * x(i, 4) > 0 ? 1 : 0);
    ForestConfig cfg;
    cfg.trees = 10;
    auto a = train_rf(x, y, cfg), b = train_rf(x, y, cfg);
    CHECK(a.importance == b.importance);
    CHECK(a.scores(x) == b.scores(x));
}

TEST_CASE("stratified folds", "[analytics][cv]") {
    std::vector<int> y;
    for (int i = 0; i < 53; ++i) y.push_back(i < 20 ? 1 : 0);
    auto f = stratified_folds(y, 5, 3);
    for (std::size_t k = 0; k < 5; ++k) {
        int pos = 0, total = 0;
        for (std::size_t i = 0; i < y.size(); ++i) {
            if (f[i] != k) continue;
            ++total;
            pos += y[i];
        }
        CHECK(pos >= 4);
        CHECK(total >= 10);
    }
    CHECK(stratified_folds(y, 5, 3) == f);

    Rng rng(1);
    const Mat x = random_matrix(rng, 100, 3);
    std::vector<int> yy;
    for (Eigen::Index i = 0; i < x.rows(); ++i) yy.push_back(x(i, 0) > 0 ? 1 : 0);
    auto aucs = cross_validate_auc(x, yy, Classifier::logreg, {}, 5, 7);
    REQUIRE(aucs.size() == 5);
    CHECK(mean(aucs) > 0.95);
}

TEST_CASE("title overlap and unseen split", "[analytics][unseen]") {
    CHECK(title_overlap({"red", "oak", "table"}, {"red", "oak", "table"}) == 1.0);
    CHECK(title_overlap({"red", "oak", "table"}, {"blue", "chair"}) == 0.0);
    CHECK(title_overlap({"red", "red", "oak"}, {"red"}) == 0.5);

    // Ten copies of one title, ten titles with private tokens, one empty title.
    std::vector<ProductRecord> recs;
    for (int i = 0; i < 10; ++i) recs.push_back(titled("dup" + std::to_string(i), {"red", "oak", "table"}));
    for (int i = 0; i < 10; ++i) recs.push_back(titled("own" + std::to_string(i), {"u" + std::to_string(i), "v" + std::to_string(i)}));
    recs.push_back(titled("empty", {}));

    const auto split = unseen_split(recs, 0.5, 0.2, 3);
    CHECK(split.train.size() == 11);  // round(0.5 * 21)
    bool dup_in_train = false;
    for (std::size_t j : split.train) dup_in_train |= recs[j].id.rfind("dup", 0) == 0;
    for (std::size_t i : split.test) {
        // Independent re-verification against every training title.
        double worst = 0;
        for (std::size_t j : split.train) worst = std::max(worst, title_overlap(recs[i].tokens, recs[j].tokens));
        CHECK(worst <= 0.2);
        if (dup_in_train) CHECK(recs[i].id.rfind("dup", 0) != 0);
    }
    std::size_t own_in_test = 0;
    for (std::size_t i = 0; i < recs.size(); ++i) {
        const bool in_train = std::find(split.train.begin(), split.train.end(), i) != split.train.end();
        if (!in_train && recs[i].id.rfind("own", 0) == 0) ++own_in_test;
    }
    CHECK(split.test.size() >= own_in_test);
    CHECK(split.test.size() + split.removed + split.empty_titles + split.train.size() == recs.size());

    CHECK_THROWS_AS(unseen_split(recs, 0.5, 0.0, 3), Error);
    CHECK_THROWS_AS(unseen_split(recs, 1.0, 0.2, 3), Error);
    std::vector<ProductRecord> same(10, titled("s", {"one", "title"}));
    CHECK_THROWS_AS(unseen_split(same, 0.5, 0.2, 1), Error);
}

TEST_CASE("unseen split matches the brute-force overlap on random titles", "[analytics][unseen][oracle]") {
    Rng rng(8);
    std::vector<ProductRecord> recs;
    for (int i = 0; i < 300; ++i) {
        std::vector<std::string> t;
        const std::size_t n = 1 + rng.index(6);
        for (std::size_t k = 0; k < n; ++k) t.push_back("t" + std::to_string(rng.index(80)));
        recs.push_back(titled(std::to_string(i), t));
    }
    const auto split = unseen_split(recs, 0.7, 0.5, 2);
    std::set<std::size_t> kept(split.test.begin(), split.test.end()), train(split.train.begin(), split.train.end());
    for (std::size_t i = 0; i < recs.size(); ++i) {
        if (train.count(i)) continue;
        double worst = 0;
        for (std::size_t j : split.train) worst = std::max(worst, title_overlap(recs[i].tokens, recs[j].tokens));
        CHECK(kept.count(i) == (worst <= 0.5 ? 1u : 0u));
    }
}

TEST_CASE("importance overlap", "[analytics][importance]") {
    CHECK(top_set_size(256, 0.25) == 64);

    Rng rng(6);
    const Mat x = random_matrix(rng, 200, 20);
    std::vector<int> y;
    for (Eigen::Index i = 0; i < x.rows(); ++i) y.push_back(x(i, 7) > 0 ? 1 : 0);
    ImportanceOverlapConfig cfg;
    cfg.forest.trees = 15;
    auto stable = importance_overlap(x, y, cfg);
    CHECK(std::find(stable.features.begin(), stable.features.end(), 7u) != stable.features.end());
    REQUIRE(stable.run_tops.size() == 5);
    for (const auto& t : stable.run_tops) CHECK(t.size() == 5);

    // Pure noise: expected stable size is n (1/4)^runs, about 0.02 features here.
    std::vector<int> noise;
    for (int i = 0; i < 200; ++i) noise.push_back(rng.bernoulli(0.5) ? 1 : 0);
    const Mat wide = random_matrix(rng, 200, 80);
    auto none = importance_overlap(wide, noise, cfg);
    CHECK(static_cast<double>(none.features.size()) < 0.05 * 80);

    CHECK(intersection_size({1, 3, 5, 8}, {3, 4, 5}) == 2);
    CHECK_THROWS_AS(importance_overlap(Mat::Ones(10, 3), std::vector<int>(10, 0), cfg), Error);
    cfg.runs = 1;
    CHECK_THROWS_AS(importance_overlap(x, y, cfg), Error);
}

TEST_CASE("evaluation report", "[analytics][report]") {
    std::vector<EvalRow> rows{{"plugs", "tfidf", "logreg", 0, "auc", 0.8}, {"plugs", "tfidf", "logreg", 1, "auc", 0.8},
                              {"plugs", "mrnet", "logreg", 0, "auc", 0.72}, {"plugs", "mrnet", "forest", 0, "auc", 0.88}};
    const auto csv = report_csv(rows);
    CHECK(csv.rfind("task,representation,classifier,fold,metric,value\n", 0) == 0);
    CHECK(csv.find("plugs,mrnet,forest,0,auc,0.88") != std::string::npos);
    const auto table = summary_table(rows);
    CHECK(table.find("-10.00%") != std::string::npos);
    CHECK(table.find("+10.00%") != std::string::npos);
    CHECK(table.find("0.8000") != std::string::npos);
}
