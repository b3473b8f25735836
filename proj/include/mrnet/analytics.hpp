#ifndef MRNET_ANALYTICS_HPP
#define MRNET_ANALYTICS_HPP

#include "mrnet/catalog.hpp"
#include "mrnet/io.hpp"
#include "mrnet/numerics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <map>
#include <numeric>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>
#include <vector>

namespace mrnet {

// ---------------------------------------------------------------------------
// Exact nearest neighbours
// ---------------------------------------------------------------------------

struct Neighbor {
    std::string id;
    Real distance = 0;
};

class KnnIndex {
public:
    KnnIndex(std::vector<std::string> ids, Mat vectors) : ids_(std::move(ids)), vectors_(std::move(vectors)) {
        if (static_cast<Eigen::Index>(ids_.size()) != vectors_.rows()) fail(ErrorKind::shape, "knn: id count != row count");
    }

    explicit KnnIndex(const EmbeddingFile& f) : KnnIndex(ids_of(f), f.matrix()) {}

    std::size_t size() const { return ids_.size(); }
    std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
    const std::vector<std::string>& ids() const { return ids_; }
    const Mat& vectors() const { return vectors_; }

private:
    static std::vector<std::string> ids_of(const EmbeddingFile& f) {
        std::vector<std::string> out;
        for (const auto& r : f.records) out.push_back(r.id);
        return out;
    }

    std::vector<std::string> ids_;
    Mat vectors_;
};

/// The k nearest stored vectors by Euclidean distance, ascending; equal distances order by id.
inline std::vector<Neighbor> knn(const KnnIndex& index, const Vec& query, std::size_t k) {
    if (k == 0) fail(ErrorKind::config, "knn: k must be >= 1");
    if (k > index.size()) fail(ErrorKind::config, "knn: k exceeds index size");
    require_shape(static_cast<std::size_t>(query.size()) == index.dim(), "knn: query dimension mismatch");
    std::vector<std::pair<Real, std::size_t>> d(index.size());
    for (std::size_t i = 0; i < index.size(); ++i) {
        d[i] = {(index.vectors().row(static_cast<Eigen::Index>(i)).transpose() - query).squaredNorm(), i};
    }
    auto less = [&](const auto& a, const auto& b) {
        if (a.first != b.first) return a.first < b.first;
        return index.ids()[a.second] < index.ids()[b.second];
    };
    std::partial_sort(d.begin(), d.begin() + static_cast<std::ptrdiff_t>(k), d.end(), less);
    std::vector<Neighbor> out;
    out.reserve(k);
    for (std::size_t i = 0; i < k; ++i) out.push_back({index.ids()[d[i].second], std::sqrt(d[i].first)});
    return out;
}

// ---------------------------------------------------------------------------
// Metrics
// ---------------------------------------------------------------------------

/// Mann-Whitney AUC: probability a random positive outscores a random negative, ties counted 0.5.
inline Real auc(std::span<const Real> scores, std::span<const int> labels) {
    if (scores.size() != labels.size()) fail(ErrorKind::shape, "auc: scores/labels length mismatch");
    std::vector<std::size_t> order(scores.size());
    std::iota(order.begin(), order.end(), 0);
    std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
    Real pos = 0, neg = 0, rank_sum = 0;
    for (std::size_t i = 0; i < order.size();) {
        std::size_t j = i;
        while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
        const Real avg_rank = 0.5 * static_cast<Real>(i + 1 + j);  // mean of ranks i+1..j
        for (std::size_t t = i; t < j; ++t) {
            const int l = labels[order[t]];
            if (l != 0 && l != 1) fail(ErrorKind::data, "auc: labels must be 0 or 1");
            if (l == 1) {
                rank_sum += avg_rank;
                pos += 1;
            } else {
                neg += 1;
            }
        }
        i = j;
    }
    if (pos == 0 || neg == 0) fail(ErrorKind::data, "auc: both classes must be present");
    return (rank_sum - pos * (pos + 1) / 2) / (pos * neg);
}

inline Real auc(const Vec& scores, std::span<const int> labels) {
    return auc(std::span<const Real>(scores.data(), static_cast<std::size_t>(scores.size())), labels);
}

inline Real accuracy(std::span<const int> predicted, std::span<const int> labels) {
    if (predicted.size() != labels.size() || labels.empty()) fail(ErrorKind::shape, "accuracy: length mismatch or empty input");
    std::size_t hit = 0;
    for (std::size_t i = 0; i < labels.size(); ++i) hit += predicted[i] == labels[i];
    return static_cast<Real>(hit) / static_cast<Real>(labels.size());
}

// ---------------------------------------------------------------------------
// Logistic regression
// ---------------------------------------------------------------------------

struct LogRegConfig {
    Real l2 = 1e-4;
    std::size_t iterations = 300;
    AdamConfig adam{0.05, 0.9, 0.999, 1e-8};

    void validate() const {
        if (!(l2 >= 0)) fail(ErrorKind::config, "logreg: l2 must be >= 0");
        adam.validate();
    }
};

struct LogRegModel {
    Vec w;
    Real b = 0;

    Real score(const Eigen::Ref<const Vec>& x) const { return w.dot(x) + b; }
    Real probability(const Eigen::Ref<const Vec>& x) const { return sigmoid(score(x)); }
    Vec scores(const Mat& x) const { return (x * w).array() + b; }
};

namespace detail {

inline void check_binary(std::span<const int> y) {
    bool has0 = false, has1 = false;
    for (int v : y) {
        if (v == 0) has0 = true;
        else if (v == 1) has1 = true;
        else fail(ErrorKind::data, "logreg: labels must be 0 or 1");
    }
    if (!has0 || !has1) fail(ErrorKind::data, "logreg: both classes must be present");
}

}  // namespace detail

/// Mean logistic loss plus (l2/2)|w|^2, with its gradient.
inline Real logreg_loss(const LogRegModel& m, const Mat& x, std::span<const int> y, Real l2, Vec* dw = nullptr, Real* db = nullptr) {
    const Vec z = m.scores(x);
    const Real n = static_cast<Real>(y.size());
    Real loss = 0;
    Vec r(z.size());
    for (Eigen::Index i = 0; i < z.size(); ++i) {
        const Real t = y[static_cast<std::size_t>(i)];
        // log(1 + e^z) - t z, computed stably
        loss += std::max(z(i), 0.0) + std::log1p(std::exp(-std::abs(z(i)))) - t * z(i);
        r(i) = sigmoid(z(i)) - t;
    }
    loss = loss / n + 0.5 * l2 * m.w.squaredNorm();
    if (dw) *dw = x.transpose() * r / n + l2 * m.w;
    if (db) *db = r.sum() / n;
    return loss;
}

/// Full-batch Adam from zero weights; deterministic for fixed inputs.
inline LogRegModel train_logreg(const Mat& x, std::span<const int> y, const LogRegConfig& cfg = {}) {
    cfg.validate();
    if (static_cast<std::size_t>(x.rows()) != y.size()) fail(ErrorKind::shape, "logreg: X rows != len(y)");
    if (y.size() < 2) fail(ErrorKind::data, "logreg: need at least two examples");
    detail::check_binary(y);
    LogRegModel m{Vec::Zero(x.cols()), 0};
    Tensor w, b;
    w.value = Mat::Zero(x.cols(), 1);
    w.grad = w.m = w.v = w.value;
    b.value = b.grad = b.m = b.v = Mat::Zero(1, 1);
    for (std::size_t it = 1; it <= cfg.iterations; ++it) {
        Vec dw;
        Real db = 0;
        const Real loss = logreg_loss(m, x, y, cfg.l2, &dw, &db);
        if (!std::isfinite(loss)) fail(ErrorKind::divergence, "logreg: non-finite loss");
        w.grad.col(0) = dw;
        b.grad(0, 0) = db;
        adam_step(w, cfg.adam, static_cast<std::int64_t>(it));
        adam_step(b, cfg.adam, static_cast<std::int64_t>(it));
        m.w = w.value.col(0);
        m.b = b.value(0, 0);
    }
    return m;
}

// ---------------------------------------------------------------------------
// Random forest
// ---------------------------------------------------------------------------

struct ForestConfig {
    std::size_t trees = 50;
    std::size_t max_depth = 8;
    std::size_t features_per_split = 0;  // 0 means floor(sqrt(d))
    bool bootstrap = true;
    std::uint64_t seed = 1;

    void validate() const {
        if (trees < 1) fail(ErrorKind::config, "forest: trees must be >= 1");
    }
};

struct TreeNode {
    int feature = -1;  // -1 marks a leaf
    Real threshold = 0;
    int left = -1;
    int right = -1;
    Vec distribution;  // class frequencies of the training samples reaching the node
};

struct DecisionTree {
    std::vector<TreeNode> nodes;

    const Vec& leaf_distribution(const Eigen::Ref<const Vec>& x) const {
        std::size_t i = 0;
        while (nodes[i].feature >= 0) {
            i = static_cast<std::size_t>(x(nodes[i].feature) <= nodes[i].threshold ? nodes[i].left : nodes[i].right);
        }
        return nodes[i].distribution;
    }

    std::size_t split_count() const {
        return static_cast<std::size_t>(std::count_if(nodes.begin(), nodes.end(), [](const TreeNode& n) { return n.feature >= 0; }));
    }
};

struct ForestModel {
    std::size_t num_classes = 0;
    std::vector<DecisionTree> trees;
    Vec importance;  // normalized total impurity decrease per feature

    Vec predict_proba(const Eigen::Ref<const Vec>& x) const {
        Vec p = Vec::Zero(static_cast<Eigen::Index>(num_classes));
        for (const auto& t : trees) p += t.leaf_distribution(x);
        return p / static_cast<Real>(trees.size());
    }

    int predict(const Eigen::Ref<const Vec>& x) const {
        Eigen::Index best = 0;
        predict_proba(x).maxCoeff(&best);
        return static_cast<int>(best);
    }

    /// Positive-class probability for binary problems.
    Vec scores(const Mat& x) const {
        Vec s(x.rows());
        for (Eigen::Index i = 0; i < x.rows(); ++i) s(i) = predict_proba(x.row(i).transpose())(num_classes > 1 ? 1 : 0);
        return s;
    }
};

namespace detail {

inline Real gini(const Vec& counts, Real n) {
    if (n <= 0) return 0;
    return 1.0 - (counts / n).squaredNorm();
}

struct TreeBuilder {
    const Mat& x;
    std::span<const int> y;
    std::size_t num_classes;
    std::size_t max_depth;
    std::size_t mtry;
    Rng& rng;
    Vec& importance;
    Real total;  // samples in the tree's training set
    DecisionTree tree;

    Vec class_counts(const std::vector<std::size_t>& idx) const {
        Vec c = Vec::Zero(static_cast<Eigen::Index>(num_classes));
        for (std::size_t i : idx) c(y[i]) += 1;
        return c;
    }

    int build(std::vector<std::size_t> idx, std::size_t depth) {
        const int id = static_cast<int>(tree.nodes.size());
        tree.nodes.emplace_back();
        const Vec counts = class_counts(idx);
        const Real n = static_cast<Real>(idx.size());
        tree.nodes[static_cast<std::size_t>(id)].distribution = counts / n;
        const Real parent = gini(counts, n);
        if (depth >= max_depth || idx.size() < 2 || parent <= 0) return id;

        // Candidate features: a random subset of size mtry.
        std::vector<std::size_t> features(static_cast<std::size_t>(x.cols()));
        std::iota(features.begin(), features.end(), 0);
        rng.shuffle(features);
        features.resize(std::min(mtry, features.size()));

        Real best_gain = 1e-12;
        int best_feature = -1;
        Real best_threshold = 0;
        std::vector<std::pair<Real, int>> vals(idx.size());
        for (std::size_t f : features) {
            for (std::size_t k = 0; k < idx.size(); ++k) vals[k] = {x(static_cast<Eigen::Index>(idx[k]), static_cast<Eigen::Index>(f)), y[idx[k]]};
            std::sort(vals.begin(), vals.end());
            Vec left = Vec::Zero(counts.size());
            for (std::size_t k = 0; k + 1 < vals.size(); ++k) {
                left(vals[k].second) += 1;
                if (vals[k].first == vals[k + 1].first) continue;
                const Real nl = static_cast<Real>(k + 1), nr = n - nl;
                const Real gain = n * parent - nl * gini(left, nl) - nr * gini(counts - left, nr);
                if (gain > best_gain) {
                    best_gain = gain;
                    best_feature = static_cast<int>(f);
                    best_threshold = 0.5 * (vals[k].first + vals[k + 1].first);
                }
            }
        }
        if (best_feature < 0) return id;

        importance(best_feature) += best_gain / total;
        std::vector<std::size_t> l, r;
        for (std::size_t i : idx) (x(static_cast<Eigen::Index>(i), best_feature) <= best_threshold ? l : r).push_back(i);
        idx.clear();
        idx.shrink_to_fit();
        const int li = build(std::move(l), depth + 1);
        const int ri = build(std::move(r), depth + 1);
        auto& node = tree.nodes[static_cast<std::size_t>(id)];
        node.feature = best_feature;
        node.threshold = best_threshold;
        node.left = li;
        node.right = ri;
        return id;
    }
};

}  // namespace detail

/// Bootstrap-aggregated Gini trees. Labels are class indices 0..K-1.
inline ForestModel train_rf(const Mat& x, std::span<const int> y, const ForestConfig& cfg = {}) {
    cfg.validate();
    if (x.rows() == 0 || x.cols() == 0) fail(ErrorKind::data, "forest: empty data");
    if (static_cast<std::size_t>(x.rows()) != y.size()) fail(ErrorKind::shape, "forest: X rows != len(y)");
    int max_label = 0;
    for (int v : y) {
        if (v < 0) fail(ErrorKind::data, "forest: labels must be non-negative class indices");
        max_label = std::max(max_label, v);
    }
    ForestModel model;
    model.num_classes = static_cast<std::size_t>(std::max(max_label + 1, 2));
    model.importance = Vec::Zero(x.cols());
    const std::size_t d = static_cast<std::size_t>(x.cols());
    const std::size_t mtry = cfg.features_per_split > 0 ? cfg.features_per_split
                                                        : std::max<std::size_t>(1, static_cast<std::size_t>(std::sqrt(static_cast<Real>(d))));
    for (std::size_t t = 0; t < cfg.trees; ++t) {
        Rng rng(derive_seed(cfg.seed, t));
        std::vector<std::size_t> sample(y.size());
        if (cfg.bootstrap) {
            for (auto& s : sample) s = rng.index(y.size());
        } else {
            std::iota(sample.begin(), sample.end(), 0);
        }
        Vec imp = Vec::Zero(x.cols());
        detail::TreeBuilder b{x, y, model.num_classes, cfg.max_depth, mtry, rng, imp, static_cast<Real>(sample.size()), {}};
        b.build(std::move(sample), 0);
        model.trees.push_back(std::move(b.tree));
        model.importance += imp;
    }
    const Real sum = model.importance.sum();
    if (sum > 0) model.importance /= sum;
    return model;
}

// ---------------------------------------------------------------------------
// Cross validation
// ---------------------------------------------------------------------------

enum class Classifier { logreg, forest };

inline std::string to_string(Classifier c) { return c == Classifier::logreg ? "logreg" : "forest"; }

/// Seeded stratified fold assignment: each class is shuffled and dealt round-robin.
inline std::vector<std::size_t> stratified_folds(std::span<const int> y, std::size_t k, std::uint64_t seed) {
    if (k < 2) fail(ErrorKind::config, "folds must be >= 2");
    std::map<int, std::vector<std::size_t>> by_class;
    for (std::size_t i = 0; i < y.size(); ++i) by_class[y[i]].push_back(i);
    Rng rng(seed);
    std::vector<std::size_t> fold(y.size());
    std::size_t next = 0;
    for (auto& [cls, items] : by_class) {
        rng.shuffle(items);
        for (std::size_t i : items) fold[i] = next++ % k;
    }
    return fold;
}

inline Mat select_rows(const Mat& x, const std::vector<std::size_t>& rows) {
    Mat out(static_cast<Eigen::Index>(rows.size()), x.cols());
    for (std::size_t i = 0; i < rows.size(); ++i) out.row(static_cast<Eigen::Index>(i)) = x.row(static_cast<Eigen::Index>(rows[i]));
    return out;
}

struct ClassifierConfig {
    LogRegConfig logreg;
    ForestConfig forest;
};

inline Vec fit_and_score(Classifier c, const Mat& xtr, std::span<const int> ytr, const Mat& xte, const ClassifierConfig& cfg) {
    if (c == Classifier::logreg) return train_logreg(xtr, ytr, cfg.logreg).scores(xte);
    return train_rf(xtr, ytr, cfg.forest).scores(xte);
}

/// Test-fold AUC for each of k stratified folds.
inline std::vector<Real> cross_validate_auc(const Mat& x, std::span<const int> y, Classifier c, const ClassifierConfig& cfg,
                                            std::size_t k, std::uint64_t seed) {
    if (static_cast<std::size_t>(x.rows()) != y.size()) fail(ErrorKind::shape, "cross_validate: X rows != len(y)");
    const auto fold = stratified_folds(y, k, seed);
    std::vector<Real> out;
    for (std::size_t f = 0; f < k; ++f) {
        std::vector<std::size_t> tr, te;
        for (std::size_t i = 0; i < y.size(); ++i) (fold[i] == f ? te : tr).push_back(i);
        std::vector<int> ytr, yte;
        for (auto i : tr) ytr.push_back(y[i]);
        for (auto i : te) yte.push_back(y[i]);
        const Vec s = fit_and_score(c, select_rows(x, tr), ytr, select_rows(x, te), cfg);
        out.push_back(auc(s, yte));
    }
    return out;
}

inline Real mean(std::span<const Real> v) {
    if (v.empty()) fail(ErrorKind::data, "mean of an empty sequence");
    return std::accumulate(v.begin(), v.end(), 0.0) / static_cast<Real>(v.size());
}

// ---------------------------------------------------------------------------
// Unseen-population split
// ---------------------------------------------------------------------------

/// |tokens(test) ∩ tokens(train)| / |tokens(test)| over distinct tokens.
inline Real title_overlap(const std::vector<std::string>& test, const std::vector<std::string>& train) {
    const std::set<std::string> a(test.begin(), test.end()), b(train.begin(), train.end());
    if (a.empty()) return 0;
    std::size_t common = 0;
    for (const auto& t : a) common += b.count(t);
    return static_cast<Real>(common) / static_cast<Real>(a.size());
}

struct UnseenSplit {
    std::vector<std::size_t> train;  // indices into the input records
    std::vector<std::size_t> test;   // retained test indices
    std::size_t removed = 0;         // test records above the threshold
    std::size_t empty_titles = 0;    // test records with no tokens
};

/// Max overlap of each candidate test title against every training title.
inline std::vector<Real> max_overlaps(const std::vector<ProductRecord>& records, const std::vector<std::size_t>& train,
                                      const std::vector<std::size_t>& candidates) {
    std::unordered_map<std::string, std::vector<std::uint32_t>> postings;
    for (std::size_t j = 0; j < train.size(); ++j) {
        std::unordered_set<std::string> seen(records[train[j]].tokens.begin(), records[train[j]].tokens.end());
        for (const auto& t : seen) postings[t].push_back(static_cast<std::uint32_t>(j));
    }
    std::vector<Real> out;
    out.reserve(candidates.size());
    std::vector<std::uint32_t> hits(train.size(), 0);
    for (std::size_t i : candidates) {
        const std::set<std::string> toks(records[i].tokens.begin(), records[i].tokens.end());
        std::vector<std::uint32_t> touched;
        std::uint32_t best = 0;
        for (const auto& t : toks) {
            auto it = postings.find(t);
            if (it == postings.end()) continue;
            for (std::uint32_t j : it->second) {
                if (hits[j]++ == 0) touched.push_back(j);
                best = std::max(best, hits[j]);
            }
        }
        for (std::uint32_t j : touched) hits[j] = 0;
        out.push_back(toks.empty() ? 0.0 : static_cast<Real>(best) / static_cast<Real>(toks.size()));
    }
    return out;
}

/// Keeps the candidates whose max title overlap with the training titles is at most t_h.
inline UnseenSplit unseen_filter(const std::vector<ProductRecord>& records, std::vector<std::size_t> train,
                                 const std::vector<std::size_t>& candidates, Real t_h = 0.2) {
    if (!(t_h > 0 && t_h <= 1)) fail(ErrorKind::config, "unseen_split: t_h must lie in (0,1]");
    UnseenSplit out;
    out.train = std::move(train);
    std::vector<std::size_t> nonempty;
    for (std::size_t i : candidates) {
        if (records.at(i).tokens.empty()) {
            ++out.empty_titles;
        } else {
            nonempty.push_back(i);
        }
    }
    const auto overlaps = max_overlaps(records, out.train, nonempty);
    for (std::size_t k = 0; k < nonempty.size(); ++k) {
        if (overlaps[k] <= t_h) {
            out.test.push_back(nonempty[k]);
        } else {
            ++out.removed;
        }
    }
    std::sort(out.train.begin(), out.train.end());
    std::sort(out.test.begin(), out.test.end());
    if (out.train.empty()) fail(ErrorKind::data, "unseen_split: empty training partition");
    if (out.test.empty()) {
        fail(ErrorKind::data, "unseen_split: no test record has max overlap <= " + std::to_string(t_h) + " (" +
                                  std::to_string(out.removed) + " removed)");
    }
    return out;
}

/// Seeded train/test split; test records whose max title overlap with any
/// training title exceeds t_h are dropped.
inline UnseenSplit unseen_split(const std::vector<ProductRecord>& records, Real train_fraction, Real t_h = 0.2,
                                std::uint64_t seed = 1) {
    if (!(t_h > 0 && t_h <= 1)) fail(ErrorKind::config, "unseen_split: t_h must lie in (0,1]");
    if (!(train_fraction > 0 && train_fraction < 1)) fail(ErrorKind::config, "unseen_split: train_fraction must lie in (0,1)");
    std::vector<std::size_t> order(records.size());
    std::iota(order.begin(), order.end(), 0);
    Rng rng(seed);
    rng.shuffle(order);
    const auto n_train = static_cast<std::size_t>(std::round(train_fraction * static_cast<Real>(records.size())));
    std::vector<std::size_t> train(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_train));
    std::vector<std::size_t> candidates(order.begin() + static_cast<std::ptrdiff_t>(n_train), order.end());
    return unseen_filter(records, std::move(train), candidates, t_h);
}

// ---------------------------------------------------------------------------
// Feature-importance overlap
// ---------------------------------------------------------------------------

struct ImportanceOverlapConfig {
    std::size_t runs = 5;
    Real quartile = 0.25;
    Real subsample = 0.5;
    ForestConfig forest;
    std::uint64_t seed = 1;

    void validate() const {
        if (runs < 2) fail(ErrorKind::config, "importance_overlap: runs must be >= 2");
        if (!(quartile > 0 && quartile <= 1)) fail(ErrorKind::config, "importance_overlap: quartile must lie in (0,1]");
        if (!(subsample > 0 && subsample <= 1)) fail(ErrorKind::config, "importance_overlap: subsample must lie in (0,1]");
        forest.validate();
    }
};

struct StableFeatures {
    std::vector<std::size_t> features;               // in the top set of every run, ascending
    std::vector<std::vector<std::size_t>> run_tops;  // per-run top sets, ascending
};

inline std::size_t top_set_size(std::size_t n_features, Real quartile) {
    return std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(quartile * static_cast<Real>(n_features))));
}

/// Indices of the `k` largest entries; ties broken by lower index.
inline std::vector<std::size_t> top_k(const Vec& v, std::size_t k) {
    std::vector<std::size_t> idx(static_cast<std::size_t>(v.size()));
    std::iota(idx.begin(), idx.end(), 0);
    std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v(static_cast<Eigen::Index>(a)) > v(static_cast<Eigen::Index>(b)); });
    idx.resize(std::min(k, idx.size()));
    std::sort(idx.begin(), idx.end());
    return idx;
}

/// Trains `runs` forests on seeded random subsets and keeps the features that
/// rank in the top quartile of importance in every run.
inline StableFeatures importance_overlap(const Mat& x, std::span<const int> y, const ImportanceOverlapConfig& cfg = {}) {
    cfg.validate();
    if (static_cast<std::size_t>(x.rows()) != y.size() || x.rows() < 2) fail(ErrorKind::data, "importance_overlap: bad data shape");
    bool any_varying = false;
    for (Eigen::Index j = 0; j < x.cols() && !any_varying; ++j) any_varying = x.col(j).maxCoeff() > x.col(j).minCoeff();
    if (!any_varying) fail(ErrorKind::data, "importance_overlap: every feature is constant");

    const std::size_t k = top_set_size(static_cast<std::size_t>(x.cols()), cfg.quartile);
    const auto n_sub = std::max<std::size_t>(2, static_cast<std::size_t>(cfg.subsample * static_cast<Real>(y.size())));
    StableFeatures out;
    std::map<std::size_t, std::size_t> counts;
    for (std::size_t run = 0; run < cfg.runs; ++run) {
        Rng rng(derive_seed(cfg.seed, run));
        std::vector<std::size_t> rows(y.size());
        std::iota(rows.begin(), rows.end(), 0);
        rng.shuffle(rows);
        rows.resize(std::min(n_sub, rows.size()));
        std::vector<int> ys;
        for (auto r : rows) ys.push_back(y[r]);
        ForestConfig fc = cfg.forest;
        fc.seed = derive_seed(cfg.seed, 1000 + run);
        const auto forest = train_rf(select_rows(x, rows), ys, fc);
        auto top = top_k(forest.importance, k);
        for (auto f : top) ++counts[f];
        out.run_tops.push_back(std::move(top));
    }
    for (const auto& [f, c] : counts) {
        if (c == cfg.runs) out.features.push_back(f);
    }
    return out;
}

inline std::size_t intersection_size(const std::vector<std::size_t>& a, const std::vector<std::size_t>& b) {
    std::vector<std::size_t> out;
    std::set_intersection(a.begin(), a.end(), b.begin(), b.end(), std::back_inserter(out));
    return out.size();
}

// ---------------------------------------------------------------------------
// Reports
// ---------------------------------------------------------------------------

struct EvalRow {
    std::string task;
    std::string representation;
    std::string classifier;
    std::size_t fold = 0;
    std::string metric;
    Real value = 0;
};

inline std::string report_csv(const std::vector<EvalRow>& rows) {
    std::ostringstream out;
    out << "task,representation,classifier,fold,metric,value\n" << std::setprecision(17);
    for (const auto& r : rows) {
        out << r.task << ',' << r.representation << ',' << r.classifier << ',' << r.fold << ',' << r.metric << ',' << r.value << '\n';
    }
    return out.str();
}

/// Mean metric per (task, representation, classifier), as a percentage change
/// relative to the baseline representation with logistic regression.
inline std::string summary_table(const std::vector<EvalRow>& rows, const std::string& baseline = "tfidf",
                                 const std::string& metric = "auc") {
    std::map<std::string, std::map<std::string, std::pair<Real, std::size_t>>> agg;
    std::vector<std::string> columns;
    std::vector<std::string> tasks;
    for (const auto& r : rows) {
        if (r.metric != metric) continue;
        const std::string col = r.representation + "-" + r.classifier;
        if (std::find(columns.begin(), columns.end(), col) == columns.end()) columns.push_back(col);
        if (std::find(tasks.begin(), tasks.end(), r.task) == tasks.end()) tasks.push_back(r.task);
        auto& cell = agg[r.task][col];
        cell.first += r.value;
        cell.second += 1;
    }
    const std::string base_col = baseline + "-logreg";
    std::ostringstream out;
    out << "task";
    for (const auto& c : columns) {
        if (c != base_col) out << '\t' << c;
    }
    out << "\t" << base_col << " (absolute)\n";
    for (const auto& t : tasks) {
        out << t;
        const auto it = agg[t].find(base_col);
        const bool has_base = it != agg[t].end();
        const Real base = has_base ? it->second.first / static_cast<Real>(it->second.second) : 0;
        for (const auto& c : columns) {
            if (c == base_col) continue;
            const auto cell = agg[t].find(c);
            out << '\t';
            if (cell == agg[t].end() || !has_base || base == 0) {
                out << "n/a";
                continue;
            }
            const Real v = cell->second.first / static_cast<Real>(cell->second.second);
            const Real pct = 100.0 * (v - base) / base;
            out << (pct > 0 ? "+" : "") << std::fixed << std::setprecision(2) << pct << '%' << std::defaultfloat;
        }
        out << '\t';
        if (has_base) {
            out << std::fixed << std::setprecision(4) << base << std::defaultfloat;
        } else {
            out << "n/a";
        }
        out << '\n';
    }
    return out.str();
}

}  // namespace mrnet

#endif  // MRNET_ANALYTICS_HPP
