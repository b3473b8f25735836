#ifndef MRNET_EMBEDDINGS_HPP
#define MRNET_EMBEDDINGS_HPP

#include "mrnet/catalog.hpp"
#include "mrnet/numerics.hpp"

#include <cstdio>
#include <iomanip>
#include <string>
#include <vector>

namespace mrnet {

/// Vocabulary-indexed word vectors. Out-of-vocabulary tokens map to zero.
class WordEmbeddingTable {
public:
    WordEmbeddingTable() = default;
    WordEmbeddingTable(Vocab vocab, Mat vectors) : vocab_(std::move(vocab)), vectors_(std::move(vectors)) {
        require_shape(static_cast<std::size_t>(vectors_.rows()) == vocab_.size(), "embedding rows != vocabulary size");
        if (vectors_.cols() <= 0) fail(ErrorKind::config, "word vector dimension must be > 0");
    }

    std::size_t dim() const { return static_cast<std::size_t>(vectors_.cols()); }
    std::size_t size() const { return vocab_.size(); }
    const Vocab& vocab() const { return vocab_; }
    const Mat& vectors() const { return vectors_; }

    Vec lookup(const std::string& token) const {
        if (auto i = vocab_.find(token)) return vectors_.row(static_cast<Eigen::Index>(*i)).transpose();
        return Vec::Zero(vectors_.cols());
    }

    bool contains(const std::string& token) const { return vocab_.find(token).has_value(); }

private:
    Vocab vocab_;
    Mat vectors_;
};

inline Real cosine(const Vec& a, const Vec& b) {
    const Real na = a.norm(), nb = b.norm();
    if (na == 0 || nb == 0) return 0;
    return a.dot(b) / (na * nb);
}

// "|V| d" header, then "token v1 ... vd" per line.
inline std::string format_word_vectors(const WordEmbeddingTable& table) {
    std::ostringstream out;
    out << std::setprecision(17);
    out << table.size() << ' ' << table.dim() << '\n';
    for (std::size_t i = 0; i < table.size(); ++i) {
        out << table.vocab()[i].token;
        for (std::size_t k = 0; k < table.dim(); ++k) out << ' ' << table.vectors()(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k));
        out << '\n';
    }
    return out.str();
}

inline WordEmbeddingTable parse_word_vectors(const std::string& text, const std::string& source = "vectors") {
    std::istringstream in(text);
    std::string header;
    if (!std::getline(in, header)) fail(ErrorKind::data, source + ": missing header");
    std::istringstream hs(header);
    long long n = -1, d = -1;
    if (!(hs >> n >> d) || n < 0 || d <= 0) fail(ErrorKind::data, source + ": bad header '" + header + "'");
    std::vector<VocabEntry> entries;
    Mat vectors(n, d);
    std::string line;
    for (long long i = 0; i < n; ++i) {
        if (!std::getline(in, line)) fail(ErrorKind::data, source + ": expected " + std::to_string(n) + " rows");
        std::istringstream ls(line);
        VocabEntry e;
        if (!(ls >> e.token)) fail(ErrorKind::data, source + ": empty row " + std::to_string(i + 2));
        for (long long k = 0; k < d; ++k) {
            if (!(ls >> vectors(i, k))) fail(ErrorKind::data, source + ": short row at line " + std::to_string(i + 2));
        }
        std::string extra;
        if (ls >> extra) fail(ErrorKind::data, source + ": long row at line " + std::to_string(i + 2));
        entries.push_back(std::move(e));
    }
    if (!vectors.allFinite()) fail(ErrorKind::data, source + ": non-finite value");
    return WordEmbeddingTable(Vocab(std::move(entries)), std::move(vectors));
}

inline void save_word_vectors(const std::filesystem::path& path, const WordEmbeddingTable& table) {
    write_file_atomic(path, format_word_vectors(table));
}

inline WordEmbeddingTable load_word_vectors(const std::filesystem::path& path) {
    return parse_word_vectors(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Skip-gram with negative sampling
// ---------------------------------------------------------------------------

struct Word2VecConfig {
    std::size_t dim = 128;
    std::size_t min_count = 10;
    std::size_t window = 5;
    std::size_t negatives = 5;
    std::size_t epochs = 5;
    Real lr = 0.025;
    Real min_lr = 0.025 * 1e-4;
    Real max_row_norm = 100.0;
    std::uint64_t seed = 1;
};

struct Word2VecResult {
    WordEmbeddingTable table;
    std::vector<Real> epoch_losses;  // mean loss per (center, context) pair
};

/// Loss of one positive pair and its negatives: -log s(u_c.v) - sum log s(-u_n.v).
inline Real sgns_pair_loss(const Vec& center, const Vec& context, const std::vector<Vec>& negatives) {
    Real loss = -std::log(sigmoid(context.dot(center)));
    for (const auto& n : negatives) loss -= std::log(sigmoid(-n.dot(center)));
    return loss;
}

namespace detail {

/// Samples from counts^0.75 by inverting the cumulative distribution.
class UnigramSampler {
public:
    explicit UnigramSampler(const Vocab& vocab) {
        cdf_.reserve(vocab.size());
        Real acc = 0;
        for (const auto& e : vocab.entries()) {
            acc += std::pow(static_cast<Real>(e.count), 0.75);
            cdf_.push_back(acc);
        }
        for (auto& c : cdf_) c /= acc;
    }

    std::size_t sample(Rng& rng) const {
        const Real u = rng.uniform();
        auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
        return std::min<std::size_t>(static_cast<std::size_t>(it - cdf_.begin()), cdf_.size() - 1);
    }

private:
    std::vector<Real> cdf_;
};

}  // namespace detail

inline Word2VecResult train_word2vec(const std::vector<ProductRecord>& records, const Word2VecConfig& cfg) {
    if (cfg.dim == 0 || cfg.window == 0 || cfg.epochs == 0) fail(ErrorKind::config, "word2vec: dim, window and epochs must be > 0");
    Vocab vocab = build_vocab(records, cfg.min_count);
    if (vocab.empty()) fail(ErrorKind::data, "word2vec: empty vocabulary after min_count filtering");

    std::vector<std::vector<std::size_t>> corpus;
    std::size_t total_words = 0;
    for (const auto& r : records) {
        std::vector<std::size_t> sent;
        for (const auto& t : r.tokens) {
            if (auto i = vocab.find(t)) sent.push_back(*i);
        }
        total_words += sent.size();
        if (sent.size() >= 2) corpus.push_back(std::move(sent));
    }

    const auto n = static_cast<Eigen::Index>(vocab.size());
    const auto d = static_cast<Eigen::Index>(cfg.dim);
    Rng rng(cfg.seed);
    Mat in(n, d);
    fill_uniform(in, rng, -0.5 / static_cast<Real>(d), 0.5 / static_cast<Real>(d));
    Mat out = Mat::Zero(n, d);
    detail::UnigramSampler sampler(vocab);

    const Real total = static_cast<Real>(std::max<std::size_t>(1, total_words * cfg.epochs));
    std::size_t processed = 0;
    std::vector<Real> epoch_losses;
    Vec grad_center(d);

    for (std::size_t epoch = 0; epoch < cfg.epochs; ++epoch) {
        Real loss_sum = 0;
        std::size_t pairs = 0;
        const auto order = rng.permutation(corpus.size());
        for (std::size_t si : order) {
            const auto& sent = corpus[si];
            for (std::size_t pos = 0; pos < sent.size(); ++pos, ++processed) {
                const Real lr = std::max(cfg.min_lr, cfg.lr * (1.0 - static_cast<Real>(processed) / total));
                const std::size_t reach = 1 + rng.index(cfg.window);
                const std::size_t lo = pos >= reach ? pos - reach : 0;
                const std::size_t hi = std::min(sent.size() - 1, pos + reach);
                const auto center = static_cast<Eigen::Index>(sent[pos]);
                for (std::size_t cpos = lo; cpos <= hi; ++cpos) {
                    if (cpos == pos) continue;
                    const auto context = static_cast<Eigen::Index>(sent[cpos]);
                    grad_center.setZero();
                    // Positive pair, then k negatives; label 1 for the positive.
                    for (std::size_t k = 0; k <= cfg.negatives; ++k) {
                        Eigen::Index target = context;
                        Real label = 1.0;
                        if (k > 0) {
                            target = static_cast<Eigen::Index>(sampler.sample(rng));
                            if (target == context) continue;
                            label = 0.0;
                        }
                        const Real score = in.row(center).dot(out.row(target));
                        const Real s = sigmoid(score);
                        loss_sum -= label > 0 ? std::log(std::max(s, 1e-300)) : std::log(std::max(1 - s, 1e-300));
                        const Real g = lr * (label - s);
                        grad_center += g * out.row(target).transpose();
                        out.row(target) += g * in.row(center);
                    }
                    in.row(center) += grad_center.transpose();
                    ++pairs;
                }
            }
        }
        if (!in.allFinite() || !out.allFinite()) {
            fail(ErrorKind::divergence, "word2vec: non-finite vectors in epoch " + std::to_string(epoch + 1));
        }
        for (Eigen::Index i = 0; i < n; ++i) {
            const Real norm = in.row(i).norm();
            if (norm > cfg.max_row_norm) in.row(i) *= cfg.max_row_norm / norm;
        }
        epoch_losses.push_back(pairs ? loss_sum / static_cast<Real>(pairs) : 0.0);
    }
    return {WordEmbeddingTable(std::move(vocab), std::move(in)), std::move(epoch_losses)};
}

}  // namespace mrnet

#endif  // MRNET_EMBEDDINGS_HPP
