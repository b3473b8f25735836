#ifndef MRNET_CROSSLINGUAL_HPP
#define MRNET_CROSSLINGUAL_HPP

#include "mrnet/io.hpp"
#include "mrnet/numerics.hpp"

#include <Eigen/QR>

#include <span>
#include <sstream>
#include <unordered_set>
#include <utility>
#include <vector>

namespace mrnet {

/// One product seen in two regions: `a` is the reference region, `b` the other.
struct PairedEmbedding {
    std::string id;
    Vec a;
    Vec b;
};

struct CrossExample {
    Vec input;
    Vec target;
};

/// Three examples per pair: [a,0]->[0,b], [0,b]->[a,0], [a,b]->[a,b]; shuffled under `seed`.
inline std::vector<CrossExample> make_pairs_dataset(std::span<const PairedEmbedding> pairs, std::uint64_t seed) {
    if (pairs.empty()) fail(ErrorKind::data, "make_pairs_dataset: no pairs");
    const Eigen::Index m = pairs.front().a.size();
    if (m == 0) fail(ErrorKind::shape, "make_pairs_dataset: empty vectors");
    std::vector<CrossExample> out;
    out.reserve(3 * pairs.size());
    for (const auto& p : pairs) {
        if (p.a.size() != m || p.b.size() != m) {
            fail(ErrorKind::shape, "make_pairs_dataset: pair " + p.id + " has mismatched dimensions");
        }
        if (!p.a.allFinite() || !p.b.allFinite()) fail(ErrorKind::data, "make_pairs_dataset: pair " + p.id + " is not finite");
        Vec a0 = Vec::Zero(2 * m), b0 = Vec::Zero(2 * m), ab(2 * m);
        a0.head(m) = p.a;
        b0.tail(m) = p.b;
        ab << p.a, p.b;
        out.push_back({a0, b0});
        out.push_back({b0, a0});
        out.push_back({ab, ab});
    }
    Rng rng(seed);
    rng.shuffle(out);
    return out;
}

struct CrossAEConfig {
    std::size_t hidden = 0;  // 0 means the per-region dimension
    std::size_t batch_size = 256;
    std::size_t steps = 2000;
    Real init_scale = 0.08;
    std::uint64_t seed = 1;
    AdamConfig adam;

    void validate() const {
        if (batch_size < 1) fail(ErrorKind::config, "cross_ae: batch_size must be >= 1");
        if (!(init_scale >= 0)) fail(ErrorKind::config, "cross_ae: init_scale must be >= 0");
        adam.validate();
    }
};

/// tanh hidden layer, linear output over the concatenated [a, b] space.
class CrossAEModel {
public:
    CrossAEModel() = default;

    CrossAEModel(std::size_t region_dim, std::size_t hidden_dim) {
        if (region_dim == 0 || hidden_dim == 0) fail(ErrorKind::shape, "cross_ae: dimensions must be positive");
        const auto io = static_cast<Eigen::Index>(2 * region_dim), hid = static_cast<Eigen::Index>(hidden_dim);
        enc_w_ = store_.add("xae.enc.w", hid, io);
        enc_b_ = store_.add("xae.enc.b", hid, 1);
        dec_w_ = store_.add("xae.dec.w", io, hid);
        dec_b_ = store_.add("xae.dec.b", io, 1);
    }

    std::size_t region_dim() const { return static_cast<std::size_t>(store_.value(enc_w_).cols() / 2); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(store_.value(enc_w_).rows()); }

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    std::size_t enc_w() const { return enc_w_; }
    std::size_t enc_b() const { return enc_b_; }
    std::size_t dec_w() const { return dec_w_; }
    std::size_t dec_b() const { return dec_b_; }

    Vec forward(const Vec& x) const {
        require_shape(static_cast<std::size_t>(x.size()) == 2 * region_dim(), "cross_ae: input dimension mismatch");
        const Vec h = affine(store_.value(enc_w_), x, store_.value(enc_b_).col(0)).array().tanh().matrix();
        return affine(store_.value(dec_w_), h, store_.value(dec_b_).col(0));
    }

private:
    ParamStore store_;
    std::size_t enc_w_ = 0, enc_b_ = 0, dec_w_ = 0, dec_b_ = 0;
};

/// Mean over the batch of the per-example mean squared error. Rows of `x` and
/// `y` are examples. Accumulates gradients into the model's store.
inline Real cross_ae_loss_and_grad(CrossAEModel& model, const Mat& x, const Mat& y) {
    auto& s = model.params();
    require_shape(x.cols() == s.value(model.enc_w()).cols() && y.cols() == x.cols() && y.rows() == x.rows(),
                  "cross_ae: batch dimension mismatch");
    if (x.rows() == 0) fail(ErrorKind::data, "cross_ae: empty batch");
    const Real B = static_cast<Real>(x.rows()), D = static_cast<Real>(x.cols());
    Mat pre = x * s.value(model.enc_w()).transpose();
    pre.rowwise() += s.value(model.enc_b()).col(0).transpose();
    const Mat h = pre.array().tanh().matrix();
    Mat out = h * s.value(model.dec_w()).transpose();
    out.rowwise() += s.value(model.dec_b()).col(0).transpose();
    const Mat diff = out - y;
    const Real loss = diff.squaredNorm() / (B * D);
    if (!std::isfinite(loss)) fail(ErrorKind::divergence, "cross_ae: non-finite loss");

    const Mat d_out = diff * (2.0 / (B * D));
    s.grad(model.dec_w()) += d_out.transpose() * h;
    s.grad(model.dec_b()).col(0) += d_out.colwise().sum().transpose();
    const Mat d_pre = ((d_out * s.value(model.dec_w())).array() * (1.0 - h.array().square())).matrix();
    s.grad(model.enc_w()) += d_pre.transpose() * x;
    s.grad(model.enc_b()).col(0) += d_pre.colwise().sum().transpose();
    return loss;
}

struct CrossAETrainResult {
    CrossAEModel model;
    std::vector<Real> losses;  // mini-batch loss per step
};

/// Adam on random mini-batches; the decoder starts at zero, so the first prediction is zero.
inline CrossAETrainResult train_multimodal_ae(std::span<const CrossExample> data, const CrossAEConfig& cfg) {
    cfg.validate();
    if (data.empty()) fail(ErrorKind::data, "cross_ae: empty dataset");
    const Eigen::Index io = data.front().input.size();
    if (io == 0 || io % 2 != 0) fail(ErrorKind::shape, "cross_ae: example dimension must be even and positive");
    for (const auto& e : data) {
        require_shape(e.input.size() == io && e.target.size() == io, "cross_ae: inconsistent example dimensions");
    }
    const auto m = static_cast<std::size_t>(io / 2);
    CrossAETrainResult res{CrossAEModel(m, cfg.hidden == 0 ? m : cfg.hidden), {}};
    auto& model = res.model;
    Rng init(derive_seed(cfg.seed, 0));
    fill_uniform(model.params().value(model.enc_w()), init, -cfg.init_scale, cfg.init_scale);

    std::vector<std::size_t> order(data.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    BatchSampler sampler(std::move(order), derive_seed(cfg.seed, 1));
    const std::size_t B = std::min(cfg.batch_size, data.size());
    Mat x(static_cast<Eigen::Index>(B), io), y(static_cast<Eigen::Index>(B), io);
    res.losses.reserve(cfg.steps);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        const auto idx = sampler.next(B);
        for (std::size_t r = 0; r < B; ++r) {
            x.row(static_cast<Eigen::Index>(r)) = data[idx[r]].input.transpose();
            y.row(static_cast<Eigen::Index>(r)) = data[idx[r]].target.transpose();
        }
        res.losses.push_back(cross_ae_loss_and_grad(model, x, y));
        adam_step(model.params(), cfg.adam);
    }
    if (!all_finite(model.params())) fail(ErrorKind::divergence, "cross_ae: parameters became non-finite");
    return res;
}

enum class CrossDirection { b_to_a, a_to_b };

/// Places `v` in the source block, zeros the other, and reads the target block of the output.
inline Vec project_cross(const CrossAEModel& model, const Vec& v, CrossDirection dir = CrossDirection::b_to_a) {
    const auto m = static_cast<Eigen::Index>(model.region_dim());
    require_shape(v.size() == m, "project_cross: vector dimension mismatch");
    const bool from_b = dir == CrossDirection::b_to_a;
    Vec x = Vec::Zero(2 * m);
    x.segment(from_b ? m : 0, m) = v;
    return model.forward(x).segment(from_b ? 0 : m, m);
}

/// Fraction of pairs whose projected vector has its own counterpart as the
/// Euclidean nearest neighbour among all counterparts (lowest index wins ties).
inline Real top1_retrieval(const CrossAEModel& model, std::span<const PairedEmbedding> pairs,
                           CrossDirection dir = CrossDirection::b_to_a) {
    if (pairs.empty()) fail(ErrorKind::data, "top1_retrieval: no pairs");
    const bool from_b = dir == CrossDirection::b_to_a;
    std::size_t hits = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
        const Vec q = project_cross(model, from_b ? pairs[i].b : pairs[i].a, dir);
        std::size_t best = 0;
        Real best_d = std::numeric_limits<Real>::infinity();
        for (std::size_t j = 0; j < pairs.size(); ++j) {
            const Real d = (q - (from_b ? pairs[j].a : pairs[j].b)).squaredNorm();
            if (d < best_d) {
                best_d = d;
                best = j;
            }
        }
        hits += best == i;
    }
    return static_cast<Real>(hits) / static_cast<Real>(pairs.size());
}

// ---------------------------------------------------------------------------
// Synthetic second region
// ---------------------------------------------------------------------------

/// Haar-distributed orthogonal matrix from the QR factorization of a Gaussian matrix.
inline Mat random_orthogonal(std::size_t n, Rng& rng) {
    if (n == 0) fail(ErrorKind::shape, "random_orthogonal: n must be positive");
    const auto k = static_cast<Eigen::Index>(n);
    Eigen::MatrixXd g(k, k);
    for (Eigen::Index i = 0; i < g.size(); ++i) g.data()[i] = rng.normal();
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
    Eigen::MatrixXd q = qr.householderQ();
    const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
    for (Eigen::Index j = 0; j < k; ++j) {
        if (r(j, j) < 0) q.col(j) *= -1.0;
    }
    return Mat(q);
}

/// Pairs each region-A vector with b = R a + noise, where R is a seeded rotation.
inline std::vector<PairedEmbedding> make_rotated_pairs(const EmbeddingFile& region_a, Real noise, std::uint64_t seed) {
    if (region_a.records.empty()) fail(ErrorKind::data, "make_rotated_pairs: no embeddings");
    if (!(noise >= 0)) fail(ErrorKind::config, "make_rotated_pairs: noise must be >= 0");
    Rng rng(seed);
    const Mat R = random_orthogonal(region_a.dim, rng);
    std::vector<PairedEmbedding> out;
    out.reserve(region_a.records.size());
    for (std::size_t i = 0; i < region_a.records.size(); ++i) {
        const Vec a = region_a.vector(i);
        Vec b = R * a;
        for (Eigen::Index k = 0; k < b.size(); ++k) b(k) += noise * rng.normal();
        out.push_back({region_a.records[i].id, a, b});
    }
    return out;
}

// ---------------------------------------------------------------------------
// Alignment files
// ---------------------------------------------------------------------------

using Alignment = std::vector<std::pair<std::string, std::string>>;

inline std::string format_alignment(const Alignment& rows) {
    std::string out;
    for (const auto& [a, b] : rows) out += a + "\t" + b + "\n";
    return out;
}

/// Parses `idA<TAB>idB` lines. Blank lines are skipped; ids must be unique per side.
inline Alignment parse_alignment(std::string_view text, const std::string& source = "alignment") {
    Alignment out;
    std::unordered_set<std::string> seen_a, seen_b;
    std::size_t line_no = 0, pos = 0;
    while (pos < text.size()) {
        auto nl = text.find('\n', pos);
        if (nl == std::string_view::npos) nl = text.size();
        std::string_view line = text.substr(pos, nl - pos);
        pos = nl + 1;
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        const std::string where = source + " line " + std::to_string(line_no);
        if (tab == std::string_view::npos || line.find('\t', tab + 1) != std::string_view::npos) {
            fail(ErrorKind::data, where + ": expected exactly two tab-separated ids");
        }
        std::string a(line.substr(0, tab)), b(line.substr(tab + 1));
        if (a.empty() || b.empty()) fail(ErrorKind::data, where + ": empty id");
        if (!seen_a.insert(a).second || !seen_b.insert(b).second) fail(ErrorKind::data, where + ": duplicate id");
        out.emplace_back(std::move(a), std::move(b));
    }
    return out;
}

/// Joins two embedding files through an alignment; every aligned id must exist.
inline std::vector<PairedEmbedding> join_pairs(const EmbeddingFile& a, const EmbeddingFile& b, const Alignment& alignment) {
    if (a.dim != b.dim) fail(ErrorKind::data, "join_pairs: region embedding dimensions differ");
    const auto ia = a.id_index(), ib = b.id_index();
    std::vector<PairedEmbedding> out;
    out.reserve(alignment.size());
    for (const auto& [ida, idb] : alignment) {
        auto fa = ia.find(ida);
        auto fb = ib.find(idb);
        if (fa == ia.end()) fail(ErrorKind::data, "join_pairs: id " + ida + " missing from region A");
        if (fb == ib.end()) fail(ErrorKind::data, "join_pairs: id " + idb + " missing from region B");
        out.push_back({ida, a.vector(fa->second), b.vector(fb->second)});
    }
    return out;
}

inline Checkpoint to_checkpoint(const CrossAEModel& model) {
    Checkpoint c;
    c.manifest = {{"kind", "cross_ae"},
                  {"format_version", kCheckpointFormatVersion},
                  {"region_dim", model.region_dim()},
                  {"hidden", model.hidden_dim()}};
    c.add_store(model.params());
    return c;
}

inline CrossAEModel cross_ae_from_checkpoint(const Checkpoint& c) {
    try {
        if (c.manifest.at("kind") != "cross_ae") fail(ErrorKind::data, "checkpoint is not a cross-region autoencoder");
        CrossAEModel model(c.manifest.at("region_dim").get<std::size_t>(), c.manifest.at("hidden").get<std::size_t>());
        c.load_into(model.params());
        return model;
    } catch (const Json::exception& e) {
        fail(ErrorKind::data, std::string("bad cross_ae checkpoint manifest: ") + e.what());
    }
}

}  // namespace mrnet

#endif  // MRNET_CROSSLINGUAL_HPP
