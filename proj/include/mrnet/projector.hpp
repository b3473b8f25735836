#ifndef MRNET_PROJECTOR_HPP
#define MRNET_PROJECTOR_HPP

#include "mrnet/io.hpp"
#include "mrnet/numerics.hpp"

#include <map>
#include <span>
#include <vector>

namespace mrnet {

/// Places a group-specific vector into block g (1-based) of a G*d vector of zeros.
inline Vec block_embed(std::size_t g, const Vec& v, std::size_t G, std::size_t d) {
    if (G == 0 || d == 0) fail(ErrorKind::shape, "block_embed: G and d must be positive");
    if (g < 1 || g > G) fail(ErrorKind::shape, "block_embed: group " + std::to_string(g) + " outside [1, " + std::to_string(G) + "]");
    require_shape(static_cast<std::size_t>(v.size()) == d, "block_embed: len(v) != d");
    Vec out = Vec::Zero(static_cast<Eigen::Index>(G * d));
    out.segment(static_cast<Eigen::Index>((g - 1) * d), static_cast<Eigen::Index>(d)) = v;
    return out;
}

struct SparseAEConfig {
    Real rho = 0.05;
    Real beta = 0.1;
    std::size_t batch_size = 64;
    std::size_t steps = 2000;
    Real init_scale = 0.08;
    bool balance_groups = true;
    std::uint64_t seed = 1;
    AdamConfig adam;

    void validate() const {
        if (!(rho > 0 && rho < 1)) fail(ErrorKind::config, "sparse_ae: rho must lie in (0,1)");
        if (!(beta >= 0) || !std::isfinite(beta)) fail(ErrorKind::config, "sparse_ae: beta must be >= 0");
        if (batch_size < 1) fail(ErrorKind::config, "sparse_ae: batch_size must be >= 1");
        if (!(init_scale >= 0)) fail(ErrorKind::config, "sparse_ae: init_scale must be >= 0");
        adam.validate();
    }
};

/// Sigmoid encoder to a hidden layer of width 2d, linear decoder back to G*d.
class SparseAEModel {
public:
    SparseAEModel() = default;

    SparseAEModel(std::size_t input_dim, std::size_t hidden_dim, Real rho, Real beta)
        : rho_(rho), beta_(beta) {
        if (input_dim == 0 || hidden_dim == 0) fail(ErrorKind::shape, "sparse_ae: dimensions must be positive");
        if (!(rho > 0 && rho < 1)) fail(ErrorKind::config, "sparse_ae: rho must lie in (0,1)");
        const auto in = static_cast<Eigen::Index>(input_dim), hid = static_cast<Eigen::Index>(hidden_dim);
        enc_w_ = store_.add("sae.enc.w", hid, in);
        enc_b_ = store_.add("sae.enc.b", hid, 1);
        dec_w_ = store_.add("sae.dec.w", in, hid);
        dec_b_ = store_.add("sae.dec.b", in, 1);
    }

    std::size_t input_dim() const { return static_cast<std::size_t>(store_.value(enc_w_).cols()); }
    std::size_t hidden_dim() const { return static_cast<std::size_t>(store_.value(enc_w_).rows()); }
    Real rho() const { return rho_; }
    Real beta() const { return beta_; }

    ParamStore& params() { return store_; }
    const ParamStore& params() const { return store_; }
    std::size_t enc_w() const { return enc_w_; }
    std::size_t enc_b() const { return enc_b_; }
    std::size_t dec_w() const { return dec_w_; }
    std::size_t dec_b() const { return dec_b_; }

    Vec hidden(const Vec& x) const {
        require_shape(static_cast<std::size_t>(x.size()) == input_dim(), "sparse_ae: input dimension mismatch");
        return sigmoid(affine(store_.value(enc_w_), x, store_.value(enc_b_).col(0)));
    }

    Vec reconstruct(const Vec& x) const {
        return affine(store_.value(dec_w_), hidden(x), store_.value(dec_b_).col(0));
    }

private:
    ParamStore store_;
    std::size_t enc_w_ = 0, enc_b_ = 0, dec_w_ = 0, dec_b_ = 0;
    Real rho_ = 0.05, beta_ = 0.1;
};

/// The group-agnostic embedding: the hidden activation for a block vector.
inline Vec project_agnostic(const SparseAEModel& model, const Vec& x) { return model.hidden(x); }

struct SparseAELoss {
    Real total = 0;
    Real reconstruction = 0;
    Real sparsity = 0;
    Vec mean_activation;
};

/// Mean reconstruction error plus beta * KL(rho || batch-mean activation).
/// Accumulates gradients into the model's store.
inline SparseAELoss sparse_ae_loss_and_grad(SparseAEModel& model, std::span<const Vec* const> batch) {
    if (batch.empty()) fail(ErrorKind::data, "sparse_ae: empty batch");
    auto& s = model.params();
    const Mat& we = s.value(model.enc_w());
    const Mat& wd = s.value(model.dec_w());
    const Vec be = s.value(model.enc_b()).col(0), bd = s.value(model.dec_b()).col(0);
    const Real B = static_cast<Real>(batch.size());

    std::vector<Vec> acts, douts;
    acts.reserve(batch.size());
    douts.reserve(batch.size());
    SparseAELoss out;
    out.mean_activation = Vec::Zero(we.rows());
    for (const Vec* x : batch) {
        require_shape(x->size() == we.cols(), "sparse_ae: input dimension mismatch");
        Vec a = sigmoid(affine(we, *x, be));
        auto sq = squared_loss(affine(wd, a, bd), *x);
        out.reconstruction += sq.loss / B;
        douts.push_back(sq.grad / B);
        out.mean_activation += a / B;
        acts.push_back(std::move(a));
    }
    auto kl = kl_sparsity(out.mean_activation, model.rho());
    out.sparsity = kl.loss;
    out.total = out.reconstruction + model.beta() * kl.loss;
    if (!std::isfinite(out.total)) fail(ErrorKind::divergence, "sparse_ae: non-finite loss");

    const Vec d_mean = model.beta() * kl.grad / B;
    for (std::size_t i = 0; i < batch.size(); ++i) {
        const Vec& a = acts[i];
        auto dec = affine_backward(wd, a, douts[i]);
        s.grad(model.dec_w()) += dec.dw;
        s.grad(model.dec_b()).col(0) += dec.db;
        const Vec dz = ((dec.dx + d_mean).array() * a.array() * (1.0 - a.array())).matrix();
        auto enc = affine_backward(we, *batch[i], dz);
        s.grad(model.enc_w()) += enc.dw;
        s.grad(model.enc_b()).col(0) += enc.db;
    }
    return out;
}

struct SparseAETrainResult {
    SparseAEModel model;
    std::vector<Real> losses;  // total loss per step
};

/// Trains on block vectors. When `groups` is non-empty and balancing is on,
/// each batch draws its examples group-uniformly.
inline SparseAETrainResult train_sparse_ae(std::span<const Vec> inputs, std::span<const std::size_t> groups,
                                           std::size_t d, const SparseAEConfig& cfg) {
    cfg.validate();
    if (inputs.empty()) fail(ErrorKind::data, "sparse_ae: empty training set");
    if (d == 0) fail(ErrorKind::config, "sparse_ae: d must be positive");
    if (!groups.empty() && groups.size() != inputs.size()) fail(ErrorKind::data, "sparse_ae: groups/inputs length mismatch");
    const auto D = static_cast<std::size_t>(inputs.front().size());
    for (const auto& x : inputs) {
        require_shape(static_cast<std::size_t>(x.size()) == D, "sparse_ae: inconsistent input dimensions");
        if (!x.allFinite()) fail(ErrorKind::data, "sparse_ae: non-finite input vector");
    }

    SparseAETrainResult res{SparseAEModel(D, 2 * d, cfg.rho, cfg.beta), {}};
    auto& model = res.model;
    Rng init(derive_seed(cfg.seed, 0));
    fill_uniform(model.params().value(model.enc_w()), init, -cfg.init_scale, cfg.init_scale);

    std::map<std::size_t, std::vector<std::size_t>> by_group;
    if (cfg.balance_groups && !groups.empty()) {
        for (std::size_t i = 0; i < inputs.size(); ++i) by_group[groups[i]].push_back(i);
    } else {
        for (std::size_t i = 0; i < inputs.size(); ++i) by_group[0].push_back(i);
    }
    std::vector<BatchSampler> samplers;
    std::uint64_t stream = 100;
    for (auto& [g, items] : by_group) samplers.emplace_back(items, derive_seed(cfg.seed, stream++));
    Rng group_rng(derive_seed(cfg.seed, 1));

    res.losses.reserve(cfg.steps);
    std::vector<const Vec*> batch(cfg.batch_size);
    for (std::size_t step = 0; step < cfg.steps; ++step) {
        for (auto& slot : batch) {
            auto& sampler = samplers[samplers.size() == 1 ? 0 : group_rng.index(samplers.size())];
            slot = &inputs[sampler.next(1)[0]];
        }
        auto loss = sparse_ae_loss_and_grad(model, batch);
        res.losses.push_back(loss.total);
        adam_step(model.params(), cfg.adam);
    }
    if (!all_finite(model.params())) fail(ErrorKind::divergence, "sparse_ae: parameters became non-finite");
    return res;
}

inline SparseAETrainResult train_sparse_ae(std::span<const Vec> inputs, std::size_t d, const SparseAEConfig& cfg) {
    return train_sparse_ae(inputs, {}, d, cfg);
}

inline Checkpoint to_checkpoint(const SparseAEModel& model) {
    Checkpoint c;
    c.manifest = {{"kind", "sparse_ae"},
                  {"format_version", kCheckpointFormatVersion},
                  {"input_dim", model.input_dim()},
                  {"hidden", model.hidden_dim()},
                  {"rho", model.rho()},
                  {"beta", model.beta()}};
    c.add_store(model.params());
    return c;
}

inline SparseAEModel sparse_ae_from_checkpoint(const Checkpoint& c) {
    try {
        if (c.manifest.at("kind") != "sparse_ae") fail(ErrorKind::data, "checkpoint is not a sparse autoencoder");
        SparseAEModel model(c.manifest.at("input_dim").get<std::size_t>(), c.manifest.at("hidden").get<std::size_t>(),
                            c.manifest.at("rho").get<Real>(), c.manifest.at("beta").get<Real>());
        c.load_into(model.params());
        return model;
    } catch (const Json::exception& e) {
        fail(ErrorKind::data, std::string("bad sparse_ae checkpoint manifest: ") + e.what());
    }
}

}  // namespace mrnet

#endif  // MRNET_PROJECTOR_HPP
