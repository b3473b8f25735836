#ifndef MRNET_ENCODER_HPP
#define MRNET_ENCODER_HPP

#include "mrnet/numerics.hpp"

#include <span>
#include <string>
#include <vector>

namespace mrnet {

enum class CellType { lstm, rnn };

inline const char* to_string(CellType c) { return c == CellType::lstm ? "lstm" : "rnn"; }

inline CellType parse_cell_type(const std::string& s) {
    if (s == "lstm") return CellType::lstm;
    if (s == "rnn") return CellType::rnn;
    fail(ErrorKind::config, "unknown cell type '" + s + "'");
}

/// Weights of one recurrent direction. LSTM rows are stacked as gates i, f, g, o
/// (4h rows); a vanilla RNN cell has h rows.
struct CellWeights {
    const Mat& w_in;   // rows x input_dim
    const Mat& w_rec;  // rows x h
    const Mat& bias;   // rows x 1
};

struct CellGrads {
    Mat& w_in;
    Mat& w_rec;
    Mat& bias;
};

struct RecurrentState {
    Vec h;
    Vec c;

    static RecurrentState zeros(Eigen::Index hidden) { return {Vec::Zero(hidden), Vec::Zero(hidden)}; }
};

/// Everything the backward pass needs from one step.
struct StepCache {
    Vec x;
    Vec h_prev;
    Vec c_prev;
    Vec gates;  // activated: [i, f, g, o] for LSTM, tanh(z) for RNN
    Vec c;
    Vec tanh_c;
    Vec h;
};

inline RecurrentState lstm_step(const CellWeights& w, const Vec& x, const RecurrentState& s, StepCache* cache = nullptr) {
    const Eigen::Index h = s.h.size();
    require_shape(w.w_in.rows() == 4 * h && w.w_rec.rows() == 4 * h && w.bias.rows() == 4 * h, "lstm_step: gate rows != 4h");
    require_shape(w.w_in.cols() == x.size(), "lstm_step: input width");
    require_shape(w.w_rec.cols() == h && s.c.size() == h, "lstm_step: state width");
    Vec z = w.w_in * x + w.w_rec * s.h + w.bias.col(0);
    Vec gates(4 * h);
    for (Eigen::Index k = 0; k < h; ++k) {
        gates(k) = sigmoid(z(k));
        gates(h + k) = sigmoid(z(h + k));
        gates(2 * h + k) = std::tanh(z(2 * h + k));
        gates(3 * h + k) = sigmoid(z(3 * h + k));
    }
    RecurrentState next;
    next.c = gates.segment(h, h).cwiseProduct(s.c) + gates.segment(0, h).cwiseProduct(gates.segment(2 * h, h));
    Vec tanh_c = next.c.array().tanh().matrix();
    next.h = gates.segment(3 * h, h).cwiseProduct(tanh_c);
    if (cache) *cache = {x, s.h, s.c, std::move(gates), next.c, std::move(tanh_c), next.h};
    return next;
}

/// Literal Elman recurrence h_t = tanh(W x_t + U h_{t-1} + b); the cell slot stays zero.
inline RecurrentState rnn_step(const CellWeights& w, const Vec& x, const RecurrentState& s, StepCache* cache = nullptr) {
    const Eigen::Index h = s.h.size();
    require_shape(w.w_in.rows() == h && w.w_rec.rows() == h && w.bias.rows() == h, "rnn_step: rows != h");
    require_shape(w.w_in.cols() == x.size() && w.w_rec.cols() == h, "rnn_step: input width");
    Vec a = (w.w_in * x + w.w_rec * s.h + w.bias.col(0)).array().tanh().matrix();
    RecurrentState next{a, Vec::Zero(h)};
    if (cache) *cache = {x, s.h, s.c, a, next.c, Vec::Zero(h), a};
    return next;
}

struct StepInputGrads {
    Vec dx;
    Vec dh_prev;
    Vec dc_prev;
};

/// Accumulates parameter gradients for one LSTM step given dL/dh_t and dL/dc_t.
inline StepInputGrads lstm_step_backward(const CellWeights& w, const StepCache& k, const Vec& dh, const Vec& dc, CellGrads g) {
    const Eigen::Index h = dh.size();
    const auto i = k.gates.segment(0, h).array();
    const auto f = k.gates.segment(h, h).array();
    const auto gg = k.gates.segment(2 * h, h).array();
    const auto o = k.gates.segment(3 * h, h).array();
    const auto tc = k.tanh_c.array();

    const Eigen::ArrayXd dc_total = dc.array() + dh.array() * o * (1 - tc * tc);
    Vec dz(4 * h);
    dz.segment(0, h) = (dc_total * gg * i * (1 - i)).matrix();
    dz.segment(h, h) = (dc_total * k.c_prev.array() * f * (1 - f)).matrix();
    dz.segment(2 * h, h) = (dc_total * i * (1 - gg * gg)).matrix();
    dz.segment(3 * h, h) = (dh.array() * tc * o * (1 - o)).matrix();

    g.w_in.noalias() += dz * k.x.transpose();
    g.w_rec.noalias() += dz * k.h_prev.transpose();
    g.bias.col(0) += dz;
    return {w.w_in.transpose() * dz, w.w_rec.transpose() * dz, (dc_total * f).matrix()};
}

inline StepInputGrads rnn_step_backward(const CellWeights& w, const StepCache& k, const Vec& dh, CellGrads g) {
    const Vec dz = (dh.array() * (1 - k.h.array() * k.h.array())).matrix();
    g.w_in.noalias() += dz * k.x.transpose();
    g.w_rec.noalias() += dz * k.h_prev.transpose();
    g.bias.col(0) += dz;
    return {w.w_in.transpose() * dz, w.w_rec.transpose() * dz, Vec::Zero(dh.size())};
}

// ---------------------------------------------------------------------------
// Bidirectional encoder
// ---------------------------------------------------------------------------

struct EncoderConfig {
    CellType cell = CellType::lstm;
    std::size_t input_dim = 128;
    std::size_t hidden = 64;  // per direction; the embedding is 2 * hidden
    std::size_t max_len = 32;
    Real init_scale = 0.08;
    Real forget_bias = 1.0;
};

/// Forward activations of both directions for one title, kept for BPTT.
struct EncodeTape {
    std::vector<StepCache> fwd;
    std::vector<StepCache> bwd;  // bwd[k] consumed x_{T-1-k}
};

/// Bidirectional recurrent encoder whose parameters live in a shared ParamStore.
class BiEncoder {
public:
    BiEncoder() = default;

    /// Registers fresh parameters under "encoder.{fwd,bwd}.*" and initializes them.
    BiEncoder(const EncoderConfig& cfg, ParamStore& store, Rng& rng) : cfg_(cfg) {
        validate();
        const auto rows = static_cast<Eigen::Index>(gate_rows());
        const auto in = static_cast<Eigen::Index>(cfg_.input_dim);
        const auto h = static_cast<Eigen::Index>(cfg_.hidden);
        for (int dir = 0; dir < 2; ++dir) {
            const std::string p = dir == 0 ? "encoder.fwd." : "encoder.bwd.";
            Direction& d = dirs_[dir];
            d.w_in = store.add(p + "w_in", rows, in);
            d.w_rec = store.add(p + "w_rec", rows, h);
            d.bias = store.add(p + "bias", rows, 1);
            fill_uniform(store.value(d.w_in), rng, -cfg_.init_scale, cfg_.init_scale);
            fill_uniform(store.value(d.w_rec), rng, -cfg_.init_scale, cfg_.init_scale);
            if (cfg_.cell == CellType::lstm) store.value(d.bias).block(h, 0, h, 1).setConstant(cfg_.forget_bias);
        }
    }

    /// Binds to parameters already present in the store (e.g. loaded from a checkpoint).
    static BiEncoder attach(const EncoderConfig& cfg, const ParamStore& store) {
        BiEncoder e;
        e.cfg_ = cfg;
        e.validate();
        for (int dir = 0; dir < 2; ++dir) {
            const std::string p = dir == 0 ? "encoder.fwd." : "encoder.bwd.";
            e.dirs_[dir] = {store.index_of(p + "w_in"), store.index_of(p + "w_rec"), store.index_of(p + "bias")};
        }
        return e;
    }

    const EncoderConfig& config() const { return cfg_; }
    std::size_t output_dim() const { return 2 * cfg_.hidden; }

    std::vector<std::size_t> param_indices() const {
        std::vector<std::size_t> out;
        for (const auto& d : dirs_) out.insert(out.end(), {d.w_in, d.w_rec, d.bias});
        return out;
    }

    /// h_T = [h_T^fwd, h_T^bwd]. Sequences longer than max_len keep their first max_len steps.
    Vec encode(const ParamStore& store, std::span<const Vec> xs, EncodeTape* tape = nullptr) const {
        if (xs.empty()) fail(ErrorKind::data, "EmptyTitle: cannot encode an empty token sequence");
        const std::size_t T = std::min(xs.size(), cfg_.max_len);
        const auto h = static_cast<Eigen::Index>(cfg_.hidden);
        if (tape) {
            tape->fwd.assign(T, {});
            tape->bwd.assign(T, {});
        }
        RecurrentState fwd = RecurrentState::zeros(h);
        const CellWeights wf = weights(store, 0);
        for (std::size_t t = 0; t < T; ++t) fwd = step(wf, xs[t], fwd, tape ? &tape->fwd[t] : nullptr);
        RecurrentState bwd = RecurrentState::zeros(h);
        const CellWeights wb = weights(store, 1);
        for (std::size_t k = 0; k < T; ++k) bwd = step(wb, xs[T - 1 - k], bwd, tape ? &tape->bwd[k] : nullptr);
        Vec out(2 * h);
        out << fwd.h, bwd.h;
        return out;
    }

    /// BPTT from dL/dh_T; accumulates into the store's gradients and returns dL/dx_t.
    std::vector<Vec> backward(ParamStore& store, const EncodeTape& tape, const Vec& d_embedding) const {
        const auto h = static_cast<Eigen::Index>(cfg_.hidden);
        require_shape(d_embedding.size() == 2 * h, "encoder backward: gradient width");
        const std::size_t T = tape.fwd.size();
        std::vector<Vec> dx(T, Vec::Zero(static_cast<Eigen::Index>(cfg_.input_dim)));
        for (int dir = 0; dir < 2; ++dir) {
            const auto& caches = dir == 0 ? tape.fwd : tape.bwd;
            const CellWeights w = weights(store, dir);
            CellGrads g = grads(store, dir);
            Vec dh = d_embedding.segment(dir * h, h);
            Vec dc = Vec::Zero(h);
            for (std::size_t k = T; k-- > 0;) {
                auto r = cfg_.cell == CellType::lstm ? lstm_step_backward(w, caches[k], dh, dc, g)
                                                     : rnn_step_backward(w, caches[k], dh, g);
                const std::size_t t = dir == 0 ? k : T - 1 - k;
                dx[t] += r.dx;
                dh = std::move(r.dh_prev);
                dc = std::move(r.dc_prev);
            }
        }
        return dx;
    }

private:
    struct Direction {
        std::size_t w_in = 0, w_rec = 0, bias = 0;
    };

    std::size_t gate_rows() const { return cfg_.cell == CellType::lstm ? 4 * cfg_.hidden : cfg_.hidden; }

    void validate() const {
        if (cfg_.input_dim == 0 || cfg_.hidden == 0) fail(ErrorKind::config, "encoder: dimensions must be > 0");
        if (cfg_.max_len == 0) fail(ErrorKind::config, "encoder: max_len must be > 0");
    }

    CellWeights weights(const ParamStore& s, int dir) const {
        const auto& d = dirs_[dir];
        return {s.value(d.w_in), s.value(d.w_rec), s.value(d.bias)};
    }
    CellGrads grads(ParamStore& s, int dir) const {
        const auto& d = dirs_[dir];
        return {s.grad(d.w_in), s.grad(d.w_rec), s.grad(d.bias)};
    }

    RecurrentState step(const CellWeights& w, const Vec& x, const RecurrentState& s, StepCache* cache) const {
        return cfg_.cell == CellType::lstm ? lstm_step(w, x, s, cache) : rnn_step(w, x, s, cache);
    }

    EncoderConfig cfg_;
    Direction dirs_[2];
};

}  // namespace mrnet

#endif  // MRNET_ENCODER_HPP
