#ifndef MRNET_NUMERICS_HPP
#define MRNET_NUMERICS_HPP

#include "mrnet/core.hpp"

#include <algorithm>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace mrnet {

inline Real sigmoid(Real x) {
    if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
    const Real e = std::exp(x);
    return e / (1.0 + e);
}

inline Vec sigmoid(const Vec& x) { return x.unaryExpr([](Real v) { return sigmoid(v); }); }

/// A scalar loss together with its gradient with respect to the loss input.
struct LossGrad {
    Real loss = 0;
    Vec grad;
};

// ---------------------------------------------------------------------------
// Affine map  y = W x + b
// ---------------------------------------------------------------------------

inline Vec affine(const Mat& w, const Vec& x, const Vec& b) {
    require_shape(w.cols() == x.size(), "affine: W columns != len(x)");
    require_shape(w.rows() == b.size(), "affine: W rows != len(b)");
    return w * x + b;
}

struct AffineGrads {
    Mat dw;
    Vec dx;
    Vec db;
};

inline AffineGrads affine_backward(const Mat& w, const Vec& x, const Vec& dy) {
    require_shape(w.cols() == x.size(), "affine_backward: W columns != len(x)");
    require_shape(w.rows() == dy.size(), "affine_backward: W rows != len(dy)");
    return {dy * x.transpose(), w.transpose() * dy, dy};
}

// ---------------------------------------------------------------------------
// Losses
// ---------------------------------------------------------------------------

inline Vec softmax(const Vec& logits) {
    const Real m = logits.maxCoeff();
    Vec e = (logits.array() - m).exp().matrix();
    return e / e.sum();
}

inline LossGrad softmax_cross_entropy(const Vec& logits, std::size_t cls) {
    if (cls >= static_cast<std::size_t>(logits.size())) {
        fail(ErrorKind::data, "softmax_cross_entropy: class " + std::to_string(cls) + " out of range for " +
                                  std::to_string(logits.size()) + " logits");
    }
    const Real m = logits.maxCoeff();
    const Real log_z = m + std::log((logits.array() - m).exp().sum());
    LossGrad out;
    out.loss = log_z - logits(static_cast<Eigen::Index>(cls));
    out.grad = (logits.array() - log_z).exp().matrix();
    out.grad(static_cast<Eigen::Index>(cls)) -= 1.0;
    return out;
}

/// Mean of squared differences.
inline LossGrad squared_loss(const Vec& pred, const Vec& target) {
    require_shape(pred.size() == target.size(), "squared_loss: length mismatch");
    require_shape(pred.size() > 0, "squared_loss: empty input");
    const Vec diff = pred - target;
    const Real n = static_cast<Real>(pred.size());
    return {diff.squaredNorm() / n, (2.0 / n) * diff};
}

inline constexpr Real kKlClampMargin = 1e-7;

/// KL(rho || rho_hat_j) summed over hidden units, with the gradient with respect to rho_hat.
inline LossGrad kl_sparsity(const Vec& mean_activation, Real rho) {
    if (!(rho > 0 && rho < 1)) fail(ErrorKind::config, "kl_sparsity: rho must lie in (0,1)");
    LossGrad out;
    out.grad.resize(mean_activation.size());
    for (Eigen::Index j = 0; j < mean_activation.size(); ++j) {
        const Real a = mean_activation(j);
        if (!(a >= 0.0 && a <= 1.0)) {
            fail(ErrorKind::divergence, "kl_sparsity: activation " + std::to_string(a) + " outside (0,1)");
        }
        const Real p = std::clamp(a, kKlClampMargin, 1.0 - kKlClampMargin);
        out.loss += rho * std::log(rho / p) + (1 - rho) * std::log((1 - rho) / (1 - p));
        out.grad(j) = -rho / p + (1 - rho) / (1 - p);
    }
    return out;
}

// ---------------------------------------------------------------------------
// Parameters and optimizer
// ---------------------------------------------------------------------------

struct Tensor {
    std::string name;
    Mat value;
    Mat grad;
    Mat m;  // Adam first moment
    Mat v;  // Adam second moment
    std::int64_t step = 0;
};

/// Named parameters with gradient accumulators and per-parameter Adam state.
class ParamStore {
public:
    std::size_t add(const std::string& name, Eigen::Index rows, Eigen::Index cols) {
        if (index_.count(name)) fail(ErrorKind::config, "duplicate parameter name " + name);
        Tensor t;
        t.name = name;
        t.value = Mat::Zero(rows, cols);
        t.grad = Mat::Zero(rows, cols);
        t.m = Mat::Zero(rows, cols);
        t.v = Mat::Zero(rows, cols);
        tensors_.push_back(std::move(t));
        index_.emplace(name, tensors_.size() - 1);
        return tensors_.size() - 1;
    }

    std::size_t size() const { return tensors_.size(); }
    Tensor& operator[](std::size_t i) { return tensors_.at(i); }
    const Tensor& operator[](std::size_t i) const { return tensors_.at(i); }

    std::optional<std::size_t> find(const std::string& name) const {
        auto it = index_.find(name);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    std::size_t index_of(const std::string& name) const {
        auto i = find(name);
        if (!i) fail(ErrorKind::data, "unknown parameter " + name);
        return *i;
    }

    Mat& value(std::size_t i) { return tensors_.at(i).value; }
    const Mat& value(std::size_t i) const { return tensors_.at(i).value; }
    Mat& grad(std::size_t i) { return tensors_.at(i).grad; }
    const Mat& grad(std::size_t i) const { return tensors_.at(i).grad; }

    void zero_grad() {
        for (auto& t : tensors_) t.grad.setZero();
    }

    std::size_t parameter_count() const {
        std::size_t n = 0;
        for (const auto& t : tensors_) n += static_cast<std::size_t>(t.value.size());
        return n;
    }

    auto begin() { return tensors_.begin(); }
    auto end() { return tensors_.end(); }
    auto begin() const { return tensors_.begin(); }
    auto end() const { return tensors_.end(); }

private:
    std::vector<Tensor> tensors_;
    std::map<std::string, std::size_t> index_;
};

struct AdamConfig {
    Real lr = 1e-3;
    Real beta1 = 0.9;
    Real beta2 = 0.999;
    Real epsilon = 1e-8;

    void validate() const {
        if (!(lr > 0)) fail(ErrorKind::config, "adam: lr must be > 0");
        if (!(beta1 > 0 && beta1 < 1) || !(beta2 > 0 && beta2 < 1)) {
            fail(ErrorKind::config, "adam: betas must lie in (0,1)");
        }
        if (!(epsilon > 0)) fail(ErrorKind::config, "adam: epsilon must be > 0");
    }
};

/// Bias-corrected Adam update of one tensor at step t (t >= 1), then clears its gradient.
inline void adam_step(Tensor& t, const AdamConfig& cfg, std::int64_t step) {
    if (step < 1) fail(ErrorKind::config, "adam_step: step index must be >= 1");
    t.m = cfg.beta1 * t.m + (1 - cfg.beta1) * t.grad;
    t.v = cfg.beta2 * t.v + (1 - cfg.beta2) * t.grad.cwiseProduct(t.grad);
    const Real c1 = 1 - std::pow(cfg.beta1, static_cast<Real>(step));
    const Real c2 = 1 - std::pow(cfg.beta2, static_cast<Real>(step));
    t.value.array() -= cfg.lr * (t.m.array() / c1) / ((t.v.array() / c2).sqrt() + cfg.epsilon);
    t.step = step;
    t.grad.setZero();
}

/// Updates the listed tensors; each advances its own step counter, so tensors that
/// sit out a step (an inactive task head) keep an untouched optimizer state.
inline void adam_step(ParamStore& store, const AdamConfig& cfg, std::span<const std::size_t> which) {
    for (std::size_t i : which) {
        Tensor& t = store[i];
        adam_step(t, cfg, t.step + 1);
    }
}

inline void adam_step(ParamStore& store, const AdamConfig& cfg) {
    std::vector<std::size_t> all(store.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    adam_step(store, cfg, all);
}

inline bool all_finite(const ParamStore& store) {
    for (const auto& t : store) {
        if (!t.value.allFinite()) return false;
    }
    return true;
}

// ---------------------------------------------------------------------------
// Finite-difference gradient checking
// ---------------------------------------------------------------------------

struct GradCheckOptions {
    Real eps = 1e-5;
    /// Coordinates sampled per tensor; 0 checks every coordinate.
    std::size_t max_coords_per_tensor = 0;
    std::uint64_t seed = 0;
    /// Denominator floor of the relative error, so that coordinates whose true
    /// gradient is numerically zero are judged by absolute error.
    Real denominator_floor = 1e-6;
};

struct GradCheckResult {
    Real max_relative_error = 0;
    std::string worst_tensor;
    Eigen::Index worst_index = -1;
    Real worst_analytic = 0;
    Real worst_numeric = 0;
    std::size_t coords_checked = 0;
};

inline Real relative_error(Real analytic, Real numeric, Real floor) {
    return std::abs(analytic - numeric) / std::max({std::abs(analytic), std::abs(numeric), floor});
}

/// loss_fn must return the loss and accumulate its analytic gradient into the
/// store's grad tensors. Gradients are zeroed before every evaluation.
using LossFn = std::function<Real(ParamStore&)>;

inline GradCheckResult grad_check(const LossFn& loss_fn, ParamStore& store, const GradCheckOptions& opt = {}) {
    store.zero_grad();
    const Real base = loss_fn(store);
    if (!std::isfinite(base)) fail(ErrorKind::divergence, "grad_check: non-finite loss");
    std::vector<Mat> analytic;
    analytic.reserve(store.size());
    for (const auto& t : store) analytic.push_back(t.grad);

    Rng rng(opt.seed);
    GradCheckResult res;
    for (std::size_t ti = 0; ti < store.size(); ++ti) {
        const auto n = static_cast<std::size_t>(store.value(ti).size());
        std::vector<std::size_t> coords;
        if (opt.max_coords_per_tensor == 0 || opt.max_coords_per_tensor >= n) {
            coords.resize(n);
            for (std::size_t k = 0; k < n; ++k) coords[k] = k;
        } else {
            auto perm = rng.permutation(n);
            coords.assign(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(opt.max_coords_per_tensor));
        }
        for (std::size_t k : coords) {
            Real& theta = store.value(ti).data()[k];
            const Real saved = theta;
            theta = saved + opt.eps;
            store.zero_grad();
            const Real fp = loss_fn(store);
            theta = saved - opt.eps;
            store.zero_grad();
            const Real fm = loss_fn(store);
            theta = saved;
            if (!std::isfinite(fp) || !std::isfinite(fm)) {
                fail(ErrorKind::divergence, "grad_check: non-finite loss at " + store[ti].name);
            }
            const Real numeric = (fp - fm) / (2 * opt.eps);
            const Real a = analytic[ti].data()[k];
            const Real err = relative_error(a, numeric, opt.denominator_floor);
            ++res.coords_checked;
            if (err > res.max_relative_error || res.worst_index < 0) {
                res.max_relative_error = std::max(res.max_relative_error, err);
                if (err >= res.max_relative_error) {
                    res.worst_tensor = store[ti].name;
                    res.worst_index = static_cast<Eigen::Index>(k);
                    res.worst_analytic = a;
                    res.worst_numeric = numeric;
                }
            }
        }
    }
    // Leave the analytic gradient of the unperturbed point in place.
    for (std::size_t ti = 0; ti < store.size(); ++ti) store.grad(ti) = analytic[ti];
    return res;
}

}  // namespace mrnet

#endif  // MRNET_NUMERICS_HPP
