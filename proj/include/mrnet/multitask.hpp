#ifndef MRNET_MULTITASK_HPP
#define MRNET_MULTITASK_HPP

#include "mrnet/catalog.hpp"
#include "mrnet/embeddings.hpp"
#include "mrnet/encoder.hpp"
#include "mrnet/io.hpp"
#include "mrnet/numerics.hpp"

#include <memory>
#include <string>
#include <vector>

namespace mrnet {

// ---------------------------------------------------------------------------
// Loss normalization
// ---------------------------------------------------------------------------

struct NormalizedLoss {
    Real value = 0;
    Real scale = 1;  // multiplier applied to the raw loss and its gradients
};

/// Divides a task's raw batch loss by an exponential moving average of its own
/// past raw losses. The first observation seeds the average, so every task
/// starts at a normalized loss of exactly 1.
struct LossNormalizer {
    Real ema = 0;
    bool initialized = false;
    Real gamma = 0.01;
    Real eps = 1e-8;

    /// Scale for `raw` given the current state, without updating it.
    NormalizedLoss peek(Real raw) const {
        const Real base = initialized ? ema : raw;
        const Real scale = 1.0 / std::max(base, eps);
        return {raw * scale, scale};
    }

    NormalizedLoss apply(Real raw) {
        if (!std::isfinite(raw) || raw < 0) fail(ErrorKind::divergence, "loss normalizer: raw loss " + std::to_string(raw));
        if (!initialized) {
            ema = raw;
            initialized = true;
        }
        const auto out = peek(raw);
        ema = (1 - gamma) * ema + gamma * raw;
        return out;
    }
};

// ---------------------------------------------------------------------------
// Task heads
// ---------------------------------------------------------------------------

struct TaskHead {
    TaskSpec spec;
    std::size_t w = 0;  // out x d
    std::size_t b = 0;  // out x 1
    LossNormalizer normalizer;
    // Regression targets are standardized with these training-set statistics.
    Real target_mean = 0;
    Real target_std = 1;
};

struct HeadForward {
    Real loss = 0;
    Vec output;    // o_n = W_n h_T + b_n
    Vec d_output;  // dloss/do_n
};

inline HeadForward head_forward(const ParamStore& store, const TaskHead& head, const Vec& h, const Label& label) {
    if (label_kind(label) != head.spec.kind) {
        fail(ErrorKind::data, "head " + head.spec.name + ": label kind does not match task kind");
    }
    HeadForward out;
    out.output = affine(store.value(head.w), h, store.value(head.b).col(0));
    switch (head.spec.kind) {
        case TaskKind::classification: {
            const auto& c = std::get<ClassLabel>(label);
            auto r = softmax_cross_entropy(out.output, c.index);
            out.loss = r.loss;
            out.d_output = std::move(r.grad);
            break;
        }
        case TaskKind::regression: {
            Vec target(1);
            target << (std::get<Real>(label) - head.target_mean) / head.target_std;
            auto r = squared_loss(out.output, target);
            out.loss = r.loss;
            out.d_output = std::move(r.grad);
            break;
        }
        case TaskKind::decoding: {
            const auto& s = std::get<SparseVector>(label);
            require_shape(s.dim == static_cast<std::uint32_t>(out.output.size()), "decode target dimension");
            auto r = squared_loss(out.output, s.dense());
            out.loss = r.loss;
            out.d_output = std::move(r.grad);
            break;
        }
    }
    return out;
}

/// Accumulates scale * (dW, db) and returns scale * dloss/dh.
inline Vec head_backward(ParamStore& store, const TaskHead& head, const Vec& h, const Vec& d_output, Real scale) {
    const Vec dy = scale * d_output;
    store.grad(head.w).noalias() += dy * h.transpose();
    store.grad(head.b).col(0) += dy;
    return store.value(head.w).transpose() * dy;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

class MRNetModel {
public:
    MRNetModel() = default;

    MRNetModel(const EncoderConfig& enc_cfg, const TaskRegistry& tasks, std::shared_ptr<const WordEmbeddingTable> words,
               std::uint64_t seed, Real head_init_scale = 0.08)
        : words_(std::move(words)) {
        if (!words_) fail(ErrorKind::config, "MRNet model needs a word embedding table");
        if (enc_cfg.input_dim != words_->dim()) fail(ErrorKind::config, "encoder input_dim must equal word vector dimension");
        if (tasks.size() == 0) fail(ErrorKind::config, "MRNet model needs at least one task");
        Rng rng(seed);
        encoder_ = BiEncoder(enc_cfg, params_, rng);
        const auto d = static_cast<Eigen::Index>(encoder_.output_dim());
        for (const auto& t : tasks.tasks()) {
            TaskHead head;
            head.spec = t;
            const auto out = static_cast<Eigen::Index>(t.output_dim());
            head.w = params_.add("head." + t.name + ".w", out, d);
            head.b = params_.add("head." + t.name + ".b", out, 1);
            fill_uniform(params_.value(head.w), rng, -head_init_scale, head_init_scale);
            heads_.push_back(std::move(head));
        }
    }

    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }
    const BiEncoder& encoder() const { return encoder_; }
    std::vector<TaskHead>& heads() { return heads_; }
    const std::vector<TaskHead>& heads() const { return heads_; }
    const WordEmbeddingTable& words() const { return *words_; }
    std::shared_ptr<const WordEmbeddingTable> words_ptr() const { return words_; }
    std::size_t embedding_dim() const { return encoder_.output_dim(); }

    std::int64_t group = -1;  // product group this model was trained for; -1 means all

    std::size_t head_index(const std::string& name) const {
        for (std::size_t i = 0; i < heads_.size(); ++i) {
            if (heads_[i].spec.name == name) return i;
        }
        fail(ErrorKind::config, "model has no task head '" + name + "'");
    }

    std::vector<std::size_t> head_params(std::size_t h) const { return {heads_.at(h).w, heads_.at(h).b}; }

    /// Word vectors of the (truncated) title.
    std::vector<Vec> inputs(const std::vector<std::string>& tokens) const {
        const std::size_t T = std::min(tokens.size(), encoder_.config().max_len);
        std::vector<Vec> xs;
        xs.reserve(T);
        for (std::size_t t = 0; t < T; ++t) xs.push_back(words_->lookup(tokens[t]));
        return xs;
    }

    Vec embed(const std::vector<std::string>& tokens) const { return encoder_.encode(params_, inputs(tokens)); }

    /// Sets regression standardization from the records carrying each regression label.
    void fit_regression_targets(const std::vector<ProductRecord>& records) {
        for (auto& head : heads_) {
            if (head.spec.kind != TaskKind::regression) continue;
            Real sum = 0, sq = 0;
            std::size_t n = 0;
            for (const auto& r : records) {
                if (const Label* l = r.label(head.spec.name)) {
                    const Real v = std::get<Real>(*l);
                    sum += v;
                    sq += v * v;
                    ++n;
                }
            }
            if (n == 0) continue;
            head.target_mean = sum / static_cast<Real>(n);
            const Real var = std::max<Real>(0, sq / static_cast<Real>(n) - head.target_mean * head.target_mean);
            head.target_std = var > 1e-24 ? std::sqrt(var) : 1.0;
        }
    }

    static MRNetModel attach(const EncoderConfig& enc_cfg, std::vector<TaskHead> heads, ParamStore params,
                             std::shared_ptr<const WordEmbeddingTable> words) {
        MRNetModel m;
        m.words_ = std::move(words);
        m.params_ = std::move(params);
        m.encoder_ = BiEncoder::attach(enc_cfg, m.params_);
        m.heads_ = std::move(heads);
        return m;
    }

private:
    std::shared_ptr<const WordEmbeddingTable> words_;
    ParamStore params_;
    BiEncoder encoder_;
    std::vector<TaskHead> heads_;
};

// ---------------------------------------------------------------------------
// Batched loss and gradients
// ---------------------------------------------------------------------------

/// A record with its title's word vectors looked up once.
struct PreparedExample {
    const ProductRecord* record = nullptr;
    std::vector<Vec> inputs;
};

inline std::vector<PreparedExample> prepare_examples(const MRNetModel& model, const std::vector<ProductRecord>& records) {
    std::vector<PreparedExample> out;
    out.reserve(records.size());
    for (const auto& r : records) {
        if (r.tokens.empty()) continue;
        out.push_back({&r, model.inputs(r.tokens)});
    }
    return out;
}

enum class NormalizerMode { update, frozen };

struct HeadLoss {
    std::size_t head = 0;
    Real raw = 0;
    Real normalized = 0;
};

struct StepLoss {
    std::vector<HeadLoss> heads;
    Real total = 0;  // sum of normalized head losses
};

/// Total normalized loss of `heads` over a batch; accumulates its gradient into
/// the model's parameter store. Every example must carry every listed head's label.
inline StepLoss batch_loss_and_grad(MRNetModel& model, const std::vector<const PreparedExample*>& batch,
                                    const std::vector<std::size_t>& heads, NormalizerMode mode) {
    require_shape(!batch.empty(), "empty batch");
    const auto& enc = model.encoder();
    ParamStore& store = model.params();
    const std::size_t B = batch.size();
    std::vector<EncodeTape> tapes(B);
    std::vector<Vec> hs(B);
    std::vector<std::vector<Vec>> d_out(B, std::vector<Vec>(heads.size()));
    std::vector<Real> raw(heads.size(), 0.0);

    for (std::size_t e = 0; e < B; ++e) {
        hs[e] = enc.encode(store, batch[e]->inputs, &tapes[e]);
        for (std::size_t k = 0; k < heads.size(); ++k) {
            const TaskHead& head = model.heads()[heads[k]];
            const Label* label = batch[e]->record->label(head.spec.name);
            if (!label) fail(ErrorKind::data, batch[e]->record->id + " has no label for task " + head.spec.name);
            auto f = head_forward(store, head, hs[e], *label);
            raw[k] += f.loss;
            d_out[e][k] = std::move(f.d_output);
        }
    }

    StepLoss out;
    std::vector<Real> scale(heads.size());
    for (std::size_t k = 0; k < heads.size(); ++k) {
        TaskHead& head = model.heads()[heads[k]];
        raw[k] /= static_cast<Real>(B);
        if (!std::isfinite(raw[k])) {
            fail(ErrorKind::divergence, "non-finite loss on task " + head.spec.name);
        }
        const auto n = mode == NormalizerMode::update ? head.normalizer.apply(raw[k]) : head.normalizer.peek(raw[k]);
        scale[k] = n.scale / static_cast<Real>(B);
        out.heads.push_back({heads[k], raw[k], n.value});
        out.total += n.value;
    }

    for (std::size_t e = 0; e < B; ++e) {
        Vec dh = Vec::Zero(hs[e].size());
        for (std::size_t k = 0; k < heads.size(); ++k) {
            dh += head_backward(store, model.heads()[heads[k]], hs[e], d_out[e][k], scale[k]);
        }
        enc.backward(store, tapes[e], dh);
    }
    return out;
}

/// Mean raw loss of one head over examples carrying its label (no gradients).
inline Real evaluate_head(const MRNetModel& model, const std::vector<ProductRecord>& records, const std::string& task) {
    const TaskHead& head = model.heads()[model.head_index(task)];
    Real sum = 0;
    std::size_t n = 0;
    for (const auto& r : records) {
        const Label* l = r.label(task);
        if (!l || r.tokens.empty()) continue;
        sum += head_forward(model.params(), head, model.embed(r.tokens), *l).loss;
        ++n;
    }
    if (n == 0) fail(ErrorKind::data, "no records labeled for task " + task);
    return sum / static_cast<Real>(n);
}

// ---------------------------------------------------------------------------
// Training
// ---------------------------------------------------------------------------

enum class TrainMode { alternating, joint };

inline TrainMode parse_train_mode(const std::string& s) {
    if (s == "alternating") return TrainMode::alternating;
    if (s == "joint") return TrainMode::joint;
    fail(ErrorKind::config, "unknown training mode '" + s + "'");
}

struct TrainConfig {
    TrainMode mode = TrainMode::alternating;
    std::size_t batch_size = 32;
    std::size_t steps = 1000;
    std::size_t per_task_cap = 1000000;
    std::uint64_t seed = 1;
    AdamConfig adam;
    Real normalizer_decay = 0.01;
    Real normalizer_eps = 1e-8;

    void validate() const {
        if (batch_size < 1) fail(ErrorKind::config, "train: batch_size must be >= 1");
        if (per_task_cap < batch_size) fail(ErrorKind::config, "train: per_task_cap must be >= batch_size");
        if (!(normalizer_decay > 0 && normalizer_decay <= 1)) fail(ErrorKind::config, "train: normalizer_decay must lie in (0,1]");
        adam.validate();
    }
};

struct LossLogEntry {
    std::size_t step = 0;
    std::string task;
    Real raw = 0;
    Real normalized = 0;
};

struct TrainLog {
    std::vector<LossLogEntry> entries;
    std::vector<std::size_t> task_draws;  // per head, alternating mode

    std::string to_csv() const {
        std::ostringstream out;
        out << std::setprecision(10) << "step,task,raw_loss,normalized_loss\n";
        for (const auto& e : entries) out << e.step << ',' << e.task << ',' << e.raw << ',' << e.normalized << '\n';
        return out.str();
    }
};

/// Walks a shuffled index list, reshuffling at the end of each pass.
namespace detail {

inline void configure_normalizers(MRNetModel& model, const TrainConfig& cfg) {
    for (auto& h : model.heads()) {
        h.normalizer.gamma = cfg.normalizer_decay;
        h.normalizer.eps = cfg.normalizer_eps;
    }
}

inline std::vector<const PreparedExample*> gather(const std::vector<PreparedExample>& data, const std::vector<std::size_t>& idx) {
    std::vector<const PreparedExample*> out;
    out.reserve(idx.size());
    for (std::size_t i : idx) out.push_back(&data[i]);
    return out;
}

}  // namespace detail

/// Each step picks one task uniformly at random and updates only the shared
/// encoder and that task's head. Records need not carry every label.
inline TrainLog train_alternating(MRNetModel& model, const std::vector<ProductRecord>& records, const TrainConfig& cfg) {
    cfg.validate();
    detail::configure_normalizers(model, cfg);
    model.fit_regression_targets(records);
    const auto data = prepare_examples(model, records);
    const std::size_t N = model.heads().size();

    std::vector<BatchSampler> samplers;
    for (std::size_t n = 0; n < N; ++n) {
        std::vector<std::size_t> idx;
        for (std::size_t i = 0; i < data.size(); ++i) {
            if (data[i].record->label(model.heads()[n].spec.name)) idx.push_back(i);
        }
        if (idx.empty()) fail(ErrorKind::data, "task " + model.heads()[n].spec.name + " has no training examples");
        if (idx.size() > cfg.per_task_cap) {
            Rng cap_rng(derive_seed(cfg.seed, 200 + n));
            cap_rng.shuffle(idx);
            idx.resize(cfg.per_task_cap);
            std::sort(idx.begin(), idx.end());
        }
        samplers.emplace_back(std::move(idx), derive_seed(cfg.seed, 100 + n));
    }

    const auto shared = model.encoder().param_indices();
    Rng task_rng(derive_seed(cfg.seed, 1));
    TrainLog log;
    log.task_draws.assign(N, 0);
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const std::size_t n = task_rng.index(N);
        ++log.task_draws[n];
        const auto batch = detail::gather(data, samplers[n].next(cfg.batch_size));
        const auto loss = batch_loss_and_grad(model, batch, {n}, NormalizerMode::update);
        auto update = shared;
        for (std::size_t p : model.head_params(n)) update.push_back(p);
        adam_step(model.params(), cfg.adam, update);
        for (std::size_t p : update) {
            if (!model.params().value(p).allFinite()) {
                fail(ErrorKind::divergence, "parameters diverged on task " + model.heads()[n].spec.name);
            }
        }
        log.entries.push_back({step, model.heads()[n].spec.name, loss.heads[0].raw, loss.heads[0].normalized});
    }
    return log;
}

/// Every step updates all parameters with the gradient of the summed normalized
/// loss of all heads. Every record must carry every task's label.
inline TrainLog train_joint(MRNetModel& model, const std::vector<ProductRecord>& records, const TrainConfig& cfg) {
    cfg.validate();
    for (const auto& r : records) {
        for (const auto& h : model.heads()) {
            if (!r.label(h.spec.name)) {
                fail(ErrorKind::data, "joint training needs every label: record " + r.id + " lacks task " + h.spec.name);
            }
        }
    }
    detail::configure_normalizers(model, cfg);
    model.fit_regression_targets(records);
    const auto data = prepare_examples(model, records);
    if (data.empty()) fail(ErrorKind::data, "joint training: no usable records");
    std::vector<std::size_t> all(data.size());
    for (std::size_t i = 0; i < all.size(); ++i) all[i] = i;
    if (all.size() > cfg.per_task_cap) all.resize(cfg.per_task_cap);
    BatchSampler sampler(std::move(all), derive_seed(cfg.seed, 100));

    std::vector<std::size_t> heads(model.heads().size());
    for (std::size_t n = 0; n < heads.size(); ++n) heads[n] = n;
    TrainLog log;
    for (std::size_t step = 1; step <= cfg.steps; ++step) {
        const auto batch = detail::gather(data, sampler.next(cfg.batch_size));
        const auto loss = batch_loss_and_grad(model, batch, heads, NormalizerMode::update);
        adam_step(model.params(), cfg.adam);
        if (!std::all_of(model.params().begin(), model.params().end(), [](const Tensor& t) { return t.value.allFinite(); })) {
            fail(ErrorKind::divergence, "parameters diverged in joint training at step " + std::to_string(step));
        }
        for (const auto& h : loss.heads) log.entries.push_back({step, model.heads()[h.head].spec.name, h.raw, h.normalized});
    }
    return log;
}

inline TrainLog train(MRNetModel& model, const std::vector<ProductRecord>& records, const TrainConfig& cfg) {
    return cfg.mode == TrainMode::joint ? train_joint(model, records, cfg) : train_alternating(model, records, cfg);
}

// ---------------------------------------------------------------------------
// Export
// ---------------------------------------------------------------------------

struct EmbedResult {
    EmbeddingFile file;
    std::size_t skipped = 0;  // records with empty titles
};

inline EmbedResult embed_catalog(const MRNetModel& model, const std::vector<ProductRecord>& records) {
    EmbedResult out;
    out.file.dim = static_cast<std::uint32_t>(model.embedding_dim());
    for (const auto& r : records) {
        if (r.tokens.empty()) {
            ++out.skipped;
            continue;
        }
        out.file.add(r.id, model.embed(r.tokens));
    }
    return out;
}

// ---------------------------------------------------------------------------
// Checkpoints
// ---------------------------------------------------------------------------

inline Checkpoint to_checkpoint(const MRNetModel& model) {
    Checkpoint c;
    const auto& ec = model.encoder().config();
    Json tasks = Json::array();
    for (const auto& h : model.heads()) {
        tasks.push_back({{"name", h.spec.name},
                         {"kind", to_string(h.spec.kind)},
                         {"cardinality", h.spec.cardinality},
                         {"normalizer", {{"ema", h.normalizer.ema}, {"initialized", h.normalizer.initialized},
                                         {"gamma", h.normalizer.gamma}, {"eps", h.normalizer.eps}}},
                         {"target_mean", h.target_mean},
                         {"target_std", h.target_std}});
    }
    c.manifest = {{"kind", "mrnet"},
                  {"format_version", kCheckpointFormatVersion},
                  {"cell", to_string(ec.cell)},
                  {"input_dim", ec.input_dim},
                  {"hidden", ec.hidden},
                  {"max_len", ec.max_len},
                  {"group", model.group},
                  {"tasks", tasks}};
    c.add_store(model.params());
    return c;
}

inline MRNetModel mrnet_from_checkpoint(const Checkpoint& c, std::shared_ptr<const WordEmbeddingTable> words) {
    const Json& m = c.manifest;
    try {
        if (m.at("kind") != "mrnet") fail(ErrorKind::data, "checkpoint is not an MRNet model");
        EncoderConfig ec;
        ec.cell = parse_cell_type(m.at("cell").get<std::string>());
        ec.input_dim = m.at("input_dim").get<std::size_t>();
        ec.hidden = m.at("hidden").get<std::size_t>();
        ec.max_len = m.at("max_len").get<std::size_t>();
        if (!words || words->dim() != ec.input_dim) fail(ErrorKind::data, "word vectors do not match the checkpoint input_dim");
        ParamStore store;
        for (const auto& t : c.tensors) {
            auto i = store.add(t.name, t.value.rows(), t.value.cols());
            store.value(i) = t.value;
        }
        std::vector<TaskHead> heads;
        for (const auto& tj : m.at("tasks")) {
            TaskHead h;
            h.spec = {tj.at("name").get<std::string>(), parse_task_kind(tj.at("kind").get<std::string>()),
                      tj.at("cardinality").get<std::size_t>()};
            h.w = store.index_of("head." + h.spec.name + ".w");
            h.b = store.index_of("head." + h.spec.name + ".b");
            const auto& nj = tj.at("normalizer");
            h.normalizer = {nj.at("ema").get<Real>(), nj.at("initialized").get<bool>(), nj.at("gamma").get<Real>(),
                            nj.at("eps").get<Real>()};
            h.target_mean = tj.at("target_mean").get<Real>();
            h.target_std = tj.at("target_std").get<Real>();
            heads.push_back(std::move(h));
        }
        auto model = MRNetModel::attach(ec, std::move(heads), std::move(store), std::move(words));
        model.group = m.at("group").get<std::int64_t>();
        return model;
    } catch (const Json::exception& e) {
        fail(ErrorKind::data, std::string("bad MRNet checkpoint manifest: ") + e.what());
    }
}

}  // namespace mrnet

#endif  // MRNET_MULTITASK_HPP
