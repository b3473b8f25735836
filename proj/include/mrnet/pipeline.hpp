#ifndef MRNET_PIPELINE_HPP
#define MRNET_PIPELINE_HPP

#include "mrnet/analytics.hpp"
#include "mrnet/crosslingual.hpp"
#include "mrnet/multitask.hpp"
#include "mrnet/projector.hpp"

#include <functional>
#include <iostream>
#include <set>

namespace mrnet {

inline constexpr std::uint32_t kArtifactFormatVersion = 1;

// ---------------------------------------------------------------------------
// Run configuration
// ---------------------------------------------------------------------------

/// Typed reader over one JSON object. Every key must be consumed; `finish`
/// rejects the rest.
class ConfigReader {
public:
    ConfigReader(Json j, std::string where) : j_(std::move(j)), where_(std::move(where)) {
        if (!j_.is_object()) fail(ErrorKind::config, where_ + ": expected an object");
    }

    template <class T>
    T get(const std::string& key, T fallback) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        const Json& v = j_.at(key);
        if constexpr (std::is_same_v<T, bool>) {
            if (!v.is_boolean()) bad(key, "expected a boolean");
        } else if constexpr (std::is_arithmetic_v<T>) {
            if (!v.is_number()) bad(key, "expected a number");
        } else if constexpr (std::is_same_v<T, std::string>) {
            if (!v.is_string()) bad(key, "expected a string");
        }
        try {
            return v.get<T>();
        } catch (const Json::exception&) {
            bad(key, "wrong type");
        }
    }

    std::size_t count(const std::string& key, std::size_t fallback, std::size_t min = 1) {
        seen_.insert(key);
        if (!j_.contains(key)) return fallback;
        const Json& v = j_.at(key);
        if (!v.is_number_integer()) bad(key, "expected an integer");
        const auto n = v.get<std::int64_t>();
        if (n < static_cast<std::int64_t>(min)) bad(key, "must be >= " + std::to_string(min));
        return static_cast<std::size_t>(n);
    }

    Real real(const std::string& key, Real fallback, Real lo, Real hi) {
        const Real v = get<Real>(key, fallback);
        if (!(v >= lo && v <= hi)) {
            std::ostringstream s;
            s << "must lie in [" << lo << ", " << hi << "]";
            bad(key, s.str());
        }
        return v;
    }

    std::vector<std::string> names(const std::string& key, std::vector<std::string> fallback) {
        auto v = get<std::vector<std::string>>(key, std::move(fallback));
        std::set<std::string> uniq(v.begin(), v.end());
        if (uniq.size() != v.size()) bad(key, "duplicate entries");
        return v;
    }

    ConfigReader section(const std::string& key) {
        seen_.insert(key);
        return ConfigReader(j_.contains(key) ? j_.at(key) : Json::object(), where_ + "." + key);
    }

    void finish() const {
        for (const auto& [key, _] : j_.items()) {
            if (!seen_.count(key)) fail(ErrorKind::config, "unknown config key '" + where_ + "." + key + "'");
        }
    }

    [[noreturn]] void bad(const std::string& key, const std::string& why) const {
        fail(ErrorKind::config, "config key '" + where_ + "." + key + "': " + why);
    }

private:
    Json j_;
    std::string where_;
    std::set<std::string> seen_;
};

struct PathsSection {
    // Empty means the stage's default inside the output directory.
    std::string catalog, tasks, vectors, region_a, region_b, alignment;
};

struct CatalogSection {
    std::size_t products = 200;
    std::size_t groups = 2;
    std::size_t families = 2;
    Real noise_rate = 0.5;
    Real label_noise = 0.05;
    Real label_coverage = 1.0;
    Real weight_noise = 0.15;
};

struct TfidfSection {
    std::size_t dim = 64;
    std::size_t min_df = 2;
};

struct MRNetSection {
    std::string cell = "lstm";
    std::size_t hidden = 16;
    std::size_t max_len = 32;
    std::vector<std::string> tasks = training_task_names();
    std::string mode = "joint";
    std::size_t batch_size = 32;
    std::size_t steps = 8000;
    std::size_t per_task_cap = 1000000;
    Real lr = 0.003;
    Real normalizer_decay = 0.001;
    Real init_scale = 0.08;
};

struct AgnosticSection {
    Real rho = 0.05;
    Real beta = 0.1;
    std::size_t batch_size = 64;
    std::size_t steps = 2000;
    Real lr = 0.005;
    bool balance_groups = true;
};

struct CrossSection {
    Real noise = 0.01;
    std::size_t hidden = 0;
    std::size_t batch_size = 128;
    std::size_t steps = 2000;
    Real lr = 0.005;
    Real train_fraction = 0.8;
};

inline const std::vector<std::string>& downstream_task_names() {
    static const std::vector<std::string> names{"plugs", "sioc", "ingestible", "weight_band"};
    return names;
}

struct EvalSection {
    std::vector<std::string> tasks = downstream_task_names();
    std::vector<std::string> representations{"specific", "agnostic", "tfidf"};
    std::vector<std::string> classifiers{"logreg", "forest"};
    std::size_t folds = 5;
    std::size_t tfidf_dim = 5000;
    std::size_t tfidf_min_df = 1;
    Real l2 = 1e-4;
    std::size_t iterations = 300;
    std::size_t trees = 50;
    std::size_t max_depth = 8;
};

struct UnseenSection {
    std::string task = "sioc";
    std::vector<std::string> representations{"specific", "tfidf"};
    Real train_fraction = 0.7;
    Real threshold = 0.2;
    std::int64_t train_family = 0;  // -1 draws the training set from every family
};

struct KnnSection {
    std::string representation = "specific";
    std::size_t queries = 5;
    std::size_t k = 9;
    std::vector<std::string> query_ids;
};

struct InterpretSection {
    std::string representation = "specific";
    std::vector<std::string> tasks = downstream_task_names();
    std::size_t runs = 5;
    Real quartile = 0.25;
    Real subsample = 0.5;
    std::size_t trees = 50;
    std::size_t max_depth = 8;
};

struct GradcheckSection {
    std::size_t seeds = 5;
    Real tolerance = 1e-4;
};

struct RunConfig {
    std::uint64_t seed = 1;
    std::string out = "out";
    PathsSection paths;
    CatalogSection catalog;
    TfidfSection tfidf;
    Word2VecConfig word2vec;
    MRNetSection mrnet;
    AgnosticSection agnostic;
    CrossSection crosslang;
    EvalSection eval;
    UnseenSection unseen;
    KnnSection knn;
    InterpretSection interpret;
    GradcheckSection gradcheck;

    /// Effective configuration with every default filled in.
    Json to_json() const {
        const auto& w = word2vec;
        return Json{
            {"seed", seed},
            {"out", out},
            {"paths", {{"catalog", paths.catalog}, {"tasks", paths.tasks}, {"vectors", paths.vectors},
                       {"region_a", paths.region_a}, {"region_b", paths.region_b}, {"alignment", paths.alignment}}},
            {"catalog", {{"products", catalog.products}, {"groups", catalog.groups}, {"families", catalog.families},
                         {"noise_rate", catalog.noise_rate}, {"label_noise", catalog.label_noise},
                         {"label_coverage", catalog.label_coverage}, {"weight_noise", catalog.weight_noise}}},
            {"tfidf", {{"dim", tfidf.dim}, {"min_df", tfidf.min_df}}},
            {"word2vec", {{"dim", w.dim}, {"min_count", w.min_count}, {"window", w.window}, {"negatives", w.negatives},
                          {"epochs", w.epochs}, {"lr", w.lr}}},
            {"mrnet", {{"cell", mrnet.cell}, {"hidden", mrnet.hidden}, {"max_len", mrnet.max_len}, {"tasks", mrnet.tasks},
                       {"mode", mrnet.mode}, {"batch_size", mrnet.batch_size}, {"steps", mrnet.steps},
                       {"per_task_cap", mrnet.per_task_cap}, {"lr", mrnet.lr}, {"normalizer_decay", mrnet.normalizer_decay},
                       {"init_scale", mrnet.init_scale}}},
            {"agnostic", {{"rho", agnostic.rho}, {"beta", agnostic.beta}, {"batch_size", agnostic.batch_size},
                          {"steps", agnostic.steps}, {"lr", agnostic.lr}, {"balance_groups", agnostic.balance_groups}}},
            {"crosslang", {{"noise", crosslang.noise}, {"hidden", crosslang.hidden}, {"batch_size", crosslang.batch_size},
                           {"steps", crosslang.steps}, {"lr", crosslang.lr}, {"train_fraction", crosslang.train_fraction}}},
            {"eval", {{"tasks", eval.tasks}, {"representations", eval.representations}, {"classifiers", eval.classifiers},
                      {"folds", eval.folds}, {"tfidf_dim", eval.tfidf_dim}, {"tfidf_min_df", eval.tfidf_min_df},
                      {"l2", eval.l2}, {"iterations", eval.iterations}, {"trees", eval.trees}, {"max_depth", eval.max_depth}}},
            {"unseen", {{"task", unseen.task}, {"representations", unseen.representations},
                        {"train_fraction", unseen.train_fraction}, {"threshold", unseen.threshold},
                        {"train_family", unseen.train_family}}},
            {"knn", {{"representation", knn.representation}, {"queries", knn.queries}, {"k", knn.k}, {"query_ids", knn.query_ids}}},
            {"interpret", {{"representation", interpret.representation}, {"tasks", interpret.tasks}, {"runs", interpret.runs},
                           {"quartile", interpret.quartile}, {"subsample", interpret.subsample}, {"trees", interpret.trees},
                           {"max_depth", interpret.max_depth}}},
            {"gradcheck", {{"seeds", gradcheck.seeds}, {"tolerance", gradcheck.tolerance}}},
        };
    }

    /// Hash of the effective configuration. The output directory is excluded
    /// so that relocating a run does not change its identity.
    std::string hash() const {
        Json j = to_json();
        j.erase("out");
        return hex64(fnv1a64(j.dump()));
    }
};

namespace detail {

inline void check_representation(const std::string& rep, const std::string& key, bool allow_tfidf) {
    static const std::set<std::string> dense{"specific", "agnostic", "crosslang"};
    if (dense.count(rep) || (allow_tfidf && rep == "tfidf")) return;
    fail(ErrorKind::config, "config key '" + key + "': unknown representation '" + rep + "'");
}

}  // namespace detail

inline RunConfig parse_run_config(const Json& j) {
    RunConfig c;
    ConfigReader root(j, "config");
    const auto seed = root.get<std::int64_t>("seed", 1);
    if (seed < 0) root.bad("seed", "must be >= 0");
    c.seed = static_cast<std::uint64_t>(seed);
    c.out = root.get<std::string>("out", c.out);

    auto p = root.section("paths");
    c.paths.catalog = p.get<std::string>("catalog", "");
    c.paths.tasks = p.get<std::string>("tasks", "");
    c.paths.vectors = p.get<std::string>("vectors", "");
    c.paths.region_a = p.get<std::string>("region_a", "");
    c.paths.region_b = p.get<std::string>("region_b", "");
    c.paths.alignment = p.get<std::string>("alignment", "");
    p.finish();

    auto cat = root.section("catalog");
    c.catalog.products = cat.count("products", c.catalog.products);
    c.catalog.groups = cat.count("groups", c.catalog.groups);
    c.catalog.families = cat.count("families", c.catalog.families);
    c.catalog.noise_rate = cat.real("noise_rate", c.catalog.noise_rate, 0, 1);
    c.catalog.label_noise = cat.real("label_noise", c.catalog.label_noise, 0, 1);
    c.catalog.label_coverage = cat.real("label_coverage", c.catalog.label_coverage, 0, 1);
    c.catalog.weight_noise = cat.real("weight_noise", c.catalog.weight_noise, 0, 1e3);
    cat.finish();

    auto tf = root.section("tfidf");
    c.tfidf.dim = tf.count("dim", c.tfidf.dim);
    c.tfidf.min_df = tf.count("min_df", c.tfidf.min_df);
    tf.finish();

    auto w = root.section("word2vec");
    c.word2vec.dim = w.count("dim", c.word2vec.dim);
    c.word2vec.min_count = w.count("min_count", c.word2vec.min_count);
    c.word2vec.window = w.count("window", c.word2vec.window);
    c.word2vec.negatives = w.count("negatives", c.word2vec.negatives, 0);
    c.word2vec.epochs = w.count("epochs", c.word2vec.epochs);
    c.word2vec.lr = w.real("lr", c.word2vec.lr, 1e-12, 10);
    c.word2vec.min_lr = c.word2vec.lr * 1e-4;
    w.finish();

    auto m = root.section("mrnet");
    c.mrnet.cell = m.get<std::string>("cell", c.mrnet.cell);
    parse_cell_type(c.mrnet.cell);
    c.mrnet.hidden = m.count("hidden", c.mrnet.hidden);
    c.mrnet.max_len = m.count("max_len", c.mrnet.max_len);
    c.mrnet.tasks = m.names("tasks", c.mrnet.tasks);
    if (c.mrnet.tasks.empty()) m.bad("tasks", "needs at least one task");
    c.mrnet.mode = m.get<std::string>("mode", c.mrnet.mode);
    parse_train_mode(c.mrnet.mode);
    c.mrnet.batch_size = m.count("batch_size", c.mrnet.batch_size);
    c.mrnet.steps = m.count("steps", c.mrnet.steps);
    c.mrnet.per_task_cap = m.count("per_task_cap", c.mrnet.per_task_cap);
    c.mrnet.lr = m.real("lr", c.mrnet.lr, 1e-12, 10);
    c.mrnet.normalizer_decay = m.real("normalizer_decay", c.mrnet.normalizer_decay, 1e-12, 1);
    c.mrnet.init_scale = m.real("init_scale", c.mrnet.init_scale, 0, 10);
    m.finish();

    auto a = root.section("agnostic");
    c.agnostic.rho = a.real("rho", c.agnostic.rho, 1e-9, 1 - 1e-9);
    c.agnostic.beta = a.real("beta", c.agnostic.beta, 0, 1e6);
    c.agnostic.batch_size = a.count("batch_size", c.agnostic.batch_size);
    c.agnostic.steps = a.count("steps", c.agnostic.steps);
    c.agnostic.lr = a.real("lr", c.agnostic.lr, 1e-12, 10);
    c.agnostic.balance_groups = a.get<bool>("balance_groups", c.agnostic.balance_groups);
    a.finish();

    auto x = root.section("crosslang");
    c.crosslang.noise = x.real("noise", c.crosslang.noise, 0, 1e3);
    c.crosslang.hidden = x.count("hidden", c.crosslang.hidden, 0);
    c.crosslang.batch_size = x.count("batch_size", c.crosslang.batch_size);
    c.crosslang.steps = x.count("steps", c.crosslang.steps);
    c.crosslang.lr = x.real("lr", c.crosslang.lr, 1e-12, 10);
    c.crosslang.train_fraction = x.real("train_fraction", c.crosslang.train_fraction, 1e-9, 1);
    x.finish();

    auto e = root.section("eval");
    c.eval.tasks = e.names("tasks", c.eval.tasks);
    c.eval.representations = e.names("representations", c.eval.representations);
    for (const auto& r : c.eval.representations) detail::check_representation(r, "config.eval.representations", true);
    c.eval.classifiers = e.names("classifiers", c.eval.classifiers);
    for (const auto& cl : c.eval.classifiers) {
        if (cl != "logreg" && cl != "forest") e.bad("classifiers", "unknown classifier '" + cl + "'");
    }
    c.eval.folds = e.count("folds", c.eval.folds, 2);
    c.eval.tfidf_dim = e.count("tfidf_dim", c.eval.tfidf_dim);
    c.eval.tfidf_min_df = e.count("tfidf_min_df", c.eval.tfidf_min_df);
    c.eval.l2 = e.real("l2", c.eval.l2, 0, 1e6);
    c.eval.iterations = e.count("iterations", c.eval.iterations);
    c.eval.trees = e.count("trees", c.eval.trees);
    c.eval.max_depth = e.count("max_depth", c.eval.max_depth);
    e.finish();

    auto u = root.section("unseen");
    c.unseen.task = u.get<std::string>("task", c.unseen.task);
    c.unseen.representations = u.names("representations", c.unseen.representations);
    for (const auto& r : c.unseen.representations) detail::check_representation(r, "config.unseen.representations", true);
    c.unseen.train_fraction = u.real("train_fraction", c.unseen.train_fraction, 1e-9, 1 - 1e-9);
    c.unseen.threshold = u.real("threshold", c.unseen.threshold, 1e-9, 1);
    c.unseen.train_family = u.get<std::int64_t>("train_family", c.unseen.train_family);
    if (c.unseen.train_family < -1) u.bad("train_family", "must be >= -1");
    u.finish();

    auto k = root.section("knn");
    c.knn.representation = k.get<std::string>("representation", c.knn.representation);
    detail::check_representation(c.knn.representation, "config.knn.representation", false);
    c.knn.queries = k.count("queries", c.knn.queries);
    c.knn.k = k.count("k", c.knn.k);
    c.knn.query_ids = k.names("query_ids", c.knn.query_ids);
    k.finish();

    auto in = root.section("interpret");
    c.interpret.representation = in.get<std::string>("representation", c.interpret.representation);
    detail::check_representation(c.interpret.representation, "config.interpret.representation", false);
    c.interpret.tasks = in.names("tasks", c.interpret.tasks);
    c.interpret.runs = in.count("runs", c.interpret.runs, 2);
    c.interpret.quartile = in.real("quartile", c.interpret.quartile, 1e-9, 1);
    c.interpret.subsample = in.real("subsample", c.interpret.subsample, 1e-9, 1);
    c.interpret.trees = in.count("trees", c.interpret.trees);
    c.interpret.max_depth = in.count("max_depth", c.interpret.max_depth);
    in.finish();

    auto g = root.section("gradcheck");
    c.gradcheck.seeds = g.count("seeds", c.gradcheck.seeds);
    c.gradcheck.tolerance = g.real("tolerance", c.gradcheck.tolerance, 0, 1);
    g.finish();

    root.finish();
    return c;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
    if (!std::filesystem::exists(path)) fail(ErrorKind::config, "config file not found: " + path.string());
    Json j;
    try {
        j = Json::parse(read_file(path));
    } catch (const Json::exception& e) {
        fail(ErrorKind::config, path.string() + ": malformed JSON: " + e.what());
    }
    return parse_run_config(j);
}

// ---------------------------------------------------------------------------
// Artifacts
// ---------------------------------------------------------------------------

/// Seed streams, one per randomized pipeline step.
namespace stream {
inline constexpr std::uint64_t catalog = 1, word2vec = 2, agnostic = 3, cross_pairs = 4, cross_split = 5,
                               cross_dataset = 6, cross_train = 7, knn = 8, eval = 9, unseen = 10, interpret = 11,
                               gradcheck = 12, mrnet_init = 1000, mrnet_train = 2000;
}

class RunContext {
public:
    RunContext(RunConfig cfg, bool quiet = false, std::ostream* log = &std::cerr)
        : cfg_(std::move(cfg)), hash_(cfg_.hash()), quiet_(quiet), log_(log) {}

    const RunConfig& config() const { return cfg_; }
    const std::string& config_hash() const { return hash_; }
    std::filesystem::path out() const { return cfg_.out; }
    std::uint64_t seed(std::uint64_t s) const { return derive_seed(cfg_.seed, s); }

    void log(const std::string& msg) const {
        if (!quiet_ && log_) *log_ << "[" << stage_ << "] " << msg << '\n';
    }

    void set_stage(std::string stage) { stage_ = std::move(stage); }
    const std::string& stage() const { return stage_; }

    Json manifest(const std::string& kind) const {
        return Json{{"format_version", kArtifactFormatVersion}, {"kind", kind},       {"stage", stage_},
                    {"config_hash", hash_},                     {"seed", cfg_.seed}};
    }

    /// Writes `bytes` atomically plus a `<name>.manifest.json` sidecar.
    void write(const std::string& name, std::string_view bytes, const std::string& kind) const {
        write_file_atomic(out() / name, bytes);
        write_file_atomic(out() / (name + ".manifest.json"), manifest(kind).dump(2) + "\n");
        log("wrote " + (out() / name).string());
    }

    /// JSON artifacts carry their manifest inline.
    void write_json(const std::string& name, Json body, const std::string& kind) const {
        body["manifest"] = manifest(kind);
        write_file_atomic(out() / name, body.dump(2) + "\n");
        log("wrote " + (out() / name).string());
    }

    void write_checkpoint(const std::string& name, Checkpoint c) const {
        const Json m = manifest(c.manifest.value("kind", "checkpoint"));
        for (const auto& [k, v] : m.items()) {
            if (k != "format_version") c.manifest[k] = v;
        }
        save_checkpoint(out() / name, c);
        log("wrote " + (out() / name).string());
    }

    /// Path of an input: the configured override, else `name` in the output directory.
    std::filesystem::path input(const std::string& override_path, const std::string& name, const std::string& producer) const {
        std::filesystem::path p = override_path.empty() ? out() / name : std::filesystem::path(override_path);
        if (!std::filesystem::exists(p)) {
            fail(ErrorKind::data, "missing input " + p.string() + (producer.empty() ? "" : " (run " + producer + " first)"));
        }
        return p;
    }

private:
    RunConfig cfg_;
    std::string hash_;
    bool quiet_ = false;
    std::ostream* log_ = nullptr;
    std::string stage_ = "mrnet";
};

// ---------------------------------------------------------------------------
// Shared loaders
// ---------------------------------------------------------------------------

inline TaskRegistry load_registry(const RunContext& ctx) {
    return parse_task_registry(read_file(ctx.input(ctx.config().paths.tasks, "tasks.txt", "gen-catalog")));
}

inline std::vector<ProductRecord> load_run_catalog(const RunContext& ctx, const TaskRegistry& reg) {
    auto records = load_catalog(ctx.input(ctx.config().paths.catalog, "catalog.jsonl", "gen-catalog"), reg);
    if (records.empty()) fail(ErrorKind::data, "catalog has no records");
    return records;
}

inline std::size_t group_count(const std::vector<ProductRecord>& records) {
    std::uint32_t g = 0;
    for (const auto& r : records) g = std::max(g, r.group + 1);
    return g;
}

/// The registry with the decode task resized to the fitted TF-IDF dimension.
inline TaskRegistry with_decode_dim(const TaskRegistry& reg, std::size_t dim) {
    TaskRegistry out;
    for (auto t : reg.tasks()) {
        if (t.kind == TaskKind::decoding) t.cardinality = dim;
        out.add(std::move(t));
    }
    return out;
}

inline std::shared_ptr<const WordEmbeddingTable> load_run_words(const RunContext& ctx) {
    return std::make_shared<const WordEmbeddingTable>(
        load_word_vectors(ctx.input(ctx.config().paths.vectors, "words.txt", "train-word2vec")));
}

inline std::string group_file(const char* stem, std::size_t g, const char* ext) {
    return std::string(stem) + "_g" + std::to_string(g) + ext;
}

/// Per-group embedding files loaded in group order.
inline std::vector<EmbeddingFile> load_specific(const RunContext& ctx, std::size_t groups) {
    std::vector<EmbeddingFile> out;
    for (std::size_t g = 0; g < groups; ++g) out.push_back(load_embeddings(ctx.input("", group_file("specific", g, ".mrne"), "embed")));
    for (const auto& f : out) {
        if (f.dim != out.front().dim) fail(ErrorKind::data, "group embedding files disagree on dimension");
    }
    return out;
}

/// Dense vectors keyed by record id.
struct Representation {
    std::string name;
    std::size_t dim = 0;
    std::unordered_map<std::string, Vec> vectors;
};

inline Representation load_representation(const RunContext& ctx, const std::string& name) {
    Representation rep;
    rep.name = name;
    auto from_file = [&](const EmbeddingFile& f) {
        rep.dim = f.dim;
        for (std::size_t i = 0; i < f.records.size(); ++i) rep.vectors.emplace(f.records[i].id, f.vector(i));
    };
    if (name == "specific") {
        from_file(load_embeddings(ctx.input("", "specific.mrne", "embed")));
    } else if (name == "agnostic") {
        from_file(load_embeddings(ctx.input("", "agnostic.mrne", "project-agnostic")));
    } else if (name == "crosslang") {
        from_file(load_embeddings(ctx.input("", "crosslang_projected.mrne", "project-crosslang")));
    } else {
        fail(ErrorKind::config, "unknown representation '" + name + "'");
    }
    return rep;
}

/// Binary labels and design rows for the records that have both a vector and the label.
struct Design {
    Mat x;
    std::vector<int> y;
    std::vector<std::size_t> records;  // indices into the catalog
};

inline std::vector<int> binary_labels(const std::vector<ProductRecord>& records, const std::vector<std::size_t>& rows,
                                      const std::string& task) {
    std::vector<int> y;
    y.reserve(rows.size());
    for (auto i : rows) {
        const Label* l = records[i].label(task);
        if (!l || !std::holds_alternative<ClassLabel>(*l) || std::get<ClassLabel>(*l).num_classes != 2) {
            fail(ErrorKind::config, "evaluation task '" + task + "' must be a binary class label on every record");
        }
        y.push_back(static_cast<int>(std::get<ClassLabel>(*l).index));
    }
    return y;
}

inline Mat dense_rows(const Representation& rep, const std::vector<ProductRecord>& records, const std::vector<std::size_t>& rows) {
    Mat x(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(rep.dim));
    for (std::size_t r = 0; r < rows.size(); ++r) {
        auto it = rep.vectors.find(records[rows[r]].id);
        if (it == rep.vectors.end()) fail(ErrorKind::data, rep.name + " embeddings lack record " + records[rows[r]].id);
        x.row(static_cast<Eigen::Index>(r)) = it->second.transpose();
    }
    return x;
}

inline std::vector<ProductRecord> pick(const std::vector<ProductRecord>& records, const std::vector<std::size_t>& rows) {
    std::vector<ProductRecord> out;
    out.reserve(rows.size());
    for (auto i : rows) out.push_back(records[i]);
    return out;
}

/// Records with a non-empty title, in catalog order.
inline std::vector<std::size_t> titled(const std::vector<ProductRecord>& records) {
    std::vector<std::size_t> out;
    for (std::size_t i = 0; i < records.size(); ++i) {
        if (!records[i].tokens.empty()) out.push_back(i);
    }
    return out;
}

inline std::string fmt(Real v) {
    std::ostringstream s;
    s << std::setprecision(10) << v;
    return s.str();
}

inline std::string losses_csv(const std::vector<Real>& losses) {
    std::ostringstream out;
    out << "step,loss\n" << std::setprecision(10);
    for (std::size_t i = 0; i < losses.size(); ++i) out << i + 1 << ',' << losses[i] << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Gradient-check fixtures
// ---------------------------------------------------------------------------

struct GradcheckReport {
    std::string component;
    std::vector<Real> errors;  // per seed
    Real max_error() const { return errors.empty() ? 0 : *std::max_element(errors.begin(), errors.end()); }
};

/// Full MRNet on a tiny problem: d_w=4, h=3, T<=4, a 3-class, a regression and
/// a 6-dim decode head; normalizers frozen at non-unit scales.
inline GradCheckResult mrnet_micro_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    std::vector<VocabEntry> entries;
    for (std::size_t i = 0; i < 10; ++i) entries.push_back({"w" + std::to_string(i), 1, 1});
    Mat vecs(10, 4);
    for (Eigen::Index i = 0; i < vecs.size(); ++i) vecs.data()[i] = rng.normal();
    auto words = std::make_shared<const WordEmbeddingTable>(Vocab(std::move(entries)), std::move(vecs));
    const TaskRegistry tasks({{"kind", TaskKind::classification, 3}, {"price", TaskKind::regression, 1},
                              {"tfidf", TaskKind::decoding, 6}});
    MRNetModel model({CellType::lstm, 4, 3, 4}, tasks, words, derive_seed(seed, 1), 0.5);
    std::vector<ProductRecord> records;
    for (std::size_t i = 0; i < 3; ++i) {
        ProductRecord r;
        r.id = "r" + std::to_string(i);
        const std::size_t T = 2 + rng.index(3);
        for (std::size_t t = 0; t < T; ++t) r.tokens.push_back("w" + std::to_string(rng.index(10)));
        r.labels["kind"] = ClassLabel{static_cast<std::uint32_t>(rng.index(3)), 3};
        r.labels["price"] = rng.uniform(10, 50);
        r.labels["tfidf"] = SparseVector{6, {static_cast<std::uint32_t>(rng.index(3)), 4}, {0.6, 0.8}};
        records.push_back(std::move(r));
    }
    model.fit_regression_targets(records);
    const auto data = prepare_examples(model, records);
    std::vector<const PreparedExample*> batch;
    for (const auto& e : data) batch.push_back(&e);
    for (std::size_t h = 0; h < model.heads().size(); ++h) model.heads()[h].normalizer.apply(0.5 + static_cast<Real>(h + seed % 3));
    return grad_check([&](ParamStore&) { return batch_loss_and_grad(model, batch, {0, 1, 2}, NormalizerMode::frozen).total; },
                      model.params());
}

inline GradCheckResult sparse_ae_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    SparseAEModel m(6, 4, 0.1, 0.5);
    for (auto& t : m.params()) fill_uniform(t.value, rng, -0.5, 0.5);
    std::vector<Vec> xs;
    for (int i = 0; i < 4; ++i) {
        Vec v(6);
        for (Eigen::Index k = 0; k < 6; ++k) v(k) = rng.normal();
        xs.push_back(v);
    }
    std::vector<const Vec*> batch;
    for (const auto& v : xs) batch.push_back(&v);
    return grad_check([&](ParamStore&) { return sparse_ae_loss_and_grad(m, batch).total; }, m.params());
}

inline GradCheckResult cross_ae_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    CrossAEModel m(3, 4);
    for (auto& t : m.params()) fill_uniform(t.value, rng, -0.6, 0.6);
    Mat x(5, 6), y(5, 6);
    for (Eigen::Index i = 0; i < x.size(); ++i) {
        x.data()[i] = rng.normal();
        y.data()[i] = rng.normal();
    }
    return grad_check([&](ParamStore&) { return cross_ae_loss_and_grad(m, x, y); }, m.params());
}

inline GradCheckResult logreg_gradcheck(std::uint64_t seed) {
    Rng rng(seed);
    Mat x(8, 3);
    for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = rng.normal();
    std::vector<int> y{0, 1, 0, 1, 1, 0, 1, 0};
    ParamStore store;
    const auto w = store.add("w", 3, 1), b = store.add("b", 1, 1);
    for (auto& t : store) fill_uniform(t.value, rng, -0.5, 0.5);
    auto loss = [&](ParamStore& s) {
        LogRegModel m{s.value(w).col(0), s.value(b)(0, 0)};
        Vec dw;
        Real db = 0;
        const Real l = logreg_loss(m, x, y, 0.1, &dw, &db);
        s.grad(w).col(0) += dw;
        s.grad(b)(0, 0) += db;
        return l;
    };
    return grad_check(loss, store);
}

// ---------------------------------------------------------------------------
// Stages
// ---------------------------------------------------------------------------

inline CatalogSpec run_catalog_spec(const RunContext& ctx) {
    const auto& c = ctx.config().catalog;
    CatalogSpec spec = default_catalog_spec(c.products, c.groups, ctx.seed(stream::catalog), c.families);
    spec.noise_rate = c.noise_rate;
    spec.label_noise = c.label_noise;
    spec.label_coverage = c.label_coverage;
    spec.weight_noise = c.weight_noise;
    return spec;
}

inline void stage_gen_catalog(const RunContext& ctx) {
    const auto spec = run_catalog_spec(ctx);
    const auto records = generate_catalog(spec);
    ctx.write("catalog.jsonl", serialize_catalog(records), "catalog");
    ctx.write("tasks.txt", format_task_registry(catalog_task_registry(spec, ctx.config().tfidf.dim)), "task_registry");
    ctx.log(std::to_string(records.size()) + " records in " + std::to_string(spec.groups.size()) + " groups");
}

inline void stage_train_word2vec(const RunContext& ctx) {
    const auto records = load_run_catalog(ctx, load_registry(ctx));
    Word2VecConfig wc = ctx.config().word2vec;
    wc.seed = ctx.seed(stream::word2vec);
    const auto res = train_word2vec(records, wc);
    for (Real l : res.epoch_losses) {
        if (!std::isfinite(l)) fail(ErrorKind::divergence, "word2vec loss is not finite");
    }
    ctx.write("words.txt", format_word_vectors(res.table), "word_vectors");
    ctx.write("word2vec_loss.csv", losses_csv(res.epoch_losses), "loss_log");
    ctx.log("vocabulary " + std::to_string(res.table.size()) + ", final epoch loss " + fmt(res.epoch_losses.back()));
}

inline void stage_train_mrnet(const RunContext& ctx) {
    const auto& cfg = ctx.config();
    const auto reg = load_registry(ctx);
    auto records = load_run_catalog(ctx, reg);
    const auto words = load_run_words(ctx);

    const auto tfidf = build_tfidf(records, cfg.tfidf.dim, cfg.tfidf.min_df);
    ctx.write_json("tfidf.json", tfidf.to_json(), "tfidf");
    const auto full = with_decode_dim(reg, tfidf.dim());
    for (const auto& t : full.tasks()) {
        if (t.kind == TaskKind::decoding) attach_decode_targets(records, tfidf, t.name);
    }
    const auto tasks = full.subset(cfg.mrnet.tasks);

    EncoderConfig ec;
    ec.cell = parse_cell_type(cfg.mrnet.cell);
    ec.input_dim = words->dim();
    ec.hidden = cfg.mrnet.hidden;
    ec.max_len = cfg.mrnet.max_len;
    ec.init_scale = cfg.mrnet.init_scale;

    const std::size_t G = group_count(records);
    for (std::size_t g = 0; g < G; ++g) {
        std::vector<ProductRecord> group;
        for (const auto& r : records) {
            if (r.group == g) group.push_back(r);
        }
        if (group.empty()) fail(ErrorKind::data, "group " + std::to_string(g) + " has no records");
        MRNetModel model(ec, tasks, words, ctx.seed(stream::mrnet_init + g));
        model.group = static_cast<std::int64_t>(g);
        TrainConfig tc;
        tc.mode = parse_train_mode(cfg.mrnet.mode);
        tc.batch_size = cfg.mrnet.batch_size;
        tc.steps = cfg.mrnet.steps;
        tc.per_task_cap = cfg.mrnet.per_task_cap;
        tc.seed = ctx.seed(stream::mrnet_train + g);
        tc.adam.lr = cfg.mrnet.lr;
        tc.normalizer_decay = cfg.mrnet.normalizer_decay;
        const auto log = train(model, group, tc);
        ctx.write_checkpoint(group_file("mrnet", g, ".ckpt"), to_checkpoint(model));
        ctx.write(group_file("mrnet", g, "_loss.csv"), log.to_csv(), "loss_log");
        std::ostringstream s;
        s << "group " << g << ":";
        for (const auto& h : model.heads()) s << ' ' << h.spec.name << '=' << fmt(evaluate_head(model, group, h.spec.name));
        ctx.log(s.str());
    }
}

inline void stage_embed(const RunContext& ctx) {
    const auto records = load_run_catalog(ctx, load_registry(ctx));
    const auto words = load_run_words(ctx);
    const std::size_t G = group_count(records);
    std::vector<EmbeddingFile> files;
    std::size_t skipped = 0;
    for (std::size_t g = 0; g < G; ++g) {
        const auto model = mrnet_from_checkpoint(load_checkpoint(ctx.input("", group_file("mrnet", g, ".ckpt"), "train-mrnet")), words);
        std::vector<ProductRecord> group;
        for (const auto& r : records) {
            if (r.group == g) group.push_back(r);
        }
        auto res = embed_catalog(model, group);
        skipped += res.skipped;
        ctx.write(group_file("specific", g, ".mrne"), encode_embeddings(res.file), "embeddings");
        files.push_back(std::move(res.file));
    }
    // Block layout over all groups, in catalog order.
    const std::size_t d = files.front().dim;
    std::vector<std::unordered_map<std::string, std::size_t>> index;
    for (const auto& f : files) index.push_back(f.id_index());
    EmbeddingFile block;
    block.dim = static_cast<std::uint32_t>(G * d);
    for (const auto& r : records) {
        auto it = index[r.group].find(r.id);
        if (it == index[r.group].end()) continue;
        block.add(r.id, block_embed(r.group + 1, files[r.group].vector(it->second), G, d));
    }
    ctx.write("specific.mrne", encode_embeddings(block), "embeddings");
    ctx.log(std::to_string(block.records.size()) + " embedded, " + std::to_string(skipped) + " skipped (empty title)");
}

namespace detail {

struct BlockInputs {
    std::vector<std::string> ids;
    std::vector<Vec> inputs;
    std::vector<std::size_t> groups;
    std::size_t d = 0;
};

inline BlockInputs block_inputs(const RunContext& ctx) {
    const auto records = load_run_catalog(ctx, load_registry(ctx));
    const std::size_t G = group_count(records);
    const auto files = load_specific(ctx, G);
    BlockInputs out;
    out.d = files.front().dim;
    std::vector<std::unordered_map<std::string, std::size_t>> index;
    for (const auto& f : files) index.push_back(f.id_index());
    for (const auto& r : records) {
        auto it = index[r.group].find(r.id);
        if (it == index[r.group].end()) continue;
        out.ids.push_back(r.id);
        out.inputs.push_back(block_embed(r.group + 1, files[r.group].vector(it->second), G, out.d));
        out.groups.push_back(r.group);
    }
    if (out.inputs.empty()) fail(ErrorKind::data, "no group embeddings to project");
    return out;
}

}  // namespace detail

inline void stage_train_agnostic(const RunContext& ctx) {
    const auto& a = ctx.config().agnostic;
    const auto in = detail::block_inputs(ctx);
    SparseAEConfig sc;
    sc.rho = a.rho;
    sc.beta = a.beta;
    sc.batch_size = a.batch_size;
    sc.steps = a.steps;
    sc.balance_groups = a.balance_groups;
    sc.seed = ctx.seed(stream::agnostic);
    sc.adam.lr = a.lr;
    auto res = train_sparse_ae(in.inputs, in.groups, in.d, sc);
    if (!all_finite(res.model.params())) fail(ErrorKind::divergence, "sparse autoencoder parameters diverged");
    ctx.write_checkpoint("agnostic.ckpt", to_checkpoint(res.model));
    ctx.write("agnostic_loss.csv", losses_csv(res.losses), "loss_log");
    ctx.log("loss " + fmt(res.losses.front()) + " -> " + fmt(res.losses.back()));
}

inline void stage_project_agnostic(const RunContext& ctx) {
    const auto model = sparse_ae_from_checkpoint(load_checkpoint(ctx.input("", "agnostic.ckpt", "train-agnostic")));
    const auto in = detail::block_inputs(ctx);
    EmbeddingFile out;
    out.dim = static_cast<std::uint32_t>(model.hidden_dim());
    Real mean_act = 0;
    for (std::size_t i = 0; i < in.inputs.size(); ++i) {
        const Vec h = project_agnostic(model, in.inputs[i]);
        mean_act += h.mean();
        out.add(in.ids[i], h);
    }
    ctx.write("agnostic.mrne", encode_embeddings(out), "embeddings");
    ctx.log("mean hidden activation " + fmt(mean_act / static_cast<Real>(in.inputs.size())));
}

inline void stage_train_crosslang(const RunContext& ctx) {
    const auto& cfg = ctx.config();
    const auto a = load_embeddings(ctx.input(cfg.paths.region_a, "agnostic.mrne", "project-agnostic"));
    std::vector<PairedEmbedding> pairs;
    if (cfg.paths.region_b.empty()) {
        // No second region supplied: synthesize one as a noisy rotation of the first.
        pairs = make_rotated_pairs(a, cfg.crosslang.noise, ctx.seed(stream::cross_pairs));
        EmbeddingFile b;
        b.dim = a.dim;
        Alignment alignment;
        for (const auto& p : pairs) {
            b.add(p.id + "@b", p.b);
            alignment.emplace_back(p.id, p.id + "@b");
        }
        ctx.write("region_b.mrne", encode_embeddings(b), "embeddings");
        ctx.write("alignment.tsv", format_alignment(alignment), "alignment");
    } else {
        const auto b = load_embeddings(ctx.input(cfg.paths.region_b, "", ""));
        const auto alignment = parse_alignment(read_file(ctx.input(cfg.paths.alignment, "alignment.tsv", "")));
        pairs = join_pairs(a, b, alignment);
    }
    if (pairs.size() < 2) fail(ErrorKind::data, "cross-region training needs at least 2 aligned pairs");
    Rng rng(ctx.seed(stream::cross_split));
    rng.shuffle(pairs);
    const auto n_train = std::clamp<std::size_t>(
        static_cast<std::size_t>(std::llround(cfg.crosslang.train_fraction * static_cast<Real>(pairs.size()))), 1, pairs.size());
    const std::vector<PairedEmbedding> train(pairs.begin(), pairs.begin() + static_cast<std::ptrdiff_t>(n_train));
    const std::vector<PairedEmbedding> held(pairs.begin() + static_cast<std::ptrdiff_t>(n_train), pairs.end());

    CrossAEConfig xc;
    xc.hidden = cfg.crosslang.hidden;
    xc.batch_size = cfg.crosslang.batch_size;
    xc.steps = cfg.crosslang.steps;
    xc.seed = ctx.seed(stream::cross_train);
    xc.adam.lr = cfg.crosslang.lr;
    auto res = train_multimodal_ae(make_pairs_dataset(train, ctx.seed(stream::cross_dataset)), xc);
    if (!all_finite(res.model.params())) fail(ErrorKind::divergence, "cross-region autoencoder parameters diverged");
    ctx.write_checkpoint("crosslang.ckpt", to_checkpoint(res.model));
    ctx.write("crosslang_loss.csv", losses_csv(res.losses), "loss_log");

    Json report{{"train_pairs", train.size()},
                {"held_pairs", held.size()},
                {"top1_train", top1_retrieval(res.model, train)},
                {"random_baseline_train", 1.0 / static_cast<Real>(train.size())}};
    if (!held.empty()) {
        report["top1_held"] = top1_retrieval(res.model, held);
        report["top1_held_reverse"] = top1_retrieval(res.model, held, CrossDirection::a_to_b);
        report["random_baseline_held"] = 1.0 / static_cast<Real>(held.size());
    }
    ctx.write_json("crosslang_retrieval.json", report, "retrieval_report");
    ctx.log("top-1 retrieval (train) " + fmt(report["top1_train"].get<Real>()));
}

inline void stage_project_crosslang(const RunContext& ctx) {
    const auto& cfg = ctx.config();
    const auto model = cross_ae_from_checkpoint(load_checkpoint(ctx.input("", "crosslang.ckpt", "train-crosslang")));
    const auto b = load_embeddings(ctx.input(cfg.paths.region_b, "region_b.mrne", "train-crosslang"));
    if (b.dim != model.region_dim()) fail(ErrorKind::data, "region embeddings do not match the cross-region model dimension");
    EmbeddingFile out;
    out.dim = b.dim;
    for (std::size_t i = 0; i < b.records.size(); ++i) out.add(b.records[i].id, project_cross(model, b.vector(i)));
    ctx.write("crosslang_projected.mrne", encode_embeddings(out), "embeddings");
}

inline void stage_knn(const RunContext& ctx) {
    const auto& kc = ctx.config().knn;
    const std::string file = kc.representation == "specific"   ? "specific.mrne"
                             : kc.representation == "agnostic" ? "agnostic.mrne"
                                                                : "crosslang_projected.mrne";
    const auto emb = load_embeddings(ctx.input("", file, kc.representation == "specific" ? "embed" : ""));
    if (emb.records.empty()) fail(ErrorKind::data, file + " is empty");
    const KnnIndex index(emb);
    const auto ids = emb.id_index();
    std::vector<std::size_t> queries;
    if (!kc.query_ids.empty()) {
        for (const auto& q : kc.query_ids) {
            auto it = ids.find(q);
            if (it == ids.end()) fail(ErrorKind::data, "knn query id '" + q + "' not in " + file);
            queries.push_back(it->second);
        }
    } else {
        std::vector<std::size_t> all(emb.records.size());
        std::iota(all.begin(), all.end(), 0);
        Rng rng(ctx.seed(stream::knn));
        rng.shuffle(all);
        all.resize(std::min(kc.queries, all.size()));
        std::sort(all.begin(), all.end());
        queries = all;
    }
    std::ostringstream out;
    out << "query\trank\tneighbor\tdistance\n" << std::setprecision(9);
    for (auto q : queries) {
        const auto& qid = emb.records[q].id;
        std::size_t rank = 0;
        for (const auto& n : knn(index, emb.vector(q), kc.k + 1)) {
            if (n.id == qid || rank == kc.k) continue;
            out << qid << '\t' << ++rank << '\t' << n.id << '\t' << n.distance << '\n';
        }
    }
    ctx.write("knn.tsv", out.str(), "knn");
}

namespace detail {

inline ClassifierConfig classifier_config(const RunContext& ctx, std::uint64_t seed) {
    const auto& e = ctx.config().eval;
    ClassifierConfig cc;
    cc.logreg.l2 = e.l2;
    cc.logreg.iterations = e.iterations;
    cc.forest.trees = e.trees;
    cc.forest.max_depth = e.max_depth;
    cc.forest.seed = seed;
    return cc;
}

inline Classifier parse_classifier(const std::string& s) { return s == "forest" ? Classifier::forest : Classifier::logreg; }

inline void require_both_classes(const std::vector<int>& y, const std::string& task, const std::string& where) {
    const auto pos = std::count(y.begin(), y.end(), 1);
    if (pos == 0 || pos == static_cast<std::ptrdiff_t>(y.size())) {
        fail(ErrorKind::data, where + ": task '" + task + "' has a single class");
    }
}

}  // namespace detail

inline void stage_eval(const RunContext& ctx) {
    const auto& e = ctx.config().eval;
    const auto records = load_run_catalog(ctx, load_registry(ctx));
    const auto rows = titled(records);
    if (rows.size() < e.folds) fail(ErrorKind::data, "eval: fewer titled records than folds");
    const auto cc = detail::classifier_config(ctx, ctx.seed(stream::eval));
    std::vector<EvalRow> report;
    for (const auto& rep : e.representations) {
        Mat x;
        if (rep == "tfidf") {
            // Unsupervised vocabulary over all evaluated titles.
            const auto sub = pick(records, rows);
            x = tfidf_matrix(build_tfidf(sub, e.tfidf_dim, e.tfidf_min_df), sub);
        } else {
            x = dense_rows(load_representation(ctx, rep), records, rows);
        }
        for (const auto& task : e.tasks) {
            const auto y = binary_labels(records, rows, task);
            detail::require_both_classes(y, task, "eval");
            for (const auto& cl : e.classifiers) {
                const auto aucs = cross_validate_auc(x, y, detail::parse_classifier(cl), cc, e.folds, ctx.seed(stream::eval));
                for (std::size_t f = 0; f < aucs.size(); ++f) report.push_back({task, rep, cl, f, "auc", aucs[f]});
                ctx.log(task + " " + rep + "-" + cl + " auc " + fmt(mean(aucs)));
            }
        }
    }
    ctx.write("eval.csv", report_csv(report), "eval_report");
    ctx.write("eval_summary.txt", summary_table(report), "eval_summary");
}

struct UnseenResult {
    UnseenSplit split;
    std::vector<EvalRow> rows;  // fold 0, metric "auc"
};

/// Classifiers fitted on the training population and scored on the filtered
/// test population. TF-IDF vocabulary comes from the training titles only.
inline UnseenResult unseen_evaluate(const RunContext& ctx, const std::vector<ProductRecord>& records) {
    const auto& u = ctx.config().unseen;
    UnseenResult out;
    if (u.train_family < 0) {
        out.split = unseen_split(records, u.train_fraction, u.threshold, ctx.seed(stream::unseen));
    } else {
        std::vector<std::size_t> train, candidates;
        Rng rng(ctx.seed(stream::unseen));
        for (std::size_t i = 0; i < records.size(); ++i) {
            const bool in_family = records[i].class_of("family") == static_cast<std::uint32_t>(u.train_family);
            if (in_family && !records[i].tokens.empty() && rng.bernoulli(u.train_fraction)) {
                train.push_back(i);
            } else {
                candidates.push_back(i);
            }
        }
        if (train.empty()) fail(ErrorKind::data, "unseen: training family " + std::to_string(u.train_family) + " is empty");
        out.split = unseen_filter(records, std::move(train), candidates, u.threshold);
    }
    if (out.split.test.empty()) fail(ErrorKind::data, "unseen: no test records survive the overlap threshold");
    const auto ytr = binary_labels(records, out.split.train, u.task);
    const auto yte = binary_labels(records, out.split.test, u.task);
    detail::require_both_classes(ytr, u.task, "unseen train");
    detail::require_both_classes(yte, u.task, "unseen test");
    const auto cc = detail::classifier_config(ctx, ctx.seed(stream::unseen));
    for (const auto& rep : u.representations) {
        Mat xtr, xte;
        if (rep == "tfidf") {
            const auto tr = pick(records, out.split.train);
            const auto model = build_tfidf(tr, ctx.config().eval.tfidf_dim, ctx.config().eval.tfidf_min_df);
            xtr = tfidf_matrix(model, tr);
            xte = tfidf_matrix(model, pick(records, out.split.test));
        } else {
            const auto r = load_representation(ctx, rep);
            xtr = dense_rows(r, records, out.split.train);
            xte = dense_rows(r, records, out.split.test);
        }
        for (const auto& cl : ctx.config().eval.classifiers) {
            const Vec s = fit_and_score(detail::parse_classifier(cl), xtr, ytr, xte, cc);
            out.rows.push_back({u.task, rep, cl, 0, "auc", auc(s, yte)});
        }
    }
    return out;
}

inline void stage_unseen_split(const RunContext& ctx) {
    const auto& u = ctx.config().unseen;
    const auto records = load_run_catalog(ctx, load_registry(ctx));
    const auto res = unseen_evaluate(ctx, records);
    auto ids = [&](const std::vector<std::size_t>& ix) {
        std::vector<std::string> v;
        for (auto i : ix) v.push_back(records[i].id);
        return v;
    };
    ctx.write_json("unseen_split.json",
                   {{"task", u.task}, {"threshold", u.threshold}, {"train_family", u.train_family},
                    {"removed", res.split.removed}, {"empty_titles", res.split.empty_titles},
                    {"train", ids(res.split.train)}, {"test", ids(res.split.test)}},
                   "unseen_split");
    ctx.write("unseen.csv", report_csv(res.rows), "eval_report");
    ctx.log("train " + std::to_string(res.split.train.size()) + ", test " + std::to_string(res.split.test.size()) +
            ", removed " + std::to_string(res.split.removed));
    for (const auto& r : res.rows) ctx.log(r.representation + "-" + r.classifier + " auc " + fmt(r.value));
}

inline void stage_interpret(const RunContext& ctx) {
    const auto& in = ctx.config().interpret;
    const auto records = load_run_catalog(ctx, load_registry(ctx));
    const auto rows = titled(records);
    const Mat x = dense_rows(load_representation(ctx, in.representation), records, rows);
    Json body{{"representation", in.representation},
              {"top_set_size", top_set_size(static_cast<std::size_t>(x.cols()), in.quartile)},
              {"tasks", Json::object()}};
    for (const auto& task : in.tasks) {
        const auto y = binary_labels(records, rows, task);
        detail::require_both_classes(y, task, "interpret");
        ImportanceOverlapConfig ic;
        ic.runs = in.runs;
        ic.quartile = in.quartile;
        ic.subsample = in.subsample;
        ic.forest.trees = in.trees;
        ic.forest.max_depth = in.max_depth;
        ic.seed = ctx.seed(stream::interpret);
        const auto s = importance_overlap(x, y, ic);
        body["tasks"][task] = {{"stable_features", s.features}, {"run_tops", s.run_tops}};
        ctx.log(task + ": " + std::to_string(s.features.size()) + " stable features");
    }
    ctx.write_json("interpret.json", body, "interpretation");
}

inline std::vector<GradcheckReport> run_gradchecks(std::size_t seeds, std::uint64_t master) {
    const std::vector<std::pair<std::string, std::function<GradCheckResult(std::uint64_t)>>> checks{
        {"mrnet", mrnet_micro_gradcheck}, {"sparse_ae", sparse_ae_gradcheck}, {"cross_ae", cross_ae_gradcheck},
        {"logreg", logreg_gradcheck}};
    std::vector<GradcheckReport> out;
    for (const auto& [name, fn] : checks) {
        GradcheckReport r{name, {}};
        for (std::size_t s = 0; s < seeds; ++s) r.errors.push_back(fn(derive_seed(master, s)).max_relative_error);
        out.push_back(std::move(r));
    }
    return out;
}

inline void stage_gradcheck(const RunContext& ctx) {
    const auto& gc = ctx.config().gradcheck;
    const auto reports = run_gradchecks(gc.seeds, ctx.seed(stream::gradcheck));
    Json body{{"tolerance", gc.tolerance}, {"components", Json::object()}};
    std::string worst;
    Real worst_err = 0;
    for (const auto& r : reports) {
        body["components"][r.component] = {{"max_relative_error", r.max_error()}, {"per_seed", r.errors}};
        ctx.log(r.component + " max relative error " + fmt(r.max_error()));
        if (!(r.max_error() <= worst_err)) {
            worst_err = r.max_error();
            worst = r.component;
        }
    }
    body["passed"] = worst_err < gc.tolerance;
    ctx.write_json("gradcheck.json", body, "gradcheck");
    if (!(worst_err < gc.tolerance)) {
        fail(ErrorKind::divergence, "gradient check failed: " + worst + " relative error " + fmt(worst_err) + " >= " + fmt(gc.tolerance));
    }
}

// ---------------------------------------------------------------------------
// Dispatch
// ---------------------------------------------------------------------------

struct Command {
    std::string name;
    std::string help;
    void (*run)(const RunContext&);
};

inline const std::vector<Command>& commands() {
    static const std::vector<Command> all{
        {"gen-catalog", "generate the synthetic catalog and task registry", stage_gen_catalog},
        {"train-word2vec", "train skip-gram word vectors on catalog titles", stage_train_word2vec},
        {"train-mrnet", "train one multi-task title encoder per product group", stage_train_mrnet},
        {"embed", "export group-specific product embeddings", stage_embed},
        {"train-agnostic", "train the sparse autoencoder over group blocks", stage_train_agnostic},
        {"project-agnostic", "project products into the group-agnostic space", stage_project_agnostic},
        {"train-crosslang", "train the cross-region autoencoder on aligned pairs", stage_train_crosslang},
        {"project-crosslang", "project region-B embeddings into region A", stage_project_crosslang},
        {"knn", "nearest neighbours of sampled products", stage_knn},
        {"eval", "cross-validated downstream AUC against the TF-IDF baseline", stage_eval},
        {"unseen-split", "AUC on a title-disjoint test population", stage_unseen_split},
        {"interpret", "stable random-forest importances per task", stage_interpret},
        {"gradcheck", "finite-difference checks of every analytic gradient", stage_gradcheck},
    };
    return all;
}

inline const Command* find_command(const std::string& name) {
    for (const auto& c : commands()) {
        if (c.name == name) return &c;
    }
    return nullptr;
}

inline void run_command(const std::string& name, RunContext& ctx) {
    const Command* c = find_command(name);
    if (!c) fail(ErrorKind::config, "unknown subcommand '" + name + "'");
    ctx.set_stage(name);
    c->run(ctx);
}

/// Every stage in dependency order.
inline const std::vector<std::string>& pipeline_order() {
    static const std::vector<std::string> order{"gen-catalog",      "train-word2vec",  "train-mrnet",       "embed",
                                                "train-agnostic",   "project-agnostic", "train-crosslang", "project-crosslang",
                                                "knn",              "eval",             "unseen-split",    "interpret"};
    return order;
}

}  // namespace mrnet

#endif  // MRNET_PIPELINE_HPP
