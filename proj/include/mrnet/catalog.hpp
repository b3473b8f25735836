#ifndef MRNET_CATALOG_HPP
#define MRNET_CATALOG_HPP

#include "mrnet/core.hpp"
#include "mrnet/io.hpp"

#include <algorithm>
#include <cctype>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <variant>
#include <vector>

namespace mrnet {

// ---------------------------------------------------------------------------
// Task registry
// ---------------------------------------------------------------------------

enum class TaskKind { classification, regression, decoding };

inline const char* to_string(TaskKind k) {
    switch (k) {
        case TaskKind::classification: return "class";
        case TaskKind::regression: return "scalar";
        case TaskKind::decoding: return "decode";
    }
    return "?";
}

inline TaskKind parse_task_kind(const std::string& s) {
    if (s == "class" || s == "classification") return TaskKind::classification;
    if (s == "scalar" || s == "regression") return TaskKind::regression;
    if (s == "decode" || s == "decoding") return TaskKind::decoding;
    fail(ErrorKind::config, "unknown task kind '" + s + "'");
}

struct TaskSpec {
    std::string name;
    TaskKind kind = TaskKind::classification;
    /// Number of classes, 1 for regression, target dimension for decoding.
    std::size_t cardinality = 1;

    std::size_t output_dim() const { return kind == TaskKind::regression ? 1 : cardinality; }
    bool operator==(const TaskSpec&) const = default;
};

class TaskRegistry {
public:
    TaskRegistry() = default;
    explicit TaskRegistry(std::vector<TaskSpec> tasks) {
        for (auto& t : tasks) add(std::move(t));
    }

    void add(TaskSpec t) {
        if (t.name.empty()) fail(ErrorKind::config, "task registry: empty task name");
        if (find(t.name)) fail(ErrorKind::config, "task registry: duplicate task " + t.name);
        if (t.kind == TaskKind::regression) t.cardinality = 1;
        if (t.kind == TaskKind::classification && t.cardinality < 2) {
            fail(ErrorKind::config, "task registry: class task " + t.name + " needs >= 2 classes");
        }
        if (t.kind == TaskKind::decoding && t.cardinality < 1) {
            fail(ErrorKind::config, "task registry: decode task " + t.name + " needs dimension >= 1");
        }
        tasks_.push_back(std::move(t));
    }

    const TaskSpec* find(const std::string& name) const {
        for (const auto& t : tasks_) {
            if (t.name == name) return &t;
        }
        return nullptr;
    }

    const TaskSpec& at(const std::string& name) const {
        const TaskSpec* t = find(name);
        if (!t) fail(ErrorKind::config, "unknown task '" + name + "'");
        return *t;
    }

    /// Registry restricted to the named tasks, in the given order.
    TaskRegistry subset(const std::vector<std::string>& names) const {
        TaskRegistry out;
        for (const auto& n : names) out.add(at(n));
        return out;
    }

    const std::vector<TaskSpec>& tasks() const { return tasks_; }
    std::size_t size() const { return tasks_.size(); }

private:
    std::vector<TaskSpec> tasks_;
};

/// Plain-text registry: one "name kind cardinality" triple per line, '#' comments.
inline TaskRegistry parse_task_registry(const std::string& text) {
    TaskRegistry reg;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (auto hash = line.find('#'); hash != std::string::npos) line.resize(hash);
        std::istringstream ls(line);
        std::string name, kind;
        if (!(ls >> name)) continue;
        long long card = 1;
        if (!(ls >> kind)) fail(ErrorKind::config, "task registry line " + std::to_string(lineno) + ": missing kind");
        if (!(ls >> card) || card < 1) {
            fail(ErrorKind::config, "task registry line " + std::to_string(lineno) + ": bad cardinality");
        }
        std::string extra;
        if (ls >> extra) fail(ErrorKind::config, "task registry line " + std::to_string(lineno) + ": trailing text");
        reg.add({name, parse_task_kind(kind), static_cast<std::size_t>(card)});
    }
    return reg;
}

inline std::string format_task_registry(const TaskRegistry& reg) {
    std::ostringstream out;
    out << "# name kind cardinality\n";
    for (const auto& t : reg.tasks()) out << t.name << ' ' << to_string(t.kind) << ' ' << t.cardinality << '\n';
    return out.str();
}

// ---------------------------------------------------------------------------
// Records and labels
// ---------------------------------------------------------------------------

struct ClassLabel {
    std::uint32_t index = 0;
    std::uint32_t num_classes = 2;
    bool operator==(const ClassLabel&) const = default;
};

struct SparseVector {
    std::uint32_t dim = 0;
    std::vector<std::uint32_t> indices;  // strictly increasing
    std::vector<Real> values;

    bool operator==(const SparseVector&) const = default;

    Vec dense() const {
        Vec v = Vec::Zero(dim);
        for (std::size_t k = 0; k < indices.size(); ++k) v(indices[k]) = values[k];
        return v;
    }
    Real norm() const {
        Real s = 0;
        for (Real x : values) s += x * x;
        return std::sqrt(s);
    }
};

using Label = std::variant<ClassLabel, Real, SparseVector>;

inline TaskKind label_kind(const Label& l) {
    if (std::holds_alternative<ClassLabel>(l)) return TaskKind::classification;
    if (std::holds_alternative<Real>(l)) return TaskKind::regression;
    return TaskKind::decoding;
}

struct ProductRecord {
    std::string id;
    std::uint32_t group = 0;
    std::vector<std::string> tokens;
    std::map<std::string, Label> labels;

    bool operator==(const ProductRecord&) const = default;

    const Label* label(const std::string& task) const {
        auto it = labels.find(task);
        return it == labels.end() ? nullptr : &it->second;
    }
    std::uint32_t class_of(const std::string& task) const {
        const Label* l = label(task);
        if (!l || !std::holds_alternative<ClassLabel>(*l)) fail(ErrorKind::data, id + ": no class label " + task);
        return std::get<ClassLabel>(*l).index;
    }
    Real scalar_of(const std::string& task) const {
        const Label* l = label(task);
        if (!l || !std::holds_alternative<Real>(*l)) fail(ErrorKind::data, id + ": no scalar label " + task);
        return std::get<Real>(*l);
    }
};

/// Checks a label against its registry entry; returns an error message or empty.
inline std::string check_label(const TaskSpec& task, const Label& l) {
    if (label_kind(l) != task.kind) {
        return "task " + task.name + " expects a " + to_string(task.kind) + " label";
    }
    if (const auto* c = std::get_if<ClassLabel>(&l)) {
        if (c->num_classes != task.cardinality) {
            return "task " + task.name + " has " + std::to_string(task.cardinality) + " classes, label says " +
                   std::to_string(c->num_classes);
        }
        if (c->index >= c->num_classes) {
            return "task " + task.name + ": class index " + std::to_string(c->index) + " >= " +
                   std::to_string(c->num_classes);
        }
    } else if (const auto* s = std::get_if<SparseVector>(&l)) {
        if (s->dim != task.cardinality) {
            return "task " + task.name + ": decode dimension " + std::to_string(s->dim) + " != " +
                   std::to_string(task.cardinality);
        }
        if (s->indices.size() != s->values.size()) return "task " + task.name + ": ragged sparse vector";
        for (std::size_t k = 0; k < s->indices.size(); ++k) {
            if (s->indices[k] >= s->dim || (k > 0 && s->indices[k] <= s->indices[k - 1])) {
                return "task " + task.name + ": sparse indices must be increasing and < dimension";
            }
        }
    } else if (!std::isfinite(std::get<Real>(l))) {
        return "task " + task.name + ": non-finite scalar";
    }
    return {};
}

// ---------------------------------------------------------------------------
// Tokenization
// ---------------------------------------------------------------------------

/// Lowercases and splits on anything that is not an ASCII letter or digit.
/// Bytes >= 0x80 are kept so UTF-8 words survive intact.
inline std::vector<std::string> tokenize(std::string_view title) {
    std::vector<std::string> out;
    std::string cur;
    for (char ch : title) {
        const auto c = static_cast<unsigned char>(ch);
        if (std::isalnum(c) || c >= 0x80) {
            cur.push_back(static_cast<char>(c < 0x80 ? std::tolower(c) : c));
        } else if (!cur.empty()) {
            out.push_back(std::move(cur));
            cur.clear();
        }
    }
    if (!cur.empty()) out.push_back(std::move(cur));
    return out;
}

inline std::string join_tokens(const std::vector<std::string>& tokens) {
    std::string s;
    for (std::size_t i = 0; i < tokens.size(); ++i) {
        if (i) s.push_back(' ');
        s += tokens[i];
    }
    return s;
}

// ---------------------------------------------------------------------------
// Catalog JSONL
// ---------------------------------------------------------------------------

inline Json label_to_json(const Label& l) {
    if (const auto* c = std::get_if<ClassLabel>(&l)) return Json{{"c", c->index}, {"k", c->num_classes}};
    if (const auto* s = std::get_if<SparseVector>(&l)) return Json{{"d", s->dim}, {"i", s->indices}, {"v", s->values}};
    return Json(std::get<Real>(l));
}

inline std::string serialize_record(const ProductRecord& r) {
    Json j;
    j["id"] = r.id;
    j["group"] = r.group;
    j["title"] = join_tokens(r.tokens);
    Json labels = Json::object();
    for (const auto& [name, l] : r.labels) labels[name] = label_to_json(l);
    j["labels"] = std::move(labels);
    return j.dump();
}

inline std::string serialize_catalog(const std::vector<ProductRecord>& records) {
    std::string out;
    for (const auto& r : records) {
        out += serialize_record(r);
        out.push_back('\n');
    }
    return out;
}

/// Parses JSONL catalog text. `groups` bounds the group index when non-zero.
inline std::vector<ProductRecord> parse_catalog(const std::string& text, const TaskRegistry& registry,
                                                std::uint32_t groups = 0) {
    std::vector<ProductRecord> records;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    std::set<std::string> seen_ids;
    auto bad = [&](const std::string& why) { fail(ErrorKind::data, "catalog line " + std::to_string(lineno) + ": " + why); };
    while (std::getline(in, line)) {
        ++lineno;
        if (line.find_first_not_of(" \t\r") == std::string::npos) continue;
        Json j;
        try {
            j = Json::parse(line);
        } catch (const Json::exception& e) {
            bad(std::string("malformed JSON: ") + e.what());
        }
        try {
            if (!j.is_object()) bad("record is not an object");
            for (const auto& [key, _] : j.items()) {
                if (key != "id" && key != "group" && key != "title" && key != "labels") bad("unknown field '" + key + "'");
            }
            ProductRecord r;
            r.id = j.at("id").get<std::string>();
            if (r.id.empty()) bad("empty id");
            if (!seen_ids.insert(r.id).second) bad("duplicate id " + r.id);
            const auto g = j.at("group").get<std::int64_t>();
            if (g < 0 || (groups && g >= static_cast<std::int64_t>(groups))) bad("group " + std::to_string(g) + " out of range");
            r.group = static_cast<std::uint32_t>(g);
            r.tokens = tokenize(j.at("title").get<std::string>());
            if (j.contains("labels")) {
                for (const auto& [name, v] : j.at("labels").items()) {
                    const TaskSpec* task = registry.find(name);
                    if (!task) bad("unknown task '" + name + "'");
                    Label l;
                    if (v.is_number()) {
                        l = v.get<Real>();
                    } else if (v.is_object() && v.contains("c")) {
                        const auto c = v.at("c").get<std::int64_t>();
                        const auto k = v.at("k").get<std::int64_t>();
                        if (c < 0 || k < 1) bad("negative class fields for task " + name);
                        l = ClassLabel{static_cast<std::uint32_t>(c), static_cast<std::uint32_t>(k)};
                    } else if (v.is_object() && v.contains("d")) {
                        SparseVector s;
                        s.dim = v.at("d").get<std::uint32_t>();
                        s.indices = v.at("i").get<std::vector<std::uint32_t>>();
                        s.values = v.at("v").get<std::vector<Real>>();
                        l = std::move(s);
                    } else {
                        bad("unrecognized label value for task " + name);
                    }
                    if (auto why = check_label(*task, l); !why.empty()) bad(why);
                    r.labels.emplace(name, std::move(l));
                }
            }
            records.push_back(std::move(r));
        } catch (const Json::exception& e) {
            bad(std::string("schema violation: ") + e.what());
        }
    }
    return records;
}

inline std::vector<ProductRecord> load_catalog(const std::filesystem::path& path, const TaskRegistry& registry,
                                               std::uint32_t groups = 0) {
    return parse_catalog(read_file(path), registry, groups);
}

// ---------------------------------------------------------------------------
// Synthetic catalog generation
// ---------------------------------------------------------------------------

/// One attribute value. `forms[f]` is its surface text in template family f
/// (the last form is reused when there are fewer forms than families).
struct AttributeValue {
    std::string label;
    std::vector<std::string> forms;
    std::vector<std::string> traits;

    bool has(const std::string& trait) const { return std::find(traits.begin(), traits.end(), trait) != traits.end(); }
    const std::string& form(std::size_t family) const { return forms[std::min(family, forms.size() - 1)]; }
};

struct Range {
    Real lo = 0;
    Real hi = 1;
    bool valid() const { return std::isfinite(lo) && std::isfinite(hi) && lo < hi; }
};

struct GroupSpec {
    std::string name;
    std::vector<AttributeValue> colors;
    std::vector<AttributeValue> materials;
    std::vector<AttributeValue> sizes;
    std::vector<AttributeValue> items;
    Range weight{1, 10};       // material bands are laid out evenly across this range
    Range price{5, 100};       // item base prices are laid out evenly across this range
    Range popularity{0, 1000};
};

struct CatalogSpec {
    std::size_t products = 100;
    std::vector<GroupSpec> groups;
    std::vector<std::string> templates{"<brand> <color> <material> <item> <size>"};
    /// Per-family pools for the <brand> slot and for inserted noise tokens.
    std::vector<std::vector<std::string>> brands{{"acme"}};
    std::vector<std::vector<std::string>> noise_tokens{{}};
    std::size_t families = 1;
    Real noise_rate = 0.0;      // probability of inserting one noise token into a title
    Real weight_noise = 0.15;   // std-dev of weight noise, as a fraction of one material band
    Real label_noise = 0.0;     // flip probability for the derived binary labels
    Real label_coverage = 1.0;  // probability that each training-task label is present
    std::uint64_t seed = 1;
};

inline void validate(const CatalogSpec& spec) {
    auto bad = [](const std::string& why) { fail(ErrorKind::config, "catalog spec: " + why); };
    if (spec.groups.empty()) bad("no groups");
    if (spec.templates.empty()) bad("empty template pool");
    if (spec.families == 0) bad("families must be >= 1");
    if (spec.brands.size() < spec.families || spec.noise_tokens.size() < spec.families) {
        bad("brand and noise pools needed for every family");
    }
    for (std::size_t f = 0; f < spec.families; ++f) {
        if (spec.brands[f].empty()) {
            for (const auto& t : spec.templates) {
                if (t.find("<brand>") != std::string::npos) bad("empty brand pool");
            }
        }
        if (spec.noise_rate > 0 && spec.noise_tokens[f].empty()) bad("empty noise pool with noise_rate > 0");
    }
    for (Real p : {spec.noise_rate, spec.label_noise, spec.label_coverage}) {
        if (!(p >= 0 && p <= 1)) bad("probabilities must lie in [0,1]");
    }
    if (!(spec.weight_noise >= 0)) bad("weight_noise must be >= 0");
    const auto& g0 = spec.groups.front();
    for (const auto& g : spec.groups) {
        for (const auto* set : {&g.colors, &g.materials, &g.sizes, &g.items}) {
            if (set->empty()) bad("empty attribute set in group " + g.name);
            for (const auto& a : *set) {
                if (a.forms.empty()) bad("attribute " + a.label + " has no surface form");
            }
        }
        if (g.colors.size() != g0.colors.size() || g.materials.size() != g0.materials.size() ||
            g.sizes.size() != g0.sizes.size() || g.items.size() != g0.items.size()) {
            bad("every group must have the same attribute cardinalities");
        }
        if (!g.weight.valid() || !g.price.valid() || !g.popularity.valid()) bad("inverted range in group " + g.name);
        if (g.weight.lo <= 0 || g.price.lo <= 0) bad("weight and price ranges must be positive");
    }
}

/// Registry of every label the generator emits, plus the TF-IDF decode target.
inline TaskRegistry catalog_task_registry(const CatalogSpec& spec, std::size_t decode_dim) {
    const auto& g = spec.groups.at(0);
    auto k = [](std::size_t n) { return std::max<std::size_t>(n, 2); };
    TaskRegistry reg;
    reg.add({"color", TaskKind::classification, k(g.colors.size())});
    reg.add({"size", TaskKind::classification, k(g.sizes.size())});
    reg.add({"material", TaskKind::classification, k(g.materials.size())});
    reg.add({"item_type", TaskKind::classification, k(g.items.size())});
    reg.add({"hazardous", TaskKind::classification, 2});
    reg.add({"battery", TaskKind::classification, 2});
    reg.add({"weight", TaskKind::regression, 1});
    reg.add({"price", TaskKind::regression, 1});
    reg.add({"views", TaskKind::regression, 1});
    reg.add({"tfidf", TaskKind::decoding, decode_dim});
    // Held-out evaluation labels, never used to train embeddings by default.
    reg.add({"weight_band", TaskKind::classification, 2});
    reg.add({"plugs", TaskKind::classification, 2});
    reg.add({"sioc", TaskKind::classification, 2});
    reg.add({"ingestible", TaskKind::classification, 2});
    reg.add({"family", TaskKind::classification, k(spec.families)});
    return reg;
}

inline const std::vector<std::string>& training_task_names() {
    static const std::vector<std::string> names{"color", "size", "material", "item_type", "hazardous",
                                                "battery", "weight", "price", "views", "tfidf"};
    return names;
}

inline std::vector<ProductRecord> generate_catalog(const CatalogSpec& spec) {
    validate(spec);
    Rng rng(spec.seed);
    const auto& g0 = spec.groups.front();
    auto cls = [](std::size_t idx, std::size_t n) {
        return ClassLabel{static_cast<std::uint32_t>(idx), static_cast<std::uint32_t>(std::max<std::size_t>(n, 2))};
    };
    auto flip = [&](bool v) { return spec.label_noise > 0 && rng.bernoulli(spec.label_noise) ? !v : v; };
    const std::size_t width = std::max<std::size_t>(6, std::to_string(spec.products).size());

    std::vector<ProductRecord> out;
    out.reserve(spec.products);
    for (std::size_t p = 0; p < spec.products; ++p) {
        const std::size_t gi = rng.index(spec.groups.size());
        const GroupSpec& g = spec.groups[gi];
        const std::size_t family = rng.index(spec.families);
        const std::size_t ci = rng.index(g.colors.size());
        const std::size_t mi = rng.index(g.materials.size());
        const std::size_t si = rng.index(g.sizes.size());
        const std::size_t ii = rng.index(g.items.size());
        const std::size_t ti = rng.index(spec.templates.size());
        const auto& color = g.colors[ci];
        const auto& material = g.materials[mi];
        const auto& size = g.sizes[si];
        const auto& item = g.items[ii];

        // Material sets the weight band; size scales it mildly.
        const Real nm = static_cast<Real>(g.materials.size());
        const Real band = (g.weight.hi - g.weight.lo) / nm;
        const Real size_factor = 0.9 + 0.2 * static_cast<Real>(si) / std::max<Real>(1, static_cast<Real>(g.sizes.size()) - 1);
        const Real base = g.weight.lo + band * (static_cast<Real>(mi) + 0.5);
        const Real weight = std::max(1e-3, base * size_factor + spec.weight_noise * band * rng.normal());

        const Real ni = static_cast<Real>(g.items.size());
        const Real item_price = g.price.lo + (g.price.hi - g.price.lo) * (static_cast<Real>(ii) + 0.5) / ni;
        const Real price = item_price * (1.0 + 0.5 * static_cast<Real>(mi) / nm) * std::exp(0.1 * rng.normal());
        const Real views = rng.uniform(g.popularity.lo, g.popularity.hi);

        std::vector<std::string> words;
        std::istringstream tpl(spec.templates[ti]);
        std::string slot;
        while (tpl >> slot) {
            std::string text;
            if (slot == "<color>") text = color.form(family);
            else if (slot == "<material>") text = material.form(family);
            else if (slot == "<size>") text = size.form(family);
            else if (slot == "<item>") text = item.form(family);
            else if (slot == "<brand>") {
                const auto& pool = spec.brands[family];
                text = pool[rng.index(pool.size())];
            } else text = slot;
            for (auto& t : tokenize(text)) words.push_back(std::move(t));
        }
        if (spec.noise_rate > 0 && rng.bernoulli(spec.noise_rate)) {
            const auto& pool = spec.noise_tokens[family];
            auto noise = tokenize(pool[rng.index(pool.size())]);
            const std::size_t at = rng.index(words.size() + 1);
            words.insert(words.begin() + static_cast<std::ptrdiff_t>(at), noise.begin(), noise.end());
        }

        ProductRecord r;
        r.id = std::to_string(p);
        r.id = "p" + std::string(width - std::min(width, r.id.size()), '0') + r.id;
        r.group = static_cast<std::uint32_t>(gi);
        r.tokens = std::move(words);

        const bool hazardous = flip(item.has("hazardous") || material.has("hazardous"));
        const bool battery = flip(item.has("battery"));
        const Real weight_mid = 0.5 * (g.weight.lo + g.weight.hi);
        auto maybe = [&](const std::string& task, Label l) {
            if (spec.label_coverage >= 1.0 || rng.bernoulli(spec.label_coverage)) r.labels.emplace(task, std::move(l));
        };
        maybe("color", cls(ci, g0.colors.size()));
        maybe("size", cls(si, g0.sizes.size()));
        maybe("material", cls(mi, g0.materials.size()));
        maybe("item_type", cls(ii, g0.items.size()));
        maybe("hazardous", cls(hazardous ? 1 : 0, 2));
        maybe("battery", cls(battery ? 1 : 0, 2));
        maybe("weight", weight);
        maybe("price", price);
        maybe("views", views);
        r.labels.emplace("weight_band", cls(weight > weight_mid ? 1 : 0, 2));
        r.labels.emplace("plugs", cls(flip(item.has("plug")) ? 1 : 0, 2));
        r.labels.emplace("sioc", cls(flip(size.has("bulky") && !material.has("fragile")) ? 1 : 0, 2));
        r.labels.emplace("ingestible", cls(flip(item.has("ingestible")) ? 1 : 0, 2));
        r.labels.emplace("family", cls(family, spec.families));
        out.push_back(std::move(r));
    }
    return out;
}

namespace detail {

/// Deterministic pronounceable pseudo-word.
inline std::string pseudo_word(Rng& rng, std::size_t syllables) {
    static constexpr const char* onset[] = {"b", "d", "f", "g", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "br", "kr", "st", "tr"};
    static constexpr const char* vowel[] = {"a", "e", "i", "o", "u", "ai", "ou", "ei"};
    std::string w;
    for (std::size_t s = 0; s < syllables; ++s) {
        w += onset[rng.index(std::size(onset))];
        w += vowel[rng.index(std::size(vowel))];
    }
    return w;
}

inline std::vector<std::string> unique_pseudo_words(Rng& rng, std::size_t n, std::set<std::string>& taken) {
    std::vector<std::string> out;
    while (out.size() < n) {
        auto w = pseudo_word(rng, 2 + rng.index(2));
        if (taken.insert(w).second) out.push_back(std::move(w));
    }
    return out;
}

}  // namespace detail

/// A catalog spec with `groups` product groups and two token-disjoint title
/// families (family 1 renders every attribute with a different surface word).
inline CatalogSpec default_catalog_spec(std::size_t products, std::size_t groups, std::uint64_t seed,
                                        std::size_t families = 2) {
    if (groups == 0) fail(ErrorKind::config, "catalog spec: groups must be >= 1");
    if (families == 0) fail(ErrorKind::config, "catalog spec: families must be >= 1");
    CatalogSpec spec;
    spec.products = products;
    spec.seed = seed;
    spec.families = families;
    spec.noise_rate = 0.5;
    spec.label_noise = 0.05;
    spec.templates = {"<brand> <color> <material> <item> <size>", "<color> <item> <brand> <size> <material>",
                      "<brand> <size> <material> <item> <color>", "<material> <item> <color> <size> <brand>"};

    static const std::vector<std::string> color_words{"red", "blue", "green", "black", "white", "grey", "yellow", "brown"};
    static const std::vector<std::string> size_words{"small", "medium", "large", "xl"};
    static const std::vector<std::string> material_words{"wood", "plastic", "metal", "glass", "cotton", "steel",
                                                         "ceramic", "leather", "bamboo", "rubber", "paper", "nylon"};
    static const std::vector<std::string> item_words{"chair", "lamp", "kettle", "snack", "shelf", "drone", "table",
                                                     "fan", "tea", "desk", "toaster", "candy", "bed", "heater",
                                                     "coffee", "sofa", "radio", "cookie", "mirror", "charger", "juice"};

    // Surface forms beyond family 0 are pseudo-words that never collide with any other token.
    Rng words_rng(derive_seed(seed, 0x776f7264));
    std::set<std::string> taken(color_words.begin(), color_words.end());
    taken.insert(size_words.begin(), size_words.end());
    taken.insert(material_words.begin(), material_words.end());
    taken.insert(item_words.begin(), item_words.end());
    auto make = [&](const std::string& base, std::vector<std::string> traits) {
        AttributeValue a;
        a.label = base;
        a.forms.push_back(base);
        for (auto& w : detail::unique_pseudo_words(words_rng, families - 1, taken)) a.forms.push_back(std::move(w));
        a.traits = std::move(traits);
        return a;
    };

    std::vector<AttributeValue> colors, sizes;
    for (const auto& c : color_words) colors.push_back(make(c, {}));
    for (std::size_t i = 0; i < size_words.size(); ++i) {
        sizes.push_back(make(size_words[i], i >= 2 ? std::vector<std::string>{"bulky"} : std::vector<std::string>{}));
    }

    constexpr std::size_t kMaterialsPerGroup = 5;
    constexpr std::size_t kItemsPerGroup = 6;
    std::size_t next_item = 0;
    for (std::size_t gi = 0; gi < groups; ++gi) {
        GroupSpec g;
        g.name = "group" + std::to_string(gi);
        g.colors = colors;
        g.sizes = sizes;
        for (std::size_t m = 0; m < kMaterialsPerGroup; ++m) {
            const std::string& w = material_words[(gi * 2 + m) % material_words.size()];
            std::vector<std::string> traits;
            if (w == "glass" || w == "ceramic" || w == "paper") traits.push_back("fragile");
            if (w == "rubber" || w == "nylon") traits.push_back("hazardous");
            g.materials.push_back(make(w, traits));
        }
        for (std::size_t i = 0; i < kItemsPerGroup; ++i, ++next_item) {
            std::string w = next_item < item_words.size() ? item_words[next_item]
                                                          : detail::unique_pseudo_words(words_rng, 1, taken).front();
            taken.insert(w);
            std::vector<std::string> traits;
            switch ((i + gi) % 4) {
                case 0: traits = {"plug"}; break;
                case 1: traits = {"battery", "hazardous"}; break;
                case 2: traits = {"ingestible"}; break;
                default: break;
            }
            g.items.push_back(make(w, traits));
        }
        g.weight = {0.5 + static_cast<Real>(gi), 20.0 + 5.0 * static_cast<Real>(gi)};
        g.price = {5.0 * static_cast<Real>(gi + 1), 200.0 + 50.0 * static_cast<Real>(gi)};
        g.popularity = {10, 5000};
        spec.groups.push_back(std::move(g));
    }

    spec.brands.clear();
    spec.noise_tokens.clear();
    for (std::size_t f = 0; f < families; ++f) {
        spec.brands.push_back(detail::unique_pseudo_words(words_rng, 300, taken));
        spec.noise_tokens.push_back(detail::unique_pseudo_words(words_rng, 900, taken));
    }
    return spec;
}

// ---------------------------------------------------------------------------
// Vocabulary
// ---------------------------------------------------------------------------

struct VocabEntry {
    std::string token;
    std::size_t count = 0;     // corpus occurrences
    std::size_t doc_freq = 0;  // records containing the token
};

/// Token index ordered by descending corpus count, ties broken lexicographically.
class Vocab {
public:
    Vocab() = default;
    explicit Vocab(std::vector<VocabEntry> entries) : entries_(std::move(entries)) {
        for (std::size_t i = 0; i < entries_.size(); ++i) index_.emplace(entries_[i].token, i);
    }

    std::optional<std::size_t> find(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }
    const VocabEntry& operator[](std::size_t i) const { return entries_.at(i); }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::vector<VocabEntry>& entries() const { return entries_; }

private:
    std::vector<VocabEntry> entries_;
    std::unordered_map<std::string, std::size_t> index_;
};

inline Vocab build_vocab(const std::vector<ProductRecord>& records, std::size_t min_count) {
    if (min_count < 1) fail(ErrorKind::config, "build_vocab: min_count must be >= 1");
    std::map<std::string, VocabEntry> counts;
    for (const auto& r : records) {
        std::set<std::string_view> in_doc;
        for (const auto& t : r.tokens) {
            auto& e = counts[t];
            e.token = t;
            ++e.count;
            if (in_doc.insert(t).second) ++e.doc_freq;
        }
    }
    std::vector<VocabEntry> kept;
    for (auto& [_, e] : counts) {
        if (e.count >= min_count) kept.push_back(std::move(e));
    }
    std::stable_sort(kept.begin(), kept.end(), [](const VocabEntry& a, const VocabEntry& b) { return a.count > b.count; });
    return Vocab(std::move(kept));
}

// ---------------------------------------------------------------------------
// TF-IDF
// ---------------------------------------------------------------------------

class TfidfModel {
public:
    TfidfModel() = default;
    TfidfModel(std::vector<std::string> tokens, std::vector<Real> idf, std::size_t num_docs)
        : tokens_(std::move(tokens)), idf_(std::move(idf)), num_docs_(num_docs) {
        if (tokens_.size() != idf_.size()) fail(ErrorKind::data, "tfidf: token/idf length mismatch");
        for (std::size_t i = 0; i < tokens_.size(); ++i) index_.emplace(tokens_[i], i);
    }

    std::size_t dim() const { return tokens_.size(); }
    std::size_t num_docs() const { return num_docs_; }
    const std::vector<std::string>& tokens() const { return tokens_; }
    const std::vector<Real>& idf() const { return idf_; }

    std::optional<std::size_t> find(const std::string& token) const {
        auto it = index_.find(token);
        if (it == index_.end()) return std::nullopt;
        return it->second;
    }

    Json to_json() const { return Json{{"tokens", tokens_}, {"idf", idf_}, {"num_docs", num_docs_}}; }
    static TfidfModel from_json(const Json& j) {
        return TfidfModel(j.at("tokens").get<std::vector<std::string>>(), j.at("idf").get<std::vector<Real>>(),
                          j.at("num_docs").get<std::size_t>());
    }

private:
    std::vector<std::string> tokens_;
    std::vector<Real> idf_;
    std::unordered_map<std::string, std::size_t> index_;
    std::size_t num_docs_ = 0;
};

inline Real smoothed_idf(std::size_t num_docs, std::size_t df) {
    return std::log((1.0 + static_cast<Real>(num_docs)) / (1.0 + static_cast<Real>(df))) + 1.0;
}

/// Keeps the `dim` most frequent tokens (by document frequency, ties lexicographic)
/// among those appearing in at least `min_df` records.
inline TfidfModel build_tfidf(const std::vector<ProductRecord>& records, std::size_t dim, std::size_t min_df) {
    if (dim < 1) fail(ErrorKind::config, "build_tfidf: dim must be >= 1");
    std::map<std::string, std::size_t> df;
    for (const auto& r : records) {
        std::set<std::string> uniq(r.tokens.begin(), r.tokens.end());
        for (const auto& t : uniq) ++df[t];
    }
    std::vector<std::pair<std::string, std::size_t>> kept;
    for (const auto& [t, n] : df) {
        if (n >= min_df) kept.emplace_back(t, n);
    }
    if (kept.empty()) fail(ErrorKind::data, "build_tfidf: no token reaches min_df " + std::to_string(min_df));
    std::stable_sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
    if (kept.size() > dim) kept.resize(dim);
    std::vector<std::string> tokens;
    std::vector<Real> idf;
    for (const auto& [t, n] : kept) {
        tokens.push_back(t);
        idf.push_back(smoothed_idf(records.size(), n));
    }
    return TfidfModel(std::move(tokens), std::move(idf), records.size());
}

/// Raw term counts weighted by idf, L2-normalized when nonzero.
inline SparseVector tfidf_vector(const TfidfModel& model, const std::vector<std::string>& tokens) {
    std::map<std::uint32_t, Real> acc;
    for (const auto& t : tokens) {
        if (auto i = model.find(t)) acc[static_cast<std::uint32_t>(*i)] += model.idf()[*i];
    }
    SparseVector v;
    v.dim = static_cast<std::uint32_t>(model.dim());
    Real norm2 = 0;
    for (const auto& [i, x] : acc) norm2 += x * x;
    const Real inv = norm2 > 0 ? 1.0 / std::sqrt(norm2) : 0.0;
    for (const auto& [i, x] : acc) {
        v.indices.push_back(i);
        v.values.push_back(x * inv);
    }
    return v;
}

/// Dense TF-IDF design matrix, one row per record.
inline Mat tfidf_matrix(const TfidfModel& model, const std::vector<ProductRecord>& records) {
    Mat x = Mat::Zero(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(model.dim()));
    for (std::size_t r = 0; r < records.size(); ++r) {
        const auto v = tfidf_vector(model, records[r].tokens);
        for (std::size_t k = 0; k < v.indices.size(); ++k) x(static_cast<Eigen::Index>(r), v.indices[k]) = v.values[k];
    }
    return x;
}

/// Fills the decode-task label of every record with its TF-IDF vector.
inline void attach_decode_targets(std::vector<ProductRecord>& records, const TfidfModel& model,
                                  const std::string& task = "tfidf") {
    for (auto& r : records) r.labels.insert_or_assign(task, tfidf_vector(model, r.tokens));
}

}  // namespace mrnet

#endif  // MRNET_CATALOG_HPP
