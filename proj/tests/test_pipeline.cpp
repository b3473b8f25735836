#include <catch_amalgamated.hpp>

#include "mrnet/pipeline.hpp"

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <fstream>

using namespace mrnet;
namespace fs = std::filesystem;

namespace {

const fs::path kMicro = fs::path(MRNET_SOURCE_DIR) / "configs" / "micro.json";

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& tag) {
        path = fs::temp_directory_path() / ("mrnet_" + tag + "_" + std::to_string(::getpid()));
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

struct CliResult {
    int status = -1;
    std::string out;
    std::string err;
};

CliResult cli(const std::string& args, const fs::path& scratch) {
    const auto o = scratch / "stdout.txt", e = scratch / "stderr.txt";
    const std::string cmd = std::string(MRNET_CLI_PATH) + " " + args + " > " + o.string() + " 2> " + e.string();
    const int raw = std::system(cmd.c_str());
    CliResult r;
    r.status = WIFEXITED(raw) ? WEXITSTATUS(raw) : -1;
    r.out = read_file(o);
    r.err = read_file(e);
    return r;
}

std::size_t count_lines(const std::string& s) { return static_cast<std::size_t>(std::count(s.begin(), s.end(), '\n')); }

std::string last_line(const std::string& s) {
    auto t = s;
    while (!t.empty() && t.back() == '\n') t.pop_back();
    const auto at = t.rfind('\n');
    return at == std::string::npos ? t : t.substr(at + 1);
}

void write_text(const fs::path& p, const std::string& s) { std::ofstream(p) << s; }

}  // namespace

TEST_CASE("config defaults, overrides and hashing", "[pipeline][config]") {
    const auto c = parse_run_config(Json::object());
    CHECK(c.mrnet.tasks == training_task_names());
    CHECK(c.unseen.threshold == 0.2);

    const auto micro = load_run_config(kMicro);
    CHECK(micro.catalog.products == 200);
    CHECK(micro.word2vec.dim == 16);

    // The effective config re-parses to itself.
    CHECK(parse_run_config(micro.to_json()).to_json() == micro.to_json());

    auto moved = micro;
    moved.out = "elsewhere";
    CHECK(moved.hash() == micro.hash());
    auto reseeded = micro;
    reseeded.seed = 8;
    CHECK(reseeded.hash() != micro.hash());
    auto tweaked = micro;
    tweaked.mrnet.lr *= 2;
    CHECK(tweaked.hash() != micro.hash());
}

TEST_CASE("config validation rejects bad input", "[pipeline][config]") {
    auto rejects = [](const Json& j, const std::string& fragment) {
        try {
            parse_run_config(j);
        } catch (const Error& e) {
            CHECK(e.kind() == ErrorKind::config);
            CHECK_THAT(e.what(), Catch::Matchers::ContainsSubstring(fragment));
            return;
        }
        FAIL("accepted " << j.dump());
    };
    rejects({{"bogus", 1}}, "config.bogus");
    rejects({{"mrnet", {{"hiden", 3}}}}, "config.mrnet.hiden");
    rejects({{"mrnet", {{"hidden", -3}}}}, "config.mrnet.hidden");
    rejects({{"mrnet", {{"hidden", 2.5}}}}, "expected an integer");
    rejects({{"mrnet", {{"mode", "both"}}}}, "both");
    rejects({{"mrnet", {{"tasks", {"color", "color"}}}}}, "duplicate");
    rejects({{"catalog", {{"noise_rate", 1.5}}}}, "noise_rate");
    rejects({{"catalog", "many"}}, "expected an object");
    rejects({{"eval", {{"representations", {"specific", "bag"}}}}}, "bag");
    rejects({{"eval", {{"classifiers", {"svm"}}}}}, "svm");
    rejects({{"knn", {{"representation", "tfidf"}}}}, "tfidf");
    rejects({{"seed", "seven"}}, "seed");
    rejects({{"unseen", {{"train_family", -2}}}}, "train_family");
}

TEST_CASE("gradient fixtures pass", "[pipeline][gradcheck]") {
    for (const auto& r : run_gradchecks(3, 11)) {
        INFO(r.component);
        CHECK(r.errors.size() == 3);
        CHECK(r.max_error() < 1e-4);
    }
}

TEST_CASE("cli: usage and config errors exit 1", "[pipeline][cli]") {
    TempDir tmp("usage");
    auto r = cli("frobnicate", tmp.path);
    CHECK(r.status == 1);
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("gen-catalog"));
    CHECK_THAT(last_line(r.err), Catch::Matchers::StartsWith("error kind=config"));

    r = cli("", tmp.path);
    CHECK(r.status == 1);

    r = cli("--help", tmp.path);
    CHECK(r.status == 0);
    CHECK_THAT(r.out, Catch::Matchers::ContainsSubstring("train-crosslang"));

    write_text(tmp.path / "bad.json", R"({"mrnet": {"hiden": 4}})");
    r = cli("gen-catalog --quiet --config " + (tmp.path / "bad.json").string() + " --out " + (tmp.path / "o").string(), tmp.path);
    CHECK(r.status == 1);
    CHECK(count_lines(r.err) == 1);
    CHECK_THAT(r.err, Catch::Matchers::StartsWith("error kind=config stage=gen-catalog msg=\""));
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("hiden"));

    write_text(tmp.path / "broken.json", "{ not json");
    r = cli("gen-catalog --quiet --config " + (tmp.path / "broken.json").string(), tmp.path);
    CHECK(r.status == 1);
    CHECK(count_lines(r.err) == 1);

    r = cli("gen-catalog --quiet --config " + (tmp.path / "absent.json").string(), tmp.path);
    CHECK(r.status == 1);
}

TEST_CASE("cli: missing inputs exit 2, failed gradient check exits 3", "[pipeline][cli]") {
    TempDir tmp("codes");
    const auto out = (tmp.path / "o").string();
    auto r = cli("embed --quiet --config " + kMicro.string() + " --out " + out, tmp.path);
    CHECK(r.status == 2);
    CHECK(count_lines(r.err) == 1);
    CHECK_THAT(r.err, Catch::Matchers::StartsWith("error kind=data stage=embed"));

    // Corrupt catalog line.
    REQUIRE(cli("gen-catalog --quiet --config " + kMicro.string() + " --out " + out, tmp.path).status == 0);
    {
        std::ofstream f(tmp.path / "o" / "catalog.jsonl", std::ios::app);
        f << "{\"id\": \"zz\", \"group\": 0, \"title\": \"x\", \"labels\": {\"nope\": 1}}\n";
    }
    r = cli("train-word2vec --quiet --config " + kMicro.string() + " --out " + out, tmp.path);
    CHECK(r.status == 2);
    CHECK_THAT(r.err, Catch::Matchers::ContainsSubstring("nope"));

    write_text(tmp.path / "strict.json", R"({"gradcheck": {"seeds": 1, "tolerance": 0.0}})");
    r = cli("gradcheck --quiet --config " + (tmp.path / "strict.json").string() + " --out " + out, tmp.path);
    CHECK(r.status == 3);
    CHECK(count_lines(r.err) == 1);
    CHECK_THAT(r.err, Catch::Matchers::StartsWith("error kind=divergence stage=gradcheck"));
}

TEST_CASE("cli: gen-catalog writes the configured number of records", "[pipeline][cli]") {
    TempDir tmp("catalog");
    const auto out = tmp.path / "o";
    auto r = cli("gen-catalog --quiet --config " + kMicro.string() + " --out " + out.string(), tmp.path);
    REQUIRE(r.status == 0);
    CHECK(r.err.empty());
    const auto text = read_file(out / "catalog.jsonl");
    CHECK(count_lines(text) == 200);
    const auto reg = parse_task_registry(read_file(out / "tasks.txt"));
    CHECK(parse_catalog(text, reg).size() == 200);

    const auto manifest = Json::parse(read_file(out / "catalog.jsonl.manifest.json"));
    CHECK(manifest.at("format_version") == kArtifactFormatVersion);
    CHECK(manifest.at("seed") == 7);
    CHECK(manifest.at("config_hash") == load_run_config(kMicro).hash());
    CHECK(manifest.at("stage") == "gen-catalog");

    // --seed overrides the config and changes the data and the hash.
    const auto out2 = tmp.path / "o2";
    REQUIRE(cli("gen-catalog --quiet --seed 8 --config " + kMicro.string() + " --out " + out2.string(), tmp.path).status == 0);
    CHECK(read_file(out2 / "catalog.jsonl") != text);
    CHECK(Json::parse(read_file(out2 / "catalog.jsonl.manifest.json")).at("seed") == 8);

    // Flags may also follow the subcommand's position before it.
    const auto out3 = tmp.path / "o3";
    REQUIRE(cli("--quiet --config " + kMicro.string() + " --out " + out3.string() + " gen-catalog", tmp.path).status == 0);
    CHECK(read_file(out3 / "catalog.jsonl") == text);
}

TEST_CASE("in-process pipeline: every stage writes versioned artifacts", "[pipeline][e2e]") {
    TempDir tmp("e2e");
    auto cfg = load_run_config(kMicro);
    cfg.out = (tmp.path / "run").string();
    std::ostringstream log;
    RunContext ctx(cfg, false, &log);
    for (const auto& stage : pipeline_order()) {
        INFO(stage);
        REQUIRE_NOTHROW(run_command(stage, ctx));
    }
    run_command("gradcheck", ctx);
    CHECK_THAT(log.str(), Catch::Matchers::ContainsSubstring("[train-mrnet]"));

    const auto dir = tmp.path / "run";
    std::size_t artifacts = 0;
    for (const auto& entry : fs::directory_iterator(dir)) {
        const auto name = entry.path().filename().string();
        INFO(name);
        CHECK(entry.path().extension() != ".tmp");
        if (name.ends_with(".manifest.json")) continue;
        ++artifacts;
        Json m;
        if (entry.path().extension() == ".ckpt") {
            m = load_checkpoint(entry.path()).manifest;
        } else if (entry.path().extension() == ".json") {
            m = Json::parse(read_file(entry.path())).at("manifest");
        } else {
            m = Json::parse(read_file(entry.path().string() + ".manifest.json"));
        }
        CHECK(m.at("config_hash") == ctx.config_hash());
        CHECK(m.at("seed") == 7);
        CHECK(m.contains("format_version"));
    }
    CHECK(artifacts >= 25);

    const auto specific = load_embeddings(dir / "specific.mrne");
    CHECK(specific.records.size() == 200);
    CHECK(specific.dim == 2 * 16);  // G blocks of 2 * hidden
    CHECK(load_embeddings(dir / "specific_g0.mrne").dim == 16);
    CHECK(load_embeddings(dir / "agnostic.mrne").dim == 32);

    const auto retrieval = Json::parse(read_file(dir / "crosslang_retrieval.json"));
    CHECK(retrieval.at("top1_train").get<double>() > 10 * retrieval.at("random_baseline_train").get<double>());

    const auto knn_lines = count_lines(read_file(dir / "knn.tsv"));
    CHECK(knn_lines == 1 + 5 * 5);

    const auto eval = read_file(dir / "eval.csv");
    CHECK(count_lines(eval) == 1 + 4 * 3 * 2 * 3);  // tasks x representations x classifiers x folds

    // Checkpoints reload and reproduce the exported embeddings.
    const auto words = std::make_shared<const WordEmbeddingTable>(load_word_vectors(dir / "words.txt"));
    const auto model = mrnet_from_checkpoint(load_checkpoint(dir / "mrnet_g0.ckpt"), words);
    const auto reg = parse_task_registry(read_file(dir / "tasks.txt"));
    const auto records = load_catalog(dir / "catalog.jsonl", reg);
    const auto g0 = load_embeddings(dir / "specific_g0.mrne");
    const auto idx = g0.id_index();
    for (const auto& r : records) {
        if (r.group != 0) continue;
        const Vec v = model.embed(r.tokens);
        CHECK((v - g0.vector(idx.at(r.id))).cwiseAbs().maxCoeff() < 1e-6);
        break;
    }
}
