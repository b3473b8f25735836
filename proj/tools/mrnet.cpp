// mrnet: command-line driver for the product embedding pipeline.
//
//   mrnet <subcommand> [--config FILE] [--seed N] [--out DIR] [--quiet]
//
// Exit status: 0 ok, 1 config error, 2 data error, 3 numeric divergence.
// Failures print one line to stderr:
//   error kind=<config|data|divergence> stage=<subcommand> msg="<reason>"

#include "mrnet/pipeline.hpp"

#include <CLI11.hpp>

#include <cstdlib>
#include <iostream>
#include <optional>

namespace {

std::string one_line(std::string s) {
    for (auto& c : s) {
        if (c == '\n' || c == '\r') c = ' ';
        if (c == '"') c = '\'';
    }
    return s;
}

int report(const char* kind, const std::string& stage, const std::string& msg, int code) {
    std::cerr << "error kind=" << kind << " stage=" << (stage.empty() ? "-" : stage) << " msg=\"" << one_line(msg) << "\"\n";
    return code;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"mrnet: multi-task product title embeddings", "mrnet"};
    app.require_subcommand(1, 1);

    std::string config_path;
    std::optional<std::int64_t> seed;
    std::optional<std::string> out;
    bool quiet = false;
    app.add_option("--config", config_path, "JSON run configuration (defaults apply when omitted)");
    app.add_option("--seed", seed, "master seed, overrides the config");
    app.add_option("--out", out, "output directory, overrides the config");
    app.add_flag("--quiet", quiet, "suppress progress logging");

    for (const auto& c : mrnet::commands()) app.add_subcommand(c.name, c.help)->fallthrough();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        std::cerr << app.help();
        return report("config", "", e.what(), 1);
    }

    const std::string stage = app.get_subcommands().front()->get_name();
    try {
        mrnet::RunConfig cfg = config_path.empty() ? mrnet::parse_run_config(mrnet::Json::object())
                                                   : mrnet::load_run_config(config_path);
        if (seed) {
            if (*seed < 0) mrnet::fail(mrnet::ErrorKind::config, "--seed must be >= 0");
            cfg.seed = static_cast<std::uint64_t>(*seed);
        }
        if (out) cfg.out = *out;
        mrnet::RunContext ctx(std::move(cfg), quiet);
        if (!quiet) std::cerr << "[" << stage << "] config " << ctx.config_hash() << " seed " << ctx.config().seed << '\n';
        mrnet::run_command(stage, ctx);
    } catch (const mrnet::Error& e) {
        return report(mrnet::to_string(e.kind()), stage, e.what(), e.exit_code());
    } catch (const std::filesystem::filesystem_error& e) {
        return report("data", stage, e.what(), 2);
    } catch (const std::exception& e) {
        return report("data", stage, e.what(), 2);
    }
    return EXIT_SUCCESS;
}
