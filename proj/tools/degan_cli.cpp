#include <cstdio>
#include <cstdlib>
#include <map>
#include <stdexcept>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "degan/commands.hpp"
#include "degan/config.hpp"

namespace {

struct Args {
    std::string config;
    std::string out;
    std::string from_manifest;
    std::vector<std::string> sets;
};

const char* describe(const std::string& command) {
    if (command == "gen-synthetic") return "Render the synthetic face set to <out>/dataset as PNG files";
    if (command == "train-stage1") return "Adversarial representation training: losses, checkpoints, sample grids";
    if (command == "train-stage2") return "Expression heads on a frozen stage-1 encoder (needs stage1_checkpoint)";
    if (command == "evaluate") return "Subject-independent k-fold protocol: both stages plus the pixel baseline";
    if (command == "probe") return "Linear probes for expression/identity content of the code (needs stage1_checkpoint)";
    if (command == "transfer") return "Identity transfer scored by the factor oracle (needs stage1_checkpoint)";
    return "";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Two-stage facial expression pipeline: adversarial representation "
                 "learning, expression heads, probes and transfer scoring"};
    app.require_subcommand(1);

    std::map<std::string, Args> args;
    for (const std::string& name : degan::kCommands) {
        CLI::App* sub = app.add_subcommand(name, describe(name));
        Args& a = args[name];
        sub->add_option("-c,--config", a.config, "key = value config file");
        sub->add_option("-o,--out", a.out, "output directory (overrides config and DEGAN_OUT)");
        sub->add_option("--from-manifest", a.from_manifest,
                        "re-run from the config snapshot in a previous run's manifest.json");
        sub->add_option("-s,--set", a.sets, "override one config key, e.g. -s stage1_epochs=5")
            ->take_all();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    const std::string command = app.get_subcommands().front()->get_name();
    const Args& a = args[command];
    try {
        if (!a.config.empty() && !a.from_manifest.empty())
            throw std::invalid_argument("--config and --from-manifest are mutually exclusive");

        degan::RunConfig cfg;
        if (!a.from_manifest.empty()) {
            degan::RunManifest manifest = degan::RunManifest::read(a.from_manifest);
            if (manifest.command != command)
                throw std::invalid_argument("manifest records command '" + manifest.command +
                                            "', not '" + command + "'");
            cfg = degan::config_from_map(manifest.config);
        } else if (!a.config.empty()) {
            cfg = degan::parse_config(a.config);
        }

        // DEGAN_OUT replaces the built-in default; an out_dir set explicitly
        // anywhere (config, manifest, -s, -o) wins over it.
        if (cfg.out_dir == degan::RunConfig{}.out_dir) {
            if (const char* env = std::getenv("DEGAN_OUT"); env != nullptr && *env != '\0')
                cfg.out_dir = env;
        }
        for (const std::string& assignment : a.sets) degan::apply_override(cfg, assignment);
        if (!a.out.empty()) cfg.out_dir = a.out;

        return degan::run_command(command, cfg);
    } catch (const std::exception& e) {
        std::fprintf(stderr, "degan %s: %s\n", command.c_str(), e.what());
        return 2;
    }
}
