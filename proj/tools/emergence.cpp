// Command-line entry point:
//   emergence {classical|langevin|fokker-planck|path-mc|os-check|pipeline} [flags] [--config <file>]
// Exit status: 0 when every declared check passes, 2 for usage errors, 1 otherwise.

#include <CLI11.hpp>

#include <cstdint>
#include <iostream>
#include <map>
#include <optional>
#include <string>

#include "emergence/harness/config.hpp"
#include "emergence/harness/experiments.hpp"

namespace h = emergence::harness;

int main(int argc, char** argv) {
    CLI::App app{"Classical-noise emergence experiments"};
    app.require_subcommand(1);

    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::string out_dir;
    bool json = false;
    app.add_option("--config", config_path, "configuration file (key = value, [section] headers)");
    app.add_option("--seed", seed, "overrides the configured seed");
    app.add_option("--out-dir", out_dir, std::string("output directory (default $") + h::output_dir_env + " or ./out)");
    app.add_flag("--json-manifest", json, "write the manifest as JSON instead of text");

    std::map<std::string, std::map<std::string, std::string>> values;
    std::map<std::string, std::map<std::string, bool>> switches;
    std::map<std::string, CLI::App*> subs;
    for (const auto& schema : h::schemas()) {
        auto* sub = app.add_subcommand(schema.name, schema.help);
        subs[schema.name] = sub;
        for (const auto& key : schema.keys) {
            const std::string desc = key.help + " [" + key.default_value + "]";
            if (key.is_flag) sub->add_flag("--" + key.name, switches[schema.name][key.name], desc);
            else sub->add_option("--" + key.name, values[schema.name][key.name], desc);
        }
        // Global options are accepted after the subcommand as well.
        sub->fallthrough();
    }

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }

    std::string experiment;
    for (const auto& [name, sub] : subs)
        if (sub->parsed()) experiment = name;

    try {
        std::map<std::string, std::string> overrides;
        for (const auto& key : h::schema_for(experiment).keys) {
            const auto* opt = subs[experiment]->get_option("--" + key.name);
            if (opt->count() == 0) continue;
            overrides[key.name] = key.is_flag ? (switches[experiment][key.name] ? "true" : "false")
                                              : values[experiment][key.name];
        }
        std::optional<h::ConfigFile> file;
        if (!config_path.empty()) file = h::load_config_file(config_path);
        auto cfg = h::resolve_config(experiment, file ? &*file : nullptr, overrides, seed);
        if (!out_dir.empty()) cfg.output_dir = out_dir;

        const auto man = h::run_experiment(cfg);
        const auto path = h::write_manifest(man, json);
        std::cout << (json ? man.to_json().dump(2) + "\n" : man.to_text());
        std::cerr << "manifest: " << path.string() << '\n';
        return man.passed() ? 0 : 1;
    } catch (const h::UsageError& e) {
        std::cerr << "usage error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
}
