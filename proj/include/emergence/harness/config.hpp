#pragma once

// Experiment configuration.
//
// Grammar (one statement per line):
//   line     := blank | comment | section | entry
//   comment  := ('#' | ';') text
//   section  := '[' name ']'
//   entry    := key '=' value
// Keys before the first section header belong to the run itself
// (experiment, seed, output_dir). Keys inside [name] belong to experiment
// `name` and must appear in its schema; anything else is a usage error.
// Whitespace around keys and values is ignored; values run to end of line.

#include <charconv>
#include <cstdint>
#include <cstdlib>
#include <filesystem>
#include <locale>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include "emergence/common.hpp"
#include "emergence/harness/io.hpp"

namespace emergence::harness {

class UsageError : public Error {
public:
    using Error::Error;
};

inline constexpr const char* output_dir_env = "EMERGENCE_OUT_DIR";
inline constexpr const char* tool_version = "0.1.0";

struct KeySpec {
    std::string name;
    std::string default_value;
    std::string help;
    bool is_flag = false; ///< boolean switch on the command line
};

struct ExperimentSchema {
    std::string name;
    std::string help;
    std::vector<KeySpec> keys;

    const KeySpec* find(std::string_view key) const {
        for (const auto& k : keys)
            if (k.name == key) return &k;
        return nullptr;
    }
};

inline const std::vector<ExperimentSchema>& schemas() {
    static const std::vector<ExperimentSchema> all = {
        {"classical",
         "Hamiltonian integration, energy drift and Hamilton-Jacobi residuals",
         {
             {"system", "harmonic", "free | harmonic | quartic"},
             {"mass", "1", "particle mass"},
             {"omega", "1", "harmonic frequency"},
             {"lambda", "1", "quartic coupling, V = lambda q^4"},
             {"dt", "1e-3", "leapfrog step of the energy run"},
             {"t-end", "100", "length of the energy run"},
             {"q-init", "1", "initial coordinate of the energy run"},
             {"p-init", "0", "initial momentum of the energy run"},
             {"energy-tolerance", "1e-4", "allowed max |H(t) - H(0)|"},
             {"hj-grid", "32x32", "action table nodes NxM (q by t)"},
             {"hj-q0", "0", "fixed start coordinate of the action table"},
             {"hj-q-range", "-1:1", "end coordinate range lo:hi"},
             {"hj-t-range", "0.5:1.5", "end time range lo:hi (start time 0)"},
             {"hj-refine", "true", "also build the 2x refined table and check the order"},
             {"shooting-steps", "2000", "leapfrog steps per shooting trajectory"},
             {"out", "hj_residuals.csv", "residual CSV"},
         }},
        {"langevin",
         "Langevin ensemble and Kramers-Moyal coefficients",
         {
             {"drift", "linear", "zero | linear | cubic"},
             {"gamma", "1", "drift strength"},
             {"diffusion", "0.5", "D; increments have variance 2 D dt"},
             {"n-traj", "10000", "trajectories"},
             {"dt", "1e-3", "Euler-Maruyama step"},
             {"t-end", "1", "simulated time"},
             {"x0", "0", "common starting point"},
             {"km-bins", "20", "bins over the central 95% of starting points"},
             {"lag", "1", "increment lag in steps"},
             {"out", "km_coefficients.csv", "Kramers-Moyal CSV"},
         }},
        {"fokker-planck",
         "Finite-volume Fokker-Planck evolution or stationary state",
         {
             {"drift", "linear", "zero | linear | cubic | constant"},
             {"gamma", "1", "drift strength (the constant for constant drift)"},
             {"diffusion", "0.5", "D"},
             {"grid", "-4:4:200", "lo:hi:n_cells"},
             {"bc", "zeroflux", "zeroflux | absorbing"},
             {"scheme", "implicit", "implicit | explicit"},
             {"dt", "0", "time step; 0 picks cell_width^2 / (2 D)"},
             {"steps", "1000", "time steps"},
             {"x0", "0", "initial delta position"},
             {"stationary", "false", "solve for the stationary density instead", true},
             {"out", "density.csv", "density CSV"},
         }},
        {"path-mc",
         "Metropolis sampling of the Euclidean lattice path measure",
         {
             {"potential", "harmonic", "harmonic | quartic"},
             {"m", "1", "mass"},
             {"omega", "1", "frequency"},
             {"lambda", "0", "quartic coupling"},
             {"hbar", "1", "hbar"},
             {"n-slices", "64", "time slices"},
             {"spacing", "0.25", "lattice spacing a"},
             {"sweeps", "40000", "total sweeps per chain"},
             {"therm", "2000", "thermalization sweeps"},
             {"stride", "1", "sweeps between measurements"},
             {"chains", "1", "independent chains"},
             {"width", "1", "initial proposal width"},
             {"blocks", "100", "correlator blocks per chain"},
             {"max-lag", "12", "largest correlator lag written"},
             {"out", "correlator.csv", "correlator CSV"},
             {"summary-out", "path_summary.csv", "summary CSV"},
         }},
        {"os-check",
         "Reflection positivity and Wick continuation of the free lattice field",
         {
             {"mass", "1", "field mass"},
             {"lattice", "64", "T or TxL sites"},
             {"spacing", "1", "lattice spacing"},
             {"n-test-functions", "50", "random positive-time test-function sets"},
             {"max-set-size", "8", "largest set size"},
             {"support-sites", "3", "nonzero sites per random test function"},
             {"draws", "20000", "field samples for the Monte-Carlo characteristic functional"},
             {"mc-functions", "20", "test functions compared against the closed form"},
             {"tolerance", "1e-10", "allowed negative eigenvalue"},
             {"wick-spacing", "0.1", "spacing of the continuation lattice"},
             {"wick-sites", "512", "time sites of the continuation lattice"},
             {"out", "os_report.csv", "positivity report CSV"},
         }},
        {"pipeline",
         "Chained acceptance pipeline over all modules",
         {
             {"hbar", "0.1", "perturbation strength"},
             {"energy", "1", "conserved energy E"},
             {"n-traj", "20000", "action-process trajectories"},
             {"dt", "2e-4", "action-process step"},
             {"t-end", "2", "action-process time"},
             {"sweeps", "40000", "path-MC sweeps"},
             {"draws", "5000", "field samples for the characteristic functional"},
             {"break-stage", "0", "force stage k to run with a corrupted seed (0 = none)"},
         }},
    };
    return all;
}

inline const ExperimentSchema& schema_for(std::string_view name) {
    for (const auto& s : schemas())
        if (s.name == name) return s;
    throw UsageError("unknown experiment '" + std::string(name) + "'");
}

struct ExperimentConfig {
    std::string experiment;
    std::map<std::string, std::string> params; ///< resolved, schema keys only
    std::uint64_t seed = 20240601;
    std::filesystem::path output_dir = "out";

    const std::string& raw(const std::string& key) const {
        const auto it = params.find(key);
        if (it == params.end()) throw UsageError("experiment '" + experiment + "' has no key '" + key + "'");
        return it->second;
    }

    std::string str(const std::string& key) const { return raw(key); }

    double number(const std::string& key) const {
        double v = 0.0;
        if (!parse_number(raw(key), v)) throw UsageError("key '" + key + "': '" + raw(key) + "' is not a number");
        return v;
    }

    std::size_t count(const std::string& key) const {
        const double v = number(key);
        if (!(v >= 0.0) || v != static_cast<double>(static_cast<std::size_t>(v))) {
            throw UsageError("key '" + key + "': '" + raw(key) + "' is not a non-negative integer");
        }
        return static_cast<std::size_t>(v);
    }

    bool flag(const std::string& key) const {
        const auto& v = raw(key);
        if (v == "true" || v == "1" || v == "yes" || v == "on") return true;
        if (v == "false" || v == "0" || v == "no" || v == "off") return false;
        throw UsageError("key '" + key + "': '" + v + "' is not a boolean");
    }

    /// "a:b" or "a:b:n" split into numbers.
    std::vector<double> numbers(const std::string& key, char sep, std::size_t expected) const {
        std::vector<double> out;
        std::string_view s = raw(key);
        while (true) {
            const auto pos = s.find(sep);
            double v = 0.0;
            if (!parse_number(s.substr(0, pos), v)) break;
            out.push_back(v);
            if (pos == std::string_view::npos) break;
            s.remove_prefix(pos + 1);
        }
        if (out.size() != expected) {
            throw UsageError("key '" + key + "': '" + raw(key) + "' should have " + std::to_string(expected) +
                             " fields separated by '" + sep + "'");
        }
        return out;
    }

    /// Resolved configuration in the config-file grammar.
    std::string echo() const {
        std::ostringstream o;
        o.imbue(std::locale::classic());
        o << "experiment = " << experiment << '\n' << "seed = " << seed << '\n' << "output_dir = " << output_dir.string()
          << "\n\n[" << experiment << "]\n";
        for (const auto& [k, v] : params) o << k << " = " << v << '\n';
        return o.str();
    }
};

namespace detail {

inline std::string_view trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

inline std::uint64_t parse_seed(std::string_view v) {
    std::uint64_t out = 0;
    const auto res = std::from_chars(v.data(), v.data() + v.size(), out);
    if (res.ec != std::errc() || res.ptr != v.data() + v.size()) {
        throw UsageError("seed '" + std::string(v) + "' is not an unsigned 64-bit integer");
    }
    return out;
}

}  // namespace detail

/// Raw parsed file: run-level keys plus per-section entries.
struct ConfigFile {
    std::map<std::string, std::string> run;
    std::map<std::string, std::map<std::string, std::string>> sections;
};

inline ConfigFile parse_config_text(std::string_view text, std::string_view origin = "<config>") {
    ConfigFile cf;
    std::string section;
    std::size_t line_no = 0;
    while (!text.empty()) {
        const auto nl = text.find('\n');
        std::string_view line = text.substr(0, nl);
        text = nl == std::string_view::npos ? std::string_view{} : text.substr(nl + 1);
        ++line_no;
        line = detail::trim(line);
        const std::string where = std::string(origin) + ":" + std::to_string(line_no);
        if (line.empty() || line.front() == '#' || line.front() == ';') continue;
        if (line.front() == '[') {
            if (line.back() != ']') throw UsageError(where + ": malformed section header");
            section = std::string(detail::trim(line.substr(1, line.size() - 2)));
            try {
                schema_for(section);
            } catch (const UsageError& e) {
                throw UsageError(where + ": " + e.what());
            }
            cf.sections[section];
            continue;
        }
        const auto eq = line.find('=');
        if (eq == std::string_view::npos) throw UsageError(where + ": expected 'key = value'");
        const std::string key(detail::trim(line.substr(0, eq)));
        const std::string value(detail::trim(line.substr(eq + 1)));
        if (key.empty()) throw UsageError(where + ": empty key");
        if (section.empty()) {
            if (key != "experiment" && key != "seed" && key != "output_dir") {
                throw UsageError(where + ": unknown key '" + key + "'");
            }
            cf.run[key] = value;
        } else {
            if (!schema_for(section).find(key)) {
                throw UsageError(where + ": unknown key '" + key + "' in section [" + section + "]");
            }
            cf.sections[section][key] = value;
        }
    }
    return cf;
}

inline ConfigFile load_config_file(const std::filesystem::path& path) {
    std::string text;
    try {
        text = read_file(path);
    } catch (const IoError& e) {
        throw UsageError(e.what());
    }
    return parse_config_text(text, path.string());
}

/// Resolution order, later wins: schema defaults, config file, command-line
/// overrides. The output directory defaults to $EMERGENCE_OUT_DIR, then "out".
inline ExperimentConfig resolve_config(const std::string& experiment, const ConfigFile* file,
                                       const std::map<std::string, std::string>& overrides,
                                       std::optional<std::uint64_t> seed_override) {
    const auto& schema = schema_for(experiment);
    ExperimentConfig cfg;
    cfg.experiment = experiment;
    for (const auto& k : schema.keys) cfg.params[k.name] = k.default_value;
    if (const char* env = std::getenv(output_dir_env); env && *env) cfg.output_dir = env;

    if (file) {
        if (auto it = file->run.find("experiment"); it != file->run.end() && it->second != experiment) {
            throw UsageError("config is for experiment '" + it->second + "', not '" + experiment + "'");
        }
        if (auto it = file->run.find("seed"); it != file->run.end()) cfg.seed = detail::parse_seed(it->second);
        if (auto it = file->run.find("output_dir"); it != file->run.end()) cfg.output_dir = it->second;
        if (auto it = file->sections.find(experiment); it != file->sections.end())
            for (const auto& [k, v] : it->second) cfg.params[k] = v;
    }
    for (const auto& [k, v] : overrides) {
        if (!schema.find(k)) throw UsageError("unknown key '" + k + "' for experiment '" + experiment + "'");
        cfg.params[k] = v;
    }
    if (seed_override) cfg.seed = *seed_override;
    return cfg;
}

inline ExperimentConfig default_config(const std::string& experiment) {
    return resolve_config(experiment, nullptr, {}, std::nullopt);
}

}  // namespace emergence::harness
