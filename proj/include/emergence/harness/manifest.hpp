#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <locale>
#include <sstream>
#include <string>
#include <vector>

#include "emergence/harness/config.hpp"
#include "emergence/harness/io.hpp"

namespace emergence::harness {

struct CheckResult {
    std::string name;
    bool passed = false;
    std::string detail;
};

struct OutputFile {
    std::string path;
    std::string sha256;
};

struct StageResult {
    std::string name;
    enum class Status { passed, failed, skipped } status = Status::passed;
    std::string reason;
    std::vector<CheckResult> checks;

    static const char* status_name(Status s) {
        switch (s) {
            case Status::passed: return "passed";
            case Status::failed: return "failed";
            case Status::skipped: return "skipped";
        }
        return "?";
    }
};

struct RunManifest {
    ExperimentConfig config;
    std::string version = tool_version;
    double wall_seconds = 0.0;
    std::vector<CheckResult> checks;
    std::vector<StageResult> stages; ///< pipeline only
    std::vector<OutputFile> outputs;
    std::vector<std::string> warnings;

    bool passed() const {
        for (const auto& c : checks)
            if (!c.passed) return false;
        for (const auto& s : stages)
            if (s.status == StageResult::Status::failed) return false;
        return true;
    }

    void check(std::string name, bool ok, std::string detail = {}) {
        checks.push_back({std::move(name), ok, std::move(detail)});
    }

    /// Writes `content` atomically into the output directory and records
    /// its digest. Relative paths resolve against the output directory.
    std::filesystem::path emit(const std::filesystem::path& name, const std::string& content) {
        const auto path = name.is_absolute() ? name : config.output_dir / name;
        atomic_write(path, content);
        outputs.push_back({path.string(), sha256_hex(content)});
        return path;
    }

    std::string to_text() const {
        std::ostringstream o;
        o.imbue(std::locale::classic());
        o << "# run manifest\n" << "tool_version = " << version << '\n' << "wall_seconds = " << format_number(wall_seconds)
          << '\n' << "status = " << (passed() ? "pass" : "fail") << "\n\n" << "## config\n" << config.echo() << '\n';
        o << "## checks\n";
        for (const auto& c : checks)
            o << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : "  " + c.detail) << '\n';
        if (!stages.empty()) {
            o << "\n## stages\n";
            for (const auto& s : stages) {
                o << StageResult::status_name(s.status) << ' ' << s.name << (s.reason.empty() ? "" : "  " + s.reason) << '\n';
                for (const auto& c : s.checks)
                    o << "    " << (c.passed ? "PASS " : "FAIL ") << c.name << (c.detail.empty() ? "" : "  " + c.detail)
                      << '\n';
            }
        }
        o << "\n## outputs\n";
        for (const auto& f : outputs) o << f.sha256 << "  " << f.path << '\n';
        if (!warnings.empty()) {
            o << "\n## warnings\n";
            for (const auto& w : warnings) o << w << '\n';
        }
        return o.str();
    }

    nlohmann::ordered_json to_json() const {
        nlohmann::ordered_json j;
        j["tool_version"] = version;
        j["experiment"] = config.experiment;
        j["status"] = passed() ? "pass" : "fail";
        j["wall_seconds"] = wall_seconds;
        auto& cfg = j["config"];
        cfg["seed"] = config.seed;
        cfg["output_dir"] = config.output_dir.string();
        for (const auto& [k, v] : config.params) cfg["params"][k] = v;
        auto check_json = [](const CheckResult& c) {
            return nlohmann::ordered_json{{"name", c.name}, {"passed", c.passed}, {"detail", c.detail}};
        };
        j["checks"] = nlohmann::ordered_json::array();
        for (const auto& c : checks) j["checks"].push_back(check_json(c));
        if (!stages.empty()) {
            j["stages"] = nlohmann::ordered_json::array();
            for (const auto& s : stages) {
                nlohmann::ordered_json sj{{"name", s.name}, {"status", StageResult::status_name(s.status)}, {"reason", s.reason}};
                sj["checks"] = nlohmann::ordered_json::array();
                for (const auto& c : s.checks) sj["checks"].push_back(check_json(c));
                j["stages"].push_back(sj);
            }
        }
        j["outputs"] = nlohmann::ordered_json::array();
        for (const auto& f : outputs) j["outputs"].push_back({{"path", f.path}, {"sha256", f.sha256}});
        j["warnings"] = warnings;
        return j;
    }
};

}  // namespace emergence::harness
