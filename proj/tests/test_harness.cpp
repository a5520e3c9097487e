#include <gtest/gtest.h>

#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

#include <sys/wait.h>

#include "emergence/harness/config.hpp"
#include "emergence/harness/experiments.hpp"
#include "emergence/harness/io.hpp"
#include "emergence/harness/manifest.hpp"

using namespace emergence;
using namespace emergence::harness;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("emergence_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string first_line(const std::string& s) { return s.substr(0, s.find('\n')); }

int run_cli(const std::string& args, const fs::path& dir) {
    const std::string cmd = std::string(EMERGENCE_CLI) + " " + args + " --out-dir " + dir.string() + " > " +
                            (dir / "stdout.txt").string() + " 2> " + (dir / "stderr.txt").string();
    const int rc = std::system(cmd.c_str());
    return WIFEXITED(rc) ? WEXITSTATUS(rc) : -1;
}

ExperimentConfig small_fp(const fs::path& dir) {
    auto cfg = resolve_config("fokker-planck", nullptr, {{"grid", "-3:3:60"}, {"steps", "200"}, {"drift", "linear"}}, 7);
    cfg.output_dir = dir;
    return cfg;
}

}  // namespace

TEST(Config, UnknownKeyIsRejectedByName) {
    try {
        parse_config_text("experiment = langevin\n[langevin]\nn-traj = 10\nfoo = 3\n", "test.cfg");
        FAIL() << "expected UsageError";
    } catch (const UsageError& e) {
        const std::string msg = e.what();
        EXPECT_NE(msg.find("'foo'"), std::string::npos) << msg;
        EXPECT_NE(msg.find("test.cfg:4"), std::string::npos) << msg;
    }
    EXPECT_THROW(parse_config_text("bogus = 1\n"), UsageError);
    try {
        parse_config_text("seed = 3\n[nonsense]\n", "test.cfg");
        FAIL() << "expected UsageError";
    } catch (const UsageError& e) {
        EXPECT_NE(std::string(e.what()).find("test.cfg:2"), std::string::npos) << e.what();
    }
    EXPECT_THROW(parse_config_text("[langevin]\njust words\n"), UsageError);
    EXPECT_THROW(resolve_config("langevin", nullptr, {{"foo", "1"}}, std::nullopt), UsageError);
    EXPECT_THROW(default_config("teleport"), UsageError);
}

TEST(Config, ResolutionOrder) {
    const auto file = parse_config_text("# comment\nseed = 5\noutput_dir = from_file\n\n[langevin]\n"
                                        "  n-traj =  123  \n; another comment\ndt = 0.01\n");
    auto cfg = resolve_config("langevin", &file, {{"dt", "0.02"}}, std::nullopt);
    EXPECT_EQ(cfg.seed, 5u);
    EXPECT_EQ(cfg.output_dir, fs::path("from_file"));
    EXPECT_EQ(cfg.count("n-traj"), 123u);
    EXPECT_EQ(cfg.number("dt"), 0.02);
    EXPECT_EQ(cfg.str("drift"), "linear");
    cfg = resolve_config("langevin", &file, {}, 99);
    EXPECT_EQ(cfg.seed, 99u);
    const auto other = parse_config_text("experiment = langevin\n");
    EXPECT_THROW(resolve_config("classical", &other, {}, std::nullopt), UsageError);
}

TEST(Config, OutputDirectoryFromEnvironment) {
    ::setenv(output_dir_env, "/tmp/from_env", 1);
    EXPECT_EQ(default_config("langevin").output_dir, fs::path("/tmp/from_env"));
    const auto file = parse_config_text("output_dir = here\n");
    EXPECT_EQ(resolve_config("langevin", &file, {}, std::nullopt).output_dir, fs::path("here"));
    ::unsetenv(output_dir_env);
    EXPECT_EQ(default_config("langevin").output_dir, fs::path("out"));
}

TEST(Config, EchoRoundTrips) {
    auto cfg = resolve_config("path-mc", nullptr, {{"hbar", "0.5"}, {"n-slices", "32"}}, 42);
    const auto parsed = parse_config_text(cfg.echo());
    const auto again = resolve_config("path-mc", &parsed, {}, std::nullopt);
    EXPECT_EQ(again.params, cfg.params);
    EXPECT_EQ(again.seed, 42u);
    EXPECT_EQ(again.output_dir, cfg.output_dir);
}

TEST(Config, TypedAccessors) {
    auto cfg = resolve_config("fokker-planck", nullptr, {{"steps", "2.5"}, {"grid", "1:2"}}, std::nullopt);
    EXPECT_THROW(cfg.count("steps"), UsageError);
    EXPECT_THROW(cfg.numbers("grid", ':', 3), UsageError);
    EXPECT_FALSE(cfg.flag("stationary"));
    EXPECT_THROW(cfg.raw("nope"), UsageError);
}

TEST(Io, NumberFormattingIsLocaleIndependent) {
    EXPECT_EQ(format_number(0.5), "0.5");
    EXPECT_EQ(format_number(-1e-20), "-1e-20");
    EXPECT_EQ(format_number(std::nan("")), "nan");
    double v = 0.0;
    ASSERT_TRUE(parse_number(format_number(0.1 + 0.2), v));
    EXPECT_EQ(v, 0.1 + 0.2);
    EXPECT_FALSE(parse_number("1,5", v));
}

TEST(Io, CsvTable) {
    CsvTable t({"x", "density"});
    t.add(0.25, 1.5);
    t.add(1.0, 2.0);
    EXPECT_EQ(t.str(), "x,density\n0.25,1.5\n1,2\n");
    EXPECT_EQ(t.column("density"), (std::vector<double>{1.5, 2.0}));
}

TEST(Io, AtomicWriteLeavesNoTemporaries) {
    const auto dir = scratch("atomic");
    const auto path = dir / "sub" / "file.csv";
    atomic_write(path, "a\n");
    atomic_write(path, "b\n");
    EXPECT_EQ(read_file(path), "b\n");
    std::size_t entries = 0;
    for ([[maybe_unused]] const auto& e : fs::directory_iterator(dir / "sub")) ++entries;
    EXPECT_EQ(entries, 1u);
}

TEST(Io, Sha256KnownAnswer) {
    EXPECT_EQ(sha256_hex("abc"), "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
}

TEST(Io, SvgIsStandalone) {
    const auto svg = render_svg({"t", "x", "y", true}, {{"s", {1, 2, 3}, {1, 10, 100}, {}}});
    EXPECT_EQ(svg.rfind("<svg", 0), 0u);
    EXPECT_NE(svg.find("</svg>"), std::string::npos);
}

TEST(RunExperiment, FokkerPlanckSchemaAndDeterminism) {
    const auto dir = scratch("fp");
    const auto a = run_experiment(small_fp(dir));
    EXPECT_TRUE(a.passed()) << a.to_text();
    EXPECT_EQ(first_line(read_file(dir / "density.csv")), "x,density");
    const auto b = run_experiment(small_fp(dir));
    ASSERT_EQ(a.outputs.size(), b.outputs.size());
    for (std::size_t k = 0; k < a.outputs.size(); ++k) EXPECT_EQ(a.outputs[k].sha256, b.outputs[k].sha256);
    const auto json = a.to_json();
    EXPECT_EQ(json["experiment"], "fokker-planck");
    EXPECT_EQ(json["config"]["params"]["grid"], "-3:3:60");
    EXPECT_EQ(json["outputs"][0]["sha256"], sha256_hex(read_file(dir / "density.csv")));
}

TEST(RunExperiment, LangevinSmoke) {
    const auto dir = scratch("langevin");
    auto cfg = resolve_config("langevin", nullptr, {{"n-traj", "2000"}, {"t-end", "0.5"}, {"km-bins", "8"}}, 3);
    cfg.output_dir = dir;
    const auto man = run_experiment(cfg);
    EXPECT_EQ(first_line(read_file(dir / "km_coefficients.csv")), "bin_center,a1,a1_se,a2,a2_se,a3,a3_se,count");
    bool found = false;
    for (const auto& o : man.outputs) found = found || fs::path(o.path).filename() == "km_coefficients.csv";
    EXPECT_TRUE(found);
}

TEST(RunExperiment, OtherSchemas) {
    const auto dir = scratch("schemas");
    auto pm = resolve_config("path-mc", nullptr, {{"n-slices", "16"}, {"sweeps", "3000"}, {"therm", "500"}, {"max-lag", "4"}}, 1);
    pm.output_dir = dir;
    run_experiment(pm);
    EXPECT_EQ(first_line(read_file(dir / "correlator.csv")), "lag,corr,stderr");
    EXPECT_EQ(first_line(read_file(dir / "path_summary.csv")), "observable,value,stderr");

    auto os = resolve_config("os-check", nullptr,
                             {{"n-test-functions", "3"}, {"mc-functions", "2"}, {"draws", "200"}, {"wick-sites", "256"}}, 1);
    os.output_dir = dir;
    run_experiment(os);
    EXPECT_EQ(first_line(read_file(dir / "os_report.csv")), "set_id,size,min_eigenvalue,certified");

    auto cl = resolve_config("classical", nullptr, {{"hj-grid", "9x9"}, {"t-end", "5"}, {"hj-refine", "false"}}, 1);
    cl.output_dir = dir;
    run_experiment(cl);
    EXPECT_EQ(first_line(read_file(dir / "hj_residuals.csv")), "q,t,S,dSdq,dSdt,residual");
}

TEST(RunExperiment, ErrorsCarryContext) {
    auto cfg = resolve_config("fokker-planck", nullptr, {{"stationary", "true"}, {"diffusion", "0"}}, std::nullopt);
    cfg.output_dir = scratch("errors");
    try {
        run_experiment(cfg);
        FAIL();
    } catch (const UsageError&) {
        FAIL() << "module failure should not be a usage error";
    } catch (const Error& e) {
        EXPECT_EQ(std::string(e.what()).rfind("fokker-planck: ", 0), 0u);
    }
    auto bad = resolve_config("fokker-planck", nullptr, {{"bc", "periodic"}}, std::nullopt);
    EXPECT_THROW(run_experiment(bad), UsageError);
}

namespace {

PipelineOptions quick_pipeline() {
    PipelineOptions o;
    o.n_traj = 2000;
    o.dt = 1e-3;
    o.t_end = 1.0;
    o.sweeps = 20000;
    o.draws = 1000;
    return o;
}

}  // namespace

TEST(Pipeline, ZeroHbarSkipsStationaryStage) {
    auto o = quick_pipeline();
    o.hbar = 0.0;
    const auto man = emergence_pipeline(11, o, scratch("pipeline0"));
    ASSERT_EQ(man.stages.size(), 5u);
    EXPECT_EQ(man.stages[1].status, StageResult::Status::passed);
    EXPECT_FALSE(man.stages[1].reason.empty());
    EXPECT_EQ(man.stages[2].status, StageResult::Status::skipped);
    EXPECT_NE(man.stages[2].reason.find("hbar = 0"), std::string::npos);
    EXPECT_TRUE(man.passed()) << man.to_text();
}

TEST(Pipeline, InjectedFaultMarksExactlyThatStage) {
    auto o = quick_pipeline();
    o.break_stage = 4;
    const auto dir = scratch("pipeline_fault");
    const auto man = emergence_pipeline(11, o, dir);
    ASSERT_EQ(man.stages.size(), 5u);
    for (std::size_t k = 0; k < 5; ++k) {
        if (k == 3) {
            EXPECT_EQ(man.stages[k].status, StageResult::Status::failed);
            EXPECT_NE(man.stages[k].reason.find("injected"), std::string::npos);
        } else {
            EXPECT_EQ(man.stages[k].status, StageResult::Status::passed) << man.stages[k].name << ": " << man.stages[k].reason;
        }
    }
    EXPECT_FALSE(man.passed());
    EXPECT_EQ(first_line(read_file(dir / "pipeline_summary.csv")), "stage,status,check,passed");
}

TEST(Cli, ExitCodes) {
    const auto dir = scratch("cli");
    EXPECT_EQ(run_cli("--help", dir), 0);
    EXPECT_EQ(run_cli("", dir), 2);
    EXPECT_EQ(run_cli("teleport", dir), 2);
    EXPECT_EQ(run_cli("langevin --no-such-flag 1", dir), 2);
    EXPECT_EQ(run_cli("fokker-planck --bc periodic", dir), 2);

    {
        std::ofstream cfg(dir / "bad.cfg");
        cfg << "experiment = fokker-planck\n[fokker-planck]\nfoo = 1\n";
    }
    EXPECT_EQ(run_cli("fokker-planck --config " + (dir / "bad.cfg").string(), dir), 2);
    EXPECT_NE(read_file(dir / "stderr.txt").find("foo"), std::string::npos);

    EXPECT_EQ(run_cli("fokker-planck --stationary --grid -3:3:60", dir), 0);
    EXPECT_TRUE(fs::exists(dir / "density.csv"));
    EXPECT_TRUE(fs::exists(dir / "manifest.txt"));

    // A declared check fails: no Gram matrix clears a negative tolerance.
    EXPECT_EQ(run_cli("os-check --tolerance -1 --n-test-functions 2 --mc-functions 2 --draws 100 --wick-sites 256", dir), 1);
    // A module error that is not a usage problem.
    EXPECT_EQ(run_cli("fokker-planck --stationary --diffusion 0", dir), 1);
}

TEST(Cli, SeedOverrideAndJsonManifest) {
    const auto dir = scratch("cli_seed");
    {
        std::ofstream cfg(dir / "run.cfg");
        cfg << "seed = 1\n[langevin]\nn-traj = 500\nt-end = 0.2\nkm-bins = 4\n";
    }
    const std::string base = "langevin --config " + (dir / "run.cfg").string() + " --json-manifest";
    run_cli(base, dir);
    const auto one = read_file(dir / "km_coefficients.csv");
    EXPECT_NE(read_file(dir / "manifest.json").find("\"seed\": 1"), std::string::npos);
    run_cli(base + " --seed 2", dir);
    const auto two = read_file(dir / "km_coefficients.csv");
    EXPECT_NE(read_file(dir / "manifest.json").find("\"seed\": 2"), std::string::npos);
    EXPECT_NE(one, two);
    run_cli(base, dir);
    EXPECT_EQ(read_file(dir / "km_coefficients.csv"), one);
}
