#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include <unistd.h>

#include "experiment.hpp"

using namespace gibbsflow;
using namespace gibbsflow::cli;
namespace fs = std::filesystem;

namespace
{

struct TempDir
{
    fs::path path;

    explicit TempDir(const std::string& tag)
        : path(fs::temp_directory_path() / ("gibbsflow-" + tag + "-" + std::to_string(::getpid())))
    {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

std::string slurp(const fs::path& file)
{
    std::ifstream is(file, std::ios::binary);
    std::stringstream ss;
    ss << is.rdbuf();
    return ss.str();
}

fs::path write_config(const fs::path& dir, const std::string& name, const json& config)
{
    const auto file = dir / name;
    std::ofstream(file) << config.dump(2);
    return file;
}

int run_cli(std::vector<std::string> args)
{
    args.insert(args.begin(), "gibbsflow");
    std::vector<char*> argv;
    for (auto& a : args)
        argv.push_back(a.data());
    return cli::main(static_cast<int>(argv.size()), argv.data());
}

json gaussian_config()
{
    return json::parse(R"({
      "seed": 3,
      "replicates": 3,
      "model": {"name": "gaussian", "prior_mean": [0, 0], "lik_cov": 0.5, "observation": [1, -1]},
      "grid": {"kind": "uniform", "steps": 8},
      "sampler": {"kind": "gibbs_ais", "particles": 32, "kernel": {"moves": 2, "pilot_particles": 16}}
    })");
}

json orthant_config()
{
    return json::parse(R"({
      "seed": 5,
      "model": {"name": "orthant", "dimension": 2, "rho": 0.5},
      "quadrature": {"points": 20},
      "grid": {"kind": "uniform", "steps": 10},
      "sampler": {"kind": "gibbs_ais", "particles": 64, "kernel": {"covariance": "prior", "pilot_particles": 32}}
    })");
}

} // namespace

TEST_CASE("run output does not depend on the thread count")
{
    TempDir tmp("threads");
    for (const auto& [name, config] : {std::pair{"replicated", gaussian_config()}, std::pair{"single", orthant_config()}}) {
        const auto file = write_config(tmp.path, std::string(name) + ".json", config);
        const auto one = tmp.path / (std::string(name) + "-1");
        const auto many = tmp.path / (std::string(name) + "-4");
        const auto again = tmp.path / (std::string(name) + "-1b");
        REQUIRE(run_cli({"run", "--config", file.string(), "--out", one.string(), "--threads", "1"}) == 0);
        REQUIRE(run_cli({"run", "--config", file.string(), "--out", many.string(), "--threads", "4"}) == 0);
        REQUIRE(run_cli({"run", "--config", file.string(), "--out", again.string(), "--threads", "1"}) == 0);
        for (const char* f : {"trace.csv", "particles.csv"}) {
            CAPTURE(name);
            CAPTURE(f);
            CHECK(slurp(one / f) == slurp(many / f));
            CHECK(slurp(one / f) == slurp(again / f));
        }
    }
}

TEST_CASE("result files carry versioned headers")
{
    TempDir tmp("headers");
    auto config = gaussian_config();
    config["replicates"] = 2;
    const auto file = write_config(tmp.path, "g.json", config);
    REQUIRE(run_cli({"run", "--config", file.string(), "--out", (tmp.path / "run").string()}) == 0);
    REQUIRE(run_cli({"zest", "--config", file.string(), "--out", (tmp.path / "zest").string()}) == 0);

    std::istringstream trace(slurp(tmp.path / "run" / "trace.csv"));
    std::string line;
    std::getline(trace, line);
    CHECK(line == "#gibbsflow trace v1");
    std::getline(trace, line);
    CHECK(line == "replicate,step,t,ess,log_z,acceptance,evaluations,failed,resampled,expected_loglik");
    std::size_t rows = 0;
    while (std::getline(trace, line))
        ++rows;
    CHECK(rows == 2 * 9);

    std::istringstream particles(slurp(tmp.path / "run" / "particles.csv"));
    std::getline(particles, line);
    CHECK(line == "#gibbsflow particles v1");
    std::getline(particles, line);
    CHECK(line == "replicate,particle,log_weight,x1,x2");

    std::istringstream zest(slurp(tmp.path / "zest" / "zest.csv"));
    std::getline(zest, line);
    CHECK(line == "#gibbsflow zest v1");
    std::getline(zest, line);
    CHECK(line == "replicate,log_z,z,final_ess,evaluations,died");

    const auto summary = json::parse(slurp(tmp.path / "run" / "summary.json"));
    CHECK(summary["replicates"].size() == 2);
    CHECK(summary["evaluations"].get<std::size_t>() > 0);
    CHECK(summary.contains("wall_seconds"));
}

TEST_CASE("seed flag overrides the config seed")
{
    TempDir tmp("seed");
    const auto file = write_config(tmp.path, "g.json", gaussian_config());
    REQUIRE(run_cli({"run", "--config", file.string(), "--out", (tmp.path / "a").string()}) == 0);
    REQUIRE(run_cli({"run", "--config", file.string(), "--out", (tmp.path / "b").string(), "--seed", "3"}) == 0);
    REQUIRE(run_cli({"run", "--config", file.string(), "--out", (tmp.path / "c").string(), "--seed", "4"}) == 0);
    CHECK(slurp(tmp.path / "a" / "trace.csv") == slurp(tmp.path / "b" / "trace.csv"));
    CHECK(slurp(tmp.path / "a" / "trace.csv") != slurp(tmp.path / "c" / "trace.csv"));
}

TEST_CASE("config errors exit with code 2")
{
    TempDir tmp("errors");
    const auto expect_config_error = [&](const json& config) {
        CAPTURE(config.dump());
        const auto file = write_config(tmp.path, "bad.json", config);
        CHECK(run_cli({"run", "--config", file.string(), "--out", (tmp.path / "out").string()}) == 2);
    };
    auto c = gaussian_config();
    c["model"]["prior_sd"] = 1;
    expect_config_error(c);
    c = gaussian_config();
    c["sampler"]["kernel"]["moves"] = -1;
    expect_config_error(c);
    c = gaussian_config();
    c["sampler"]["kind"] = "hmc";
    expect_config_error(c);
    c = gaussian_config();
    c.erase("model");
    expect_config_error(c);
    c = gaussian_config();
    c["extra"] = true;
    expect_config_error(c);
    c = orthant_config();
    c["sampler"]["kernel"]["kind"] = "mala";
    expect_config_error(c);
    c = orthant_config();
    c["schedule"] = "linear";
    expect_config_error(c);
    c = orthant_config();
    c["sampler"]["initial"] = "latin_hypercube";
    expect_config_error(c);
    c = json::parse(R"({"model": {"name": "mixture", "components": 3}})");
    expect_config_error(c);
    c = gaussian_config();
    c["grid"] = {{"kind", "uniform"}, {"steps", 5}, {"exponent", 2}};
    expect_config_error(c);

    std::ofstream(tmp.path / "broken.json") << "{\"model\": ";
    CHECK(run_cli({"run", "--config", (tmp.path / "broken.json").string()}) == 2);
    CHECK(run_cli({"run", "--config", (tmp.path / "missing.json").string()}) == 2);
    CHECK(run_cli({"run"}) == 2);
}

TEST_CASE("sweeps expand in key order")
{
    const auto config = json::parse(R"({
      "model": {"name": "orthant", "dimension": 2, "rho": 0},
      "sweep": {"model.rho": [0, 0.5], "model.xi": [0, 1, 2]}
    })");
    const auto cells = expand_sweep(config);
    REQUIRE(cells.size() == 6);
    CHECK(cells[0].first == json{{"model.rho", 0}, {"model.xi", 0}});
    CHECK(cells[1].first == json{{"model.rho", 0}, {"model.xi", 1}});
    CHECK(cells[5].first == json{{"model.rho", 0.5}, {"model.xi", 2}});
    CHECK(cells[5].second["model"]["xi"] == 2);
    CHECK_FALSE(cells[5].second.contains("sweep"));

    const auto e = build_experiment(cells[3].second, std::nullopt);
    REQUIRE(e.reference_z);
    CHECK(*e.reference_z == doctest::Approx(0.25 + std::asin(0.5) / (2 * std::numbers::pi)));
    CHECK_FALSE(build_experiment(cells[4].second, std::nullopt).reference_z);

    CHECK_THROWS_AS(expand_sweep(json::parse(R"({"sweep": {"model.rho": []}})")), ConfigError);
}

TEST_CASE("sweep runs write one directory per cell")
{
    TempDir tmp("sweep");
    auto config = orthant_config();
    config["sampler"]["particles"] = 16;
    config["sweep"] = {{"model.rho", {0.0, 0.5}}};
    const auto file = write_config(tmp.path, "s.json", config);
    REQUIRE(run_cli({"zest", "--config", file.string(), "--out", (tmp.path / "out").string()}) == 0);
    CHECK(fs::exists(tmp.path / "out" / "cell-000" / "zest.csv"));
    CHECK(fs::exists(tmp.path / "out" / "cell-001" / "summary.json"));
    const auto index = json::parse(slurp(tmp.path / "out" / "sweep.json"));
    REQUIRE(index.size() == 2);
    CHECK(index[1]["params"]["model.rho"] == 0.5);
    const auto summary = json::parse(slurp(tmp.path / "out" / "cell-001" / "summary.json"));
    CHECK(summary["reference_z"].get<double>() == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("replicate seeds and latin hypercube starts")
{
    CHECK(replicate_seed(1, 0) != replicate_seed(1, 1));
    CHECK(replicate_seed(1, 0) != replicate_seed(2, 0));
    CHECK(replicate_seed(1, 0) == replicate_seed(1, 0));

    auto config = json::parse(R"({
      "model": {"name": "mixture"},
      "sampler": {"particles": 20, "initial": "latin_hypercube"}
    })");
    const auto e = build_experiment(config, 7);
    CHECK(e.seed == 7);
    CHECK(e.truth == std::vector<double>{-3, 0, 3, 6});
    const auto starts = initial_positions(e, replicate_seed(e.seed, 0));
    REQUIRE(starts.size() == 20);
    for (std::size_t k = 0; k < 4; ++k) {
        std::vector<int> strata(20, 0);
        for (const auto& x : starts) {
            CHECK(std::abs(x(static_cast<Eigen::Index>(k))) <= 10.0);
            ++strata[static_cast<std::size_t>((x(static_cast<Eigen::Index>(k)) + 10.0) / 1.0)];
        }
        CHECK(std::all_of(strata.begin(), strata.end(), [](int n) { return n == 1; }));
    }
}

TEST_CASE("schedule and divergence commands")
{
    TempDir tmp("schedule");
    auto config = gaussian_config();
    config["probe"] = {{"starts", 2}, {"tolerance", 1e-5}};
    const auto file = write_config(tmp.path, "g.json", config);
    REQUIRE(run_cli({"schedule", "--config", file.string(), "--out", (tmp.path / "s").string()}) == 0);
    const auto probes = slurp(tmp.path / "s" / "probes.csv");
    CHECK(probes.starts_with("#gibbsflow probe v1\nstart,step,t,dt\n0,1,"));
    const auto summary = json::parse(slurp(tmp.path / "s" / "summary.json"));
    CHECK(summary["probes"].size() == 2);
    CHECK(summary["median_sup_distance"].get<double>() >= 0.0);

    REQUIRE(run_cli({"demo-divergence", "--out", (tmp.path / "d").string()}) == 0);
    const auto demo = json::parse(slurp(tmp.path / "d" / "summary.json"));
    REQUIRE(demo["flows"].size() == 3);
    CHECK(demo["flows"][0]["status"] == "diverged");
    CHECK(demo["flows"][0]["time"].get<double>() < 1.0);
    CHECK(demo["flows"][1]["status"] == "completed");
    CHECK(demo["flows"][2]["status"] == "completed");
}

TEST_CASE("example config: orthant zest recovers one third")
{
    TempDir tmp("zest-example");
    const auto config = fs::path(GIBBSFLOW_CONFIG_DIR) / "trunc_d2_rho05.json";
    REQUIRE(run_cli({"zest", "--config", config.string(), "--out", tmp.path.string()}) == 0);
    const auto summary = json::parse(slurp(tmp.path / "summary.json"));
    CHECK(summary["replicates"] == 100);
    const double mean_log_z = summary["mean_log_z"].get<double>();
    const double se_log_z = summary["se_log_z"].get<double>();
    CHECK(std::abs(mean_log_z - std::log(1.0 / 3.0)) <= 3.0 * se_log_z);
    CHECK(std::abs(summary["z_score"].get<double>()) <= 3.0);
}
