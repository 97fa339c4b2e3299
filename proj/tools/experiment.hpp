#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "gibbsflow/error.hpp"
#include "gibbsflow/integrator.hpp"
#include "gibbsflow/model.hpp"
#include "gibbsflow/smc.hpp"
#include "gibbsflow/velocity.hpp"

namespace gibbsflow::cli
{

using nlohmann::json;

/// Malformed or inconsistent experiment configuration (exit code 2).
class ConfigError : public InvalidArgument
{
  public:
    using InvalidArgument::InvalidArgument;
};

/// A fully resolved experiment cell.
struct Experiment
{
    json config;
    std::string model_name;
    std::shared_ptr<const DensityPath> path;
    /// Set for tempered models.
    std::shared_ptr<const TemperedPath> tempered;
    std::shared_ptr<const VelocityField> field;
    SamplerConfig sampler;
    bool latin_hypercube = false;
    std::size_t replicates = 1;
    std::uint64_t seed = 1;
    /// Mixture ground truth, for mode assignment.
    std::vector<double> truth;
    /// Known normalizing constant Z(1) / Z(0), when available.
    std::optional<double> reference_z;
    ProbeOptions probe;
    std::size_t probe_starts = 4;
};

json load_config(const std::filesystem::path& file);

/// Cells of the run matrix: every combination of the "sweep" arrays, in key order.
///
/// Keys of "sweep" are dotted paths into the config (for example "model.rho").
/// Each returned pair holds the swept values and the config with them substituted.
std::vector<std::pair<json, json>> expand_sweep(const json& config);

/// Validate a cell and build its model, path, field and sampler. seed overrides the config seed.
Experiment build_experiment(const json& cell, std::optional<std::uint64_t> seed,
                            const std::filesystem::path& base_dir = {});

/// Seed of replicate r of an experiment run with `seed`.
std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate);

/// Starting positions of one replicate (prior draws or a latin hypercube over the prior support).
std::vector<Vector> initial_positions(const Experiment& e, std::uint64_t replicate_seed);

struct Options
{
    std::filesystem::path config;
    std::optional<std::uint64_t> seed;
    std::filesystem::path out = ".";
    unsigned threads = 0;
};

/// Subcommands; each writes its result files under options.out.
void command_run(const Options& options);
void command_schedule(const Options& options);
void command_zest(const Options& options);
void command_demo_divergence(const Options& options);

/// Entry point; returns the process exit code.
int main(int argc, char** argv);

inline constexpr const char* trace_header =
    "replicate,step,t,ess,log_z,acceptance,evaluations,failed,resampled,expected_loglik";

} // namespace gibbsflow::cli
