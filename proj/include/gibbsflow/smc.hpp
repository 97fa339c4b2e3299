#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gibbsflow/integrator.hpp"
#include "gibbsflow/model.hpp"
#include "gibbsflow/random.hpp"
#include "gibbsflow/velocity.hpp"

namespace gibbsflow
{

/// log sum exp; -inf for an empty span or all -inf entries.
double log_sum_exp(std::span<const double> v);

/// Normalized weights exp(log_w - logsumexp). Throws EnsembleDied when every entry is -inf.
std::vector<double> normalized_weights(std::span<const double> log_w);

/// 1 / sum W_i^2 on normalized weights.
double ess(std::span<const double> log_w);

struct ParticleEnsemble
{
    std::vector<Vector> x;
    /// Normalized log-weights (logsumexp = 0 after every update).
    std::vector<double> log_w;
    /// Ancestor indices, one vector per resampling event.
    std::vector<std::vector<std::size_t>> ancestry;
    double log_z = 0.0;
    std::size_t step = 0;

    ParticleEnsemble() = default;
    explicit ParticleEnsemble(std::vector<Vector> positions);

    std::size_t size() const { return x.size(); }
    std::vector<double> weights() const { return normalized_weights(log_w); }
    double ess() const { return gibbsflow::ess(log_w); }
    /// Adds per-particle log-increments, renormalizes and returns the log-Z increment.
    double reweight(std::span<const double> increments);
};

/// Weight update for deterministically mapped particles.
///
/// For each particle the increment is log gamma_t1(x_new) - log gamma_t0(x_old) + log|det|;
/// a failed map gives -inf. Positions are replaced by the mapped ones. Returns the log-Z increment.
double flow_weight_update(ParticleEnsemble& ensemble, const DensityPath& path, double t0, double t1,
                          const std::vector<MapStep>& steps);

/// log W += log gamma_t1(x) - log gamma_t0(x). Returns the log-Z increment.
double ais_weight_update(ParticleEnsemble& ensemble, const DensityPath& path, double t0, double t1);

enum class ResampleScheme
{
    multinomial,
    systematic
};

/// n ancestor indices drawn with probabilities w (normalized).
std::vector<std::size_t> resample_indices(std::span<const double> w, std::size_t n, ResampleScheme scheme, Rng& rng);

/// Resample the ensemble in place; weights become uniform, log_z is untouched.
void resample(ParticleEnsemble& ensemble, ResampleScheme scheme, Rng& rng);

enum class KernelKind
{
    rwmh,
    mala
};

struct KernelConfig
{
    KernelKind kind = KernelKind::rwmh;
    /// sigma for rwmh, epsilon for mala.
    double step = 0.5;
    /// Lower Cholesky factor of the proposal covariance; empty means identity.
    Matrix proposal_chol;
    std::size_t moves = 1;
    double target_low = 0.15;
    double target_high = 0.4;
    /// Robbins-Monro target acceptance for the pilot.
    double target = 0.3;
};

/// Validates the kernel against the path (mala needs a path without hard constraints).
void validate_kernel(const KernelConfig& cfg, const DensityPath& path);

struct MoveStats
{
    std::size_t proposed = 0;
    std::size_t accepted = 0;
    std::size_t evaluations = 0;

    double rate() const { return proposed == 0 ? 0.0 : static_cast<double>(accepted) / static_cast<double>(proposed); }
    MoveStats& operator+=(const MoveStats& o);
};

/// Random-walk Metropolis move targeting gamma_t; log_density holds log gamma_t(x) and is updated.
bool rwmh_move(const DensityPath& path, double t, Vector& x, double& log_density, const KernelConfig& cfg,
               Rng& rng);

/// Metropolis-adjusted Langevin move targeting gamma_t.
bool mala_move(const DensityPath& path, double t, Vector& x, double& log_density, const KernelConfig& cfg,
               Rng& rng);

/// cfg.moves kernel applications.
MoveStats mcmc_moves(const DensityPath& path, double t, Vector& x, const KernelConfig& cfg, Rng& rng);

/// Trapezoidal integral of lambda'(t) I_t over the grid.
double path_sampling_logz(std::span<const double> expected_loglik, const TimeGrid& grid,
                          const std::function<double(double)>& temperature_derivative);

enum class SamplerKind
{
    flow,
    ais,
    gibbs_ais
};

const char* to_string(SamplerKind kind);
const char* to_string(ResampleScheme scheme);
const char* to_string(KernelKind kind);

struct SamplerConfig
{
    SamplerKind kind = SamplerKind::gibbs_ais;
    std::size_t particles = 256;
    TimeGrid grid = TimeGrid::uniform(50);
    KernelConfig kernel;
    ResampleScheme scheme = ResampleScheme::systematic;
    /// Resample when ESS < threshold * N; 0 disables resampling.
    double resample_threshold = 0.5;
    /// Particles in the step-size pilot; 0 disables it.
    std::size_t pilot_particles = 128;
    FlowOptions flow;
    std::uint64_t seed = 1;
    unsigned threads = 1;
};

struct StepRecord
{
    std::size_t step = 0;
    double t = 0.0;
    double ess = 0.0;
    double log_z = 0.0;
    double acceptance = 0.0;
    std::size_t evaluations = 0;
    std::size_t failed = 0;
    bool resampled = false;
    /// Weighted estimate of E_{pi_t}[log L] (NaN when the path has no likelihood).
    double expected_loglik = 0.0;
};

struct SamplerResult
{
    ParticleEnsemble ensemble;
    std::vector<StepRecord> trace;
    /// Per-step kernel step sizes used by the main run.
    std::vector<double> kernel_steps;
    double log_z = 0.0;
    double path_sampling_log_z = 0.0;
    bool died = false;
    std::size_t evaluations = 0;
};

/// Run a flow, AIS or Gibbs-flow AIS sampler along the path.
///
/// field is required for flow and gibbs_ais. Initial positions default to
/// draws from the path at t = 0. Random numbers come from streams keyed by
/// (seed, particle, step, purpose), so results do not depend on threads.
SamplerResult run_sampler(const DensityPath& path, const VelocityField* field, const SamplerConfig& cfg,
                          const std::vector<Vector>& initial = {});

/// Pilot run adapting the kernel step per time step; returns the frozen schedule.
std::vector<double> pilot_kernel_steps(const DensityPath& path, const VelocityField* field, const SamplerConfig& cfg);

struct ConditionalResult
{
    /// Selected trajectory of post-move states x~_0..x~_M.
    std::vector<Vector> trajectory;
    ParticleEnsemble ensemble;
    std::size_t selected = 0;
};

/// One conditional SMC sweep of Gibbs-flow AIS with particle 0 pinned to the reference.
///
/// reference holds the post-move states at every grid time. kernel_steps
/// gives the step size per time step (empty uses cfg.kernel.step).
ConditionalResult conditional_smc(const std::vector<Vector>& reference, const DensityPath& path,
                                  const VelocityField* field, const SamplerConfig& cfg, Rng& rng,
                                  const std::vector<double>& kernel_steps = {});

} // namespace gibbsflow
