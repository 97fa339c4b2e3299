#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "gibbsflow/model.hpp"
#include "gibbsflow/velocity.hpp"

namespace gibbsflow
{

/// Knots 0 = t_0 < t_1 < ... < t_M = 1.
class TimeGrid
{
  public:
    explicit TimeGrid(std::vector<double> knots);

    static TimeGrid uniform(std::size_t steps);
    /// t_n = (n / M)^p.
    static TimeGrid power(std::size_t steps, double p);
    /// t_n = g(n / M) with g piecewise linear through (0, 0), the given (s, t) breakpoints and (1, 1).
    static TimeGrid piecewise_linear(std::size_t steps, const std::vector<std::pair<double, double>>& breakpoints);

    std::size_t steps() const { return knots_.size() - 1; }
    double operator[](std::size_t n) const { return knots_[n]; }
    double dt(std::size_t n) const { return knots_[n] - knots_[n - 1]; }
    const std::vector<double>& knots() const { return knots_; }

  private:
    std::vector<double> knots_;
};

/// log|det A| and the sign of det A (0 when singular).
std::pair<double, int> log_abs_det(const Matrix& a);
/// Same, by elimination inside a band of half-width `band`; falls back to dense LU on small pivots.
std::pair<double, int> log_abs_det_banded(const Matrix& a, std::size_t band);

struct EulerStep
{
    Vector x;
    double log_det = 0.0;
    int sign = 1;
    /// dt times the infinity norm of the velocity Jacobian.
    double stretch = 0.0;
    std::size_t evaluations = 0;
};

/// x' = x + dt f(x, t) with J = I + dt J_f(x, t). Throws DomainError on a non-finite result.
EulerStep euler_step(const VelocityField& field, std::span<const double> x, double t, double dt);

struct FlowOptions
{
    int max_halvings = 6;
    double divergence_cap = 1e6;
    /// Also bisect while dt |J_f|_inf exceeds this; 0 turns the check off.
    double max_stretch = 0.0;
};

struct FlowTrajectory
{
    std::vector<double> times;
    std::vector<Vector> states;
    /// log|det J_{Phi_n}| for n = 1..M (entry 0 is 0).
    std::vector<double> log_det;
    /// log density of the mapped sample, log pi_0(x_0) - sum of log|det|.
    std::vector<double> log_density;
    /// Number of halvings used in each step (entry 0 is 0).
    std::vector<int> halvings;
    bool failed = false;
    std::string failure;
    double failure_time = 0.0;
    std::size_t evaluations = 0;

    double total_log_det() const;
};

/// One grid step; the step is bisected while the determinant is not positive, the image leaves the
/// field domain or (optionally) the step stretches too much.
struct MapStep
{
    Vector x;
    double log_det = 0.0;
    int halvings = 0;
    std::size_t evaluations = 0;
    std::string failure;

    bool failed() const { return !failure.empty(); }
};

MapStep flow_map_step(const VelocityField& field, std::span<const double> x, double t0, double t1,
                      const FlowOptions& options = {});

FlowTrajectory run_flow(const VelocityField& field, const TimeGrid& grid, std::span<const double> x0,
                        double log_prior_x0 = 0.0, const FlowOptions& options = {});

struct ProbeOptions
{
    double tolerance = 1e-4;
    double initial_step = 1e-3;
    double max_step = 0.05;
    double min_step = 1e-8;
    std::size_t max_steps = 100000;
};

struct ProbeResult
{
    /// Times at the end of each accepted step (last entry is 1).
    std::vector<double> times;
    std::vector<double> steps;
    Vector final_state;
    std::size_t evaluations = 0;
    std::size_t rejected = 0;
};

/// Adaptive RK4 with step doubling on dx/dt = f(x, t), t in [0, 1]; no Jacobians.
ProbeResult adaptive_probe(const VelocityField& field, std::span<const double> x0, const ProbeOptions& options = {});

/// max_k |k / K - tau_k| over the accepted steps of a probe.
double probe_sup_distance(const ProbeResult& probe);

/// Median over probes of the piecewise-linear cumulative step fraction, on resolution + 1 equispaced times.
std::pair<std::vector<double>, std::vector<double>> median_step_curve(const std::vector<ProbeResult>& probes,
                                                                     std::size_t resolution);

/// Sup distance between the median cumulative step curve and the identity.
double median_probe_sup_distance(const std::vector<ProbeResult>& probes);

/// Grid whose knot density follows the median step density of the probes, mixed with a small uniform share.
TimeGrid schedule_from_probe(const std::vector<ProbeResult>& probes, std::size_t steps, double uniform_share = 0.02);

/// Direction (unit vector) and log speed of a velocity, for fields that overflow.
using LogVelocity = std::function<void(std::span<const double> x, double t, std::span<double> direction,
                                       double& log_speed)>;

LogVelocity log_velocity(const VelocityField& field);

struct ArclengthOptions
{
    double tolerance = 1e-8;
    double initial_step = 1e-3;
    double divergence_cap = 1e6;
    std::size_t max_steps = 200000;
};

struct ArclengthResult
{
    enum class Status
    {
        completed,
        diverged,
        exhausted
    };

    Status status = Status::exhausted;
    /// Time reached: 1 when completed, the blow-up time when diverged.
    double time = 0.0;
    Vector state;
    double max_norm = 0.0;
    std::size_t steps = 0;
    /// (t, |x|_inf) after each accepted step.
    std::vector<std::pair<double, double>> path;
};

const char* to_string(ArclengthResult::Status s);

/// Adaptive RK4 on the arclength-parametrised system for (x, t), which keeps
/// finite-time blow-up representable: t stalls while |x| grows.
ArclengthResult integrate_arclength(const LogVelocity& field, std::span<const double> x0,
                                    const ArclengthOptions& options = {});

} // namespace gibbsflow
