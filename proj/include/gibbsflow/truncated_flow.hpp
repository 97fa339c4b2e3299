#pragma once

#include <functional>
#include <memory>
#include <span>
#include <vector>

#include "gibbsflow/model.hpp"
#include "gibbsflow/quadrature.hpp"
#include "gibbsflow/velocity.hpp"

namespace gibbsflow
{

/// A moving bound b(t) and its derivative.
struct Bound
{
    std::function<double(double)> value;
    std::function<double(double)> derivative;

    static Bound constant(double v);
};

/// Per-coordinate truncation interval (alpha_i(t), beta_i(t)).
///
/// alpha_i is nondecreasing and beta_i nonincreasing; the terminal values
/// alpha_i(1) and beta_i(1) are the target truncation bounds.
class TruncationSchedule
{
  public:
    TruncationSchedule(std::vector<Bound> lower, std::vector<Bound> upper);

    std::size_t dimension() const { return lower_.size(); }
    double lower(std::size_t i, double t) const { return lower_[i].value(t); }
    double upper(std::size_t i, double t) const { return upper_[i].value(t); }
    double lower_derivative(std::size_t i, double t) const { return lower_[i].derivative(t); }
    double upper_derivative(std::size_t i, double t) const { return upper_[i].derivative(t); }
    double terminal_lower(std::size_t i) const { return lower(i, 1.0); }
    double terminal_upper(std::size_t i) const { return upper(i, 1.0); }
    bool contains(std::span<const double> x, double t) const;

  private:
    std::vector<Bound> lower_;
    std::vector<Bound> upper_;
};

/// N(mu, Sigma) with cached factorisations.
class GaussianDensity
{
  public:
    GaussianDensity(Vector mean, Matrix cov);

    std::size_t dimension() const { return static_cast<std::size_t>(mean_.size()); }
    const Vector& mean() const { return mean_; }
    const Matrix& cov() const { return cov_; }
    const Matrix& precision() const { return prec_; }
    const Matrix& chol() const { return chol_; }
    double sd(std::size_t i) const;

    double log_density(std::span<const double> x) const;
    /// Sigma^{-1} (mu - x).
    Vector grad_log_density(std::span<const double> x) const;
    void sample(Rng& rng, std::span<double> out) const;

  private:
    Vector mean_;
    Matrix cov_;
    Matrix prec_;
    Matrix chol_;
};

/// pi_t proportional to pi_0 restricted to prod_i (alpha_i(t), beta_i(t)).
class TruncatedGaussianPath final : public DensityPath
{
  public:
    TruncatedGaussianPath(GaussianDensity prior, TruncationSchedule schedule);

    const GaussianDensity& prior() const { return prior_; }
    const TruncationSchedule& schedule() const { return schedule_; }

    std::size_t dimension() const override { return prior_.dimension(); }
    double log_density(std::span<const double> x, double t) const override;
    double log_density_ratio(std::span<const double> x, double from, double to) const override;
    void grad_log_density(std::span<const double> x, double t, std::span<double> out) const override;
    /// Prior draw restricted to the region at t = 0 by rejection.
    void sample_initial(Rng& rng, std::span<double> out) const override;
    bool has_hard_constraints() const override { return true; }

  private:
    GaussianDensity prior_;
    TruncationSchedule schedule_;
};

/// Gibbs velocity field of a gradually truncated gaussian.
///
/// Bounds are clipped to mu_i +- 8 sd_i for quadrature.
class TruncatedFlow final : public VelocityField
{
  public:
    enum class Diagonal
    {
        exact_discrete,
        endpoint_identity
    };

    TruncatedFlow(std::shared_ptr<const TruncatedGaussianPath> path, QuadratureRule rule,
                  Diagonal diagonal = Diagonal::exact_discrete);

    std::size_t dimension() const override { return path_->dimension(); }
    VelocityEvaluation evaluate(std::span<const double> x, double t, bool with_jacobian) const override;
    /// Bound speeds are replaced by secants over [t, t + dt], so the Euler map
    /// sends the region at t onto the region at t + dt.
    VelocityEvaluation evaluate_step(std::span<const double> x, double t, double dt,
                                     bool with_jacobian) const override;
    bool in_domain(std::span<const double> x, double t) const override { return path_->schedule().contains(x, t); }

  private:
    std::shared_ptr<const TruncatedGaussianPath> path_;
    QuadratureRule rule_;
    Diagonal diagonal_;
};

VelocityEvaluation truncated_velocity(const GaussianDensity& prior, const TruncationSchedule& schedule,
                                      const QuadratureRule& rule, std::span<const double> x, double t);

Matrix truncated_jacobian(const GaussianDensity& prior, const TruncationSchedule& schedule,
                          const QuadratureRule& rule, std::span<const double> x, double t);

} // namespace gibbsflow
