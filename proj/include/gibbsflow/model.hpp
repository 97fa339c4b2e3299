#pragma once

#include <Eigen/Dense>

#include <cstddef>
#include <functional>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gibbsflow/random.hpp"

namespace gibbsflow
{

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

inline std::span<const double> as_span(const Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline std::span<double> as_span(Vector& v) { return {v.data(), static_cast<std::size_t>(v.size())}; }
inline Eigen::Map<const Vector> as_vector(std::span<const double> s)
{
    return {s.data(), static_cast<Eigen::Index>(s.size())};
}

struct Interval
{
    double lo;
    double hi;

    double width() const { return hi - lo; }
    bool contains(double v) const { return v >= lo && v <= hi; }
};

using Box = std::vector<Interval>;

/// Values of the prior and likelihood along a one-coordinate slice of a point.
struct SliceValues
{
    std::vector<double> log_prior;
    std::vector<double> log_likelihood;
    /// d x n, column j holds the gradient at node j (only filled on request).
    Matrix grad_log_prior;
    Matrix grad_log_likelihood;
};

/// Prior pi_0 and likelihood L on R^d, in log scale.
class TargetModel
{
  public:
    TargetModel(Box support, Box integration_box);
    virtual ~TargetModel() = default;

    std::size_t dimension() const { return support_.size(); }
    const Box& support() const { return support_; }
    /// Finite box over which one-dimensional integrals are computed.
    const Box& integration_box() const { return box_; }

    virtual std::string name() const = 0;
    virtual double log_prior(std::span<const double> x) const = 0;
    virtual double log_likelihood(std::span<const double> x) const = 0;

    /// Defaults use central differences; slow, override when possible.
    virtual void grad_log_prior(std::span<const double> x, std::span<double> out) const;
    virtual void grad_log_likelihood(std::span<const double> x, std::span<double> out) const;
    virtual bool has_analytic_gradients() const { return false; }

    virtual void sample_prior(Rng& rng, std::span<double> out) const = 0;

    /// Half-bandwidth of the conditional-independence graph, if banded.
    virtual std::optional<std::size_t> bandwidth() const { return std::nullopt; }

    /// Evaluate the model at x with coordinate i replaced by each node.
    virtual void evaluate_slice(std::span<const double> x, std::size_t i, std::span<const double> nodes,
                                bool with_gradients, SliceValues& out) const;

  protected:
    Box support_;
    Box box_;
};

/// Model assembled from user-supplied callables.
class FunctionModel final : public TargetModel
{
  public:
    using Scalar = std::function<double(std::span<const double>)>;
    using Gradient = std::function<void(std::span<const double>, std::span<double>)>;
    using Sampler = std::function<void(Rng&, std::span<double>)>;

    struct Parts
    {
        Scalar log_prior;
        Scalar log_likelihood;
        Gradient grad_log_prior;      // optional
        Gradient grad_log_likelihood; // optional
        Sampler sample_prior;
        Box support;
        Box integration_box;
        std::string name = "function";
    };

    explicit FunctionModel(Parts parts);

    std::string name() const override { return parts_.name; }
    double log_prior(std::span<const double> x) const override { return parts_.log_prior(x); }
    double log_likelihood(std::span<const double> x) const override { return parts_.log_likelihood(x); }
    void grad_log_prior(std::span<const double> x, std::span<double> out) const override;
    void grad_log_likelihood(std::span<const double> x, std::span<double> out) const override;
    bool has_analytic_gradients() const override
    {
        return static_cast<bool>(parts_.grad_log_prior) && static_cast<bool>(parts_.grad_log_likelihood);
    }
    void sample_prior(Rng& rng, std::span<double> out) const override { parts_.sample_prior(rng, out); }

  private:
    Parts parts_;
};

/// Gaussian prior N(mu0, Sigma0) with likelihood exp(-(x-y)' Sigma_L^{-1} (x-y) / 2).
///
/// The likelihood is left unnormalized. The integration box is mu0 +- 8 prior
/// standard deviations per coordinate.
class GaussianLinearModel final : public TargetModel
{
  public:
    GaussianLinearModel(Vector prior_mean, Matrix prior_cov, Matrix lik_cov, Vector observation,
                        double box_sds = 8.0);

    std::string name() const override { return "gaussian"; }
    double log_prior(std::span<const double> x) const override;
    double log_likelihood(std::span<const double> x) const override;
    void grad_log_prior(std::span<const double> x, std::span<double> out) const override;
    void grad_log_likelihood(std::span<const double> x, std::span<double> out) const override;
    bool has_analytic_gradients() const override { return true; }
    void sample_prior(Rng& rng, std::span<double> out) const override;
    std::optional<std::size_t> bandwidth() const override { return bandwidth_; }

    const Vector& prior_mean() const { return mu0_; }
    const Matrix& prior_cov() const { return cov0_; }
    const Matrix& lik_cov() const { return cov_l_; }
    const Vector& observation() const { return y_; }

  private:
    Vector mu0_;
    Matrix cov0_;
    Matrix cov_l_;
    Vector y_;
    Matrix prec0_;
    Matrix prec_l_;
    Matrix chol0_;
    double log_norm0_;
    std::optional<std::size_t> bandwidth_;
};

/// Temperature function lambda on [0, 1] with lambda(0) = 0 and lambda(1) = 1.
class TemperatureSchedule
{
  public:
    TemperatureSchedule(std::string name, std::function<double(double)> value,
                        std::function<double(double)> derivative);

    static TemperatureSchedule linear();
    /// lambda(t) = t^p, p >= 1.
    static TemperatureSchedule power(double p);

    double value(double t) const;
    double derivative(double t) const { return derivative_(t); }
    const std::string& name() const { return name_; }

  private:
    std::string name_;
    std::function<double(double)> value_;
    std::function<double(double)> derivative_;
};

/// A curve of unnormalized densities gamma_t, t in [0, 1], used by the samplers.
class DensityPath
{
  public:
    virtual ~DensityPath() = default;

    virtual std::size_t dimension() const = 0;
    /// log gamma_t(x); -inf outside the support at time t.
    virtual double log_density(std::span<const double> x, double t) const = 0;
    /// log gamma_to(x) - log gamma_from(x).
    virtual double log_density_ratio(std::span<const double> x, double from, double to) const;
    virtual void grad_log_density(std::span<const double> x, double t, std::span<double> out) const = 0;
    virtual void sample_initial(Rng& rng, std::span<double> out) const = 0;
    /// True when gamma_t vanishes on sets of positive measure (gradients are unsafe).
    virtual bool has_hard_constraints() const { return false; }
    /// log L(x) for tempered paths; nullopt otherwise.
    virtual std::optional<double> log_likelihood(std::span<const double>) const { return std::nullopt; }
    /// lambda'(t) for tempered paths.
    virtual std::optional<double> temperature_derivative(double) const { return std::nullopt; }
};

/// pi_t proportional to pi_0 L^lambda(t).
class TemperedPath final : public DensityPath
{
  public:
    TemperedPath(std::shared_ptr<const TargetModel> model, TemperatureSchedule schedule);

    const TargetModel& model() const { return *model_; }
    std::shared_ptr<const TargetModel> model_ptr() const { return model_; }
    const TemperatureSchedule& schedule() const { return schedule_; }

    std::size_t dimension() const override { return model_->dimension(); }
    double log_density(std::span<const double> x, double t) const override;
    double log_density_ratio(std::span<const double> x, double from, double to) const override;
    void grad_log_density(std::span<const double> x, double t, std::span<double> out) const override;
    void sample_initial(Rng& rng, std::span<double> out) const override { model_->sample_prior(rng, out); }
    std::optional<double> log_likelihood(std::span<const double> x) const override
    {
        return model_->log_likelihood(x);
    }
    std::optional<double> temperature_derivative(double t) const override { return schedule_.derivative(t); }

  private:
    std::shared_ptr<const TargetModel> model_;
    TemperatureSchedule schedule_;
};

/// log pi_0(x) + lambda(t) log L(x). Throws DomainError when not finite.
double log_gamma(const TemperedPath& path, std::span<const double> x, double t);

/// lambda'(t) log L(x). Throws DomainError when not finite.
double dt_log_gamma(const TemperedPath& path, std::span<const double> x, double t);

/// Log density of N(mean, cov) given the lower Cholesky factor of cov.
double gaussian_log_density(std::span<const double> x, const Vector& mean, const Matrix& chol_lower);

} // namespace gibbsflow
