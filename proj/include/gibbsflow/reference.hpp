#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <span>
#include <utility>

#include "gibbsflow/integrator.hpp"
#include "gibbsflow/model.hpp"
#include "gibbsflow/quadrature.hpp"
#include "gibbsflow/velocity.hpp"

namespace gibbsflow
{

/// Linear gaussian tempered path: prior N(mu0, Sigma0), likelihood centred at y with covariance Sigma_L.
struct GaussianPath
{
    Vector mu0;
    Matrix sigma0;
    Matrix sigma_l;
    Vector y;

    GaussianPath(Vector mu0, Matrix sigma0, Matrix sigma_l, Vector y);

    std::size_t dimension() const { return static_cast<std::size_t>(mu0.size()); }
    /// The matching model for the numerical flows.
    std::shared_ptr<GaussianLinearModel> model() const;
};

/// (mu_t, Sigma_t) with Sigma_t^{-1} = Sigma0^{-1} + lambda Sigma_L^{-1}.
std::pair<Vector, Matrix> gaussian_params(const GaussianPath& gp, const TemperatureSchedule& schedule, double t);

/// E_{pi_t}[log L] = -(tr(Sigma_L^{-1} Sigma_t) + (mu_t - y)' Sigma_L^{-1} (mu_t - y)) / 2.
double gaussian_expected_loglik(const GaussianPath& gp, const TemperatureSchedule& schedule, double t);

/// Kinetic-energy minimising velocity -(lambda'/2) Sigma_t Sigma_L^{-1} (mu_t - 2y + x).
Vector minke_velocity(const GaussianPath& gp, const TemperatureSchedule& schedule, std::span<const double> x,
                      double t);

/// Jacobian of minke_velocity (constant in x).
Matrix minke_jacobian(const GaussianPath& gp, const TemperatureSchedule& schedule, double t);

/// Monotone affine transport of a scalar path: mu_t + sqrt(Sigma_t / Sigma_0) (x0 - mu_0).
double one_d_exact_map(const GaussianPath& gp, const TemperatureSchedule& schedule, double x0, double t);

/// Per-coordinate monotone transport for diagonal Sigma0 and Sigma_L:
/// f_i = lambda' Sigma_t,ii / Sigma_L,ii ((y_i - mu_t,i) - (x_i - mu_t,i) / 2).
Vector coordinatewise_velocity(const GaussianPath& gp, const TemperatureSchedule& schedule, std::span<const double> x,
                               double t);

/// Value carried as sign * exp(log_abs), for fields that overflow doubles.
struct LogScaled
{
    double sign;
    double log_abs;

    double value() const { return sign * std::exp(log_abs); }
};

/// Anti-derivative field of the standard bivariate gaussian path (mu0 = y = 0, Sigma0 = Sigma_L = I).
Vector antiderivative_velocity(const TemperatureSchedule& schedule, double gamma1, double gamma2,
                               std::span<const double> x, double t);

/// Components of antiderivative_velocity in log scale.
std::array<LogScaled, 2> antiderivative_velocity_log(const TemperatureSchedule& schedule, double gamma1,
                                                     double gamma2, std::span<const double> x, double t);

/// The anti-derivative field as direction and log speed, for arclength integration.
LogVelocity antiderivative_log_field(const TemperatureSchedule& schedule, double gamma1, double gamma2);

/// Two-dimensional Knothe-type flow with g_1 the marginal CDF of pi_t.
///
/// All integrals use tensor_rule over the model's integration box, split at
/// the current coordinate where a prefix integral is needed.
Vector knothe_velocity_2d(const TemperedPath& path, std::span<const double> x, double t,
                          const QuadratureRule& tensor_rule);

} // namespace gibbsflow
