#pragma once

#include <memory>
#include <span>

#include "gibbsflow/model.hpp"
#include "gibbsflow/quadrature.hpp"
#include "gibbsflow/velocity.hpp"

namespace gibbsflow
{

/// How the diagonal of the Gibbs-flow Jacobian is computed.
enum class JacobianDiagonal
{
    /// Differentiate the rebuilt quadrature rules exactly (matches finite differences of the velocity).
    exact_discrete,
    /// Use the continuum identity lambda' (I_t(x_{-i}) - log L(x)) - f_i d_i log gamma_t(x).
    endpoint_identity
};

/// Gibbs velocity field of a tempered path.
///
/// Every one-dimensional integral over coordinate i is split at x_i into
/// [lo_i, x_i] and [x_i, hi_i] of the integration box, each carrying its own
/// copy of the rule, so x_i is always a node.
class GibbsFlow final : public VelocityField
{
  public:
    GibbsFlow(std::shared_ptr<const TemperedPath> path, QuadratureRule rule,
              JacobianDiagonal diagonal = JacobianDiagonal::exact_discrete);

    std::size_t dimension() const override { return path_->dimension(); }
    VelocityEvaluation evaluate(std::span<const double> x, double t, bool with_jacobian) const override;
    std::optional<std::size_t> bandwidth() const override { return path_->model().bandwidth(); }
    /// Inside the model's integration box.
    bool in_domain(std::span<const double> x, double t) const override;

    const TemperedPath& path() const { return *path_; }
    const QuadratureRule& rule() const { return rule_; }

  private:
    std::shared_ptr<const TemperedPath> path_;
    QuadratureRule rule_;
    JacobianDiagonal diagonal_;
};

VelocityEvaluation gibbs_evaluate(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x,
                                  double t, bool with_jacobian,
                                  JacobianDiagonal diagonal = JacobianDiagonal::exact_discrete);

/// Velocity, conditional CDFs and I_t(x_{-i}); no Jacobian.
VelocityEvaluation gibbs_velocity(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x,
                                  double t);

Matrix gibbs_jacobian(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x, double t,
                      JacobianDiagonal diagonal = JacobianDiagonal::exact_discrete);

/// Liouville residual of the Gibbs flow at (x, t), for d <= 3.
///
/// pi_t and I_t are computed by the tensor product of tensor_rule over the box.
double local_error(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x, double t,
                   const QuadratureRule& tensor_rule);

} // namespace gibbsflow
