#pragma once

#include <cstddef>
#include <functional>
#include <optional>
#include <span>

#include "gibbsflow/model.hpp"

namespace gibbsflow
{

struct VelocityEvaluation
{
    Vector velocity;
    /// d x d, entry (i, k) is the derivative of velocity_i with respect to x_k.
    Matrix jacobian;
    /// F_t(x_i | x_{-i}) per coordinate (empty when not applicable).
    Vector conditional_cdf;
    /// I_t(x_{-i}) per coordinate (empty when not applicable).
    Vector conditional_loglik;
    /// Model log-density evaluations spent.
    std::size_t evaluations = 0;
    bool has_jacobian = false;
};

/// Time-dependent velocity field f(x, t) with optional Jacobian.
class VelocityField
{
  public:
    virtual ~VelocityField() = default;

    virtual std::size_t dimension() const = 0;
    virtual VelocityEvaluation evaluate(std::span<const double> x, double t, bool with_jacobian) const = 0;
    /// Field used by an explicit step of length dt from t; defaults to evaluate(x, t).
    virtual VelocityEvaluation evaluate_step(std::span<const double> x, double t, double /*dt*/,
                                             bool with_jacobian) const
    {
        return evaluate(x, t, with_jacobian);
    }
    /// False when x lies outside the set where the field is defined at time t.
    virtual bool in_domain(std::span<const double> /*x*/, double /*t*/) const { return true; }
    /// Half-bandwidth of the Jacobian, if it is banded.
    virtual std::optional<std::size_t> bandwidth() const { return std::nullopt; }
};

/// Field given by callables; the Jacobian falls back to central differences.
class FunctionField final : public VelocityField
{
  public:
    using Velocity = std::function<Vector(std::span<const double>, double)>;
    using Jacobian = std::function<Matrix(std::span<const double>, double)>;

    FunctionField(std::size_t dimension, Velocity velocity, Jacobian jacobian = {});

    std::size_t dimension() const override { return dim_; }
    VelocityEvaluation evaluate(std::span<const double> x, double t, bool with_jacobian) const override;

  private:
    std::size_t dim_;
    Velocity velocity_;
    Jacobian jacobian_;
};

/// Field that is zero everywhere.
class ZeroField final : public VelocityField
{
  public:
    explicit ZeroField(std::size_t dimension) : dim_(dimension) {}

    std::size_t dimension() const override { return dim_; }
    VelocityEvaluation evaluate(std::span<const double> x, double t, bool with_jacobian) const override;

  private:
    std::size_t dim_;
};

/// Central-difference Jacobian of a field's velocity, step h scaled by max(1, |x_k|).
Matrix finite_difference_jacobian(const VelocityField& field, std::span<const double> x, double t,
                                  double h = 1e-5);

} // namespace gibbsflow
