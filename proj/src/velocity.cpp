#include "gibbsflow/velocity.hpp"

#include <algorithm>
#include <cmath>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

FunctionField::FunctionField(std::size_t dimension, Velocity velocity, Jacobian jacobian)
    : dim_(dimension), velocity_(std::move(velocity)), jacobian_(std::move(jacobian))
{
    if (!velocity_)
        throw InvalidArgument("function field needs a velocity");
}

VelocityEvaluation FunctionField::evaluate(std::span<const double> x, double t, bool with_jacobian) const
{
    VelocityEvaluation out;
    out.velocity = velocity_(x, t);
    if (with_jacobian) {
        out.jacobian = jacobian_ ? jacobian_(x, t) : finite_difference_jacobian(*this, x, t);
        out.has_jacobian = true;
    }
    return out;
}

VelocityEvaluation ZeroField::evaluate(std::span<const double>, double, bool with_jacobian) const
{
    VelocityEvaluation out;
    out.velocity = Vector::Zero(static_cast<Eigen::Index>(dim_));
    if (with_jacobian) {
        out.jacobian = Matrix::Zero(static_cast<Eigen::Index>(dim_), static_cast<Eigen::Index>(dim_));
        out.has_jacobian = true;
    }
    return out;
}

Matrix finite_difference_jacobian(const VelocityField& field, std::span<const double> x, double t, double h)
{
    const auto d = static_cast<Eigen::Index>(x.size());
    Matrix j(d, d);
    Vector work = as_vector(x);
    for (Eigen::Index k = 0; k < d; ++k) {
        const double step = h * std::max(1.0, std::abs(x[static_cast<std::size_t>(k)]));
        work(k) = x[static_cast<std::size_t>(k)] + step;
        const Vector up = field.evaluate(as_span(work), t, false).velocity;
        work(k) = x[static_cast<std::size_t>(k)] - step;
        const Vector down = field.evaluate(as_span(work), t, false).velocity;
        work(k) = x[static_cast<std::size_t>(k)];
        j.col(k) = (up - down) / (2.0 * step);
    }
    return j;
}

} // namespace gibbsflow
