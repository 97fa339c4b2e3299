#include <doctest.h>

#include <cmath>

#include "gibbsflow/error.hpp"
#include "gibbsflow/truncated_flow.hpp"
#include "gibbsflow/velocity.hpp"

using namespace gibbsflow;

namespace
{

TruncationSchedule static_bounds(std::size_t d)
{
    return {std::vector<Bound>(d, Bound::constant(-2.0)), std::vector<Bound>(d, Bound::constant(3.0))};
}

TruncationSchedule rising_lower(std::size_t d)
{
    Bound lo{[](double t) { return std::max(1.0 - 1.0 / t, -8.0); },
             [](double t) { return 1.0 - 1.0 / t > -8.0 ? 1.0 / (t * t) : 0.0; }};
    return {std::vector<Bound>(d, lo), std::vector<Bound>(d, Bound::constant(8.0))};
}

} // namespace

TEST_CASE("static bounds give a zero field")
{
    Matrix cov(2, 2);
    cov << 1.0, 0.3, 0.3, 2.0;
    const GaussianDensity prior(Vector::Zero(2), cov);
    const auto rule = QuadratureRule::simpson(41);
    const double x[] = {0.5, -1.0};
    CHECK(truncated_velocity(prior, static_bounds(2), rule, x, 0.5).velocity.norm() == 0.0);
    CHECK(truncated_jacobian(prior, static_bounds(2), rule, x, 0.5).norm() == 0.0);
}

TEST_CASE("rising lower bound pushes particles upward")
{
    const GaussianDensity prior(Vector::Zero(1), Matrix::Identity(1, 1));
    const auto sched = rising_lower(1);
    const auto rule = QuadratureRule::simpson(41);
    for (double t : {0.2, 0.5, 0.8, 0.99}) {
        const double lo = sched.lower(0, t);
        for (int k = 1; k < 40; ++k) {
            const double x[] = {lo + (8.0 - lo) * k / 40.0};
            CHECK(truncated_velocity(prior, sched, rule, x, t).velocity(0) > 0.0);
        }
    }
    const double outside[] = {-0.5};
    CHECK_THROWS_AS(truncated_velocity(prior, sched, rule, outside, 0.9), DomainError);
}

TEST_CASE("truncated jacobian matches finite differences")
{
    const GaussianDensity prior(Vector::Zero(1), Matrix::Identity(1, 1));
    const auto path = std::make_shared<TruncatedGaussianPath>(prior, rising_lower(1));
    const TruncatedFlow flow(path, QuadratureRule::simpson(41));
    for (double t : {0.3, 0.6, 0.9})
        for (double x0 : {0.2, 1.0, 2.5}) {
            const double x[] = {x0};
            const auto e = flow.evaluate(x, t, true);
            const Matrix fd = finite_difference_jacobian(flow, x, t);
            CHECK(e.jacobian(0, 0) == doctest::Approx(fd(0, 0)).epsilon(1e-4));
        }

    Matrix cov(3, 3);
    cov << 1.0, 0.5, 0.2, 0.5, 1.5, -0.3, 0.2, -0.3, 0.8;
    const auto path3 =
        std::make_shared<TruncatedGaussianPath>(GaussianDensity(Vector::Constant(3, 0.5), cov), rising_lower(3));
    const TruncatedFlow flow3(path3, QuadratureRule::simpson(41));
    const double x[] = {0.4, 1.1, 0.2};
    const auto e = flow3.evaluate(x, 0.7, true);
    const Matrix fd = finite_difference_jacobian(flow3, x, 0.7);
    CHECK((e.jacobian - fd).cwiseAbs().maxCoeff() / fd.cwiseAbs().maxCoeff() < 1e-4);
}

TEST_CASE("independent coordinates decouple")
{
    const GaussianDensity prior(Vector::Zero(2), Matrix::Identity(2, 2));
    const auto sched = rising_lower(2);
    const auto rule = QuadratureRule::simpson(41);
    const double a[] = {0.7, 0.1};
    const double b[] = {0.7, 2.9};
    const double va = truncated_velocity(prior, sched, rule, a, 0.8).velocity(0);
    CHECK(truncated_velocity(prior, sched, rule, b, 0.8).velocity(0) == doctest::Approx(va).epsilon(1e-6));
    const Matrix j = truncated_jacobian(prior, sched, rule, a, 0.8);
    CHECK(std::abs(j(0, 1)) < 1e-6);
    CHECK(std::abs(j(1, 0)) < 1e-6);
}

TEST_CASE("truncated path densities")
{
    const GaussianDensity prior(Vector::Zero(1), Matrix::Identity(1, 1));
    const TruncatedGaussianPath path(prior, rising_lower(1));
    CHECK(path.has_hard_constraints());
    const double x[] = {-0.5};
    CHECK(std::isfinite(path.log_density(x, 0.5)));
    CHECK(path.log_density(x, 0.9) == -std::numeric_limits<double>::infinity());
    CHECK(path.log_density_ratio(x, 0.5, 0.6) == 0.0);
    CHECK(path.log_density_ratio(x, 0.5, 0.9) == -std::numeric_limits<double>::infinity());
    Rng rng(3);
    double v[1];
    for (int k = 0; k < 100; ++k) {
        path.sample_initial(rng, v);
        CHECK(v[0] > -8.0);
    }
}

TEST_CASE("explicit steps carry the region onto the next region")
{
    const GaussianDensity prior(Vector::Zero(2), Matrix::Identity(2, 2));
    const auto path = std::make_shared<TruncatedGaussianPath>(prior, rising_lower(2));
    const TruncatedFlow flow(path, QuadratureRule::simpson(40));
    const double t = 0.5;
    const double dt = 0.02;
    const double lo = path->schedule().lower(0, t);
    const double next = path->schedule().lower(0, t + dt);
    const double x[] = {lo + 1e-12, 0.4};
    const auto e = flow.evaluate_step(x, t, dt, false);
    CHECK(x[0] + dt * e.velocity(0) == doctest::Approx(next).epsilon(1e-6));
    // the instantaneous bound speed overshoots the concave bound
    CHECK(x[0] + dt * flow.evaluate(x, t, false).velocity(0) > next + 1e-4);

    const double edge[] = {lo, 0.4};
    CHECK_FALSE(flow.in_domain(edge, t));
    const double inside[] = {lo + 0.1, 0.4};
    CHECK(flow.in_domain(inside, t));
    CHECK_FALSE(flow.in_domain(inside, 0.6));
}
