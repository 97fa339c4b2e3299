#include <doctest.h>

#include <cmath>
#include <memory>
#include <numbers>

#include "gibbsflow/error.hpp"
#include "gibbsflow/model.hpp"
#include "test_support.hpp"

using namespace gibbsflow;

namespace
{

const double half_log_2pi = 0.5 * std::log(2.0 * std::numbers::pi);

} // namespace

TEST_CASE("log_gamma on the scalar gaussian path")
{
    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::linear());
    const double zero[] = {0.0};
    const double one[] = {1.0};
    CHECK(log_gamma(*path, zero, 0.37) == doctest::Approx(-half_log_2pi).epsilon(1e-15));
    CHECK(log_gamma(*path, one, 1.0) == doctest::Approx(-half_log_2pi - 1.0).epsilon(1e-15));
    CHECK(log_gamma(*path, one, 0.5) == doctest::Approx(-half_log_2pi - 0.75).epsilon(1e-15));
}

TEST_CASE("log_gamma endpoints equal prior and prior plus likelihood")
{
    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::power(3.0));
    for (double v : {-2.5, -0.3, 0.0, 1.7}) {
        const double x[] = {v};
        const double lp = path->model().log_prior(x);
        const double ll = path->model().log_likelihood(x);
        CHECK(log_gamma(*path, x, 0.0) == lp);
        CHECK(log_gamma(*path, x, 1.0) == lp + ll);
    }
}

TEST_CASE("dt_log_gamma")
{
    const auto linear = testing::scalar_gaussian_path(TemperatureSchedule::linear());
    const double two[] = {2.0};
    CHECK(dt_log_gamma(*linear, two, 0.4) == doctest::Approx(-2.0));

    const auto sixth = testing::scalar_gaussian_path(TemperatureSchedule::power(6.0));
    CHECK(dt_log_gamma(*sixth, two, 0.0) == 0.0);
    const double root2[] = {std::sqrt(2.0)};
    CHECK(dt_log_gamma(*sixth, root2, 0.5) == doctest::Approx(-0.1875).epsilon(1e-14));
}

TEST_CASE("dt_log_gamma matches a centred difference in t")
{
    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::power(2.5));
    const double x[] = {1.3};
    for (double t : {0.1, 0.35, 0.6, 0.9}) {
        const double h = 1e-5;
        const double fd = (log_gamma(*path, x, t + h) - log_gamma(*path, x, t - h)) / (2 * h);
        CHECK(dt_log_gamma(*path, x, t) == doctest::Approx(fd).epsilon(1e-5));
    }
}

TEST_CASE("log_gamma rejects points outside the support")
{
    FunctionModel::Parts parts;
    parts.log_prior = [](std::span<const double> x) {
        return std::abs(x[0]) <= 1.0 ? -std::log(2.0) : -std::numeric_limits<double>::infinity();
    };
    parts.log_likelihood = [](std::span<const double>) { return 0.0; };
    parts.sample_prior = [](Rng& rng, std::span<double> out) { out[0] = 2 * rng.uniform() - 1; };
    parts.support = {{-1.0, 1.0}};
    parts.integration_box = {{-1.0, 1.0}};
    TemperedPath path(std::make_shared<FunctionModel>(parts), TemperatureSchedule::linear());
    const double outside[] = {3.0};
    CHECK_THROWS_AS(log_gamma(path, outside, 0.5), DomainError);
}

TEST_CASE("power schedule")
{
    const auto p1 = TemperatureSchedule::power(1.0);
    CHECK(p1.value(0.3) == doctest::Approx(0.3));
    CHECK(p1.derivative(0.3) == 1.0);
    const auto p6 = TemperatureSchedule::power(6.0);
    CHECK(p6.value(0.5) == 0.015625);
    CHECK(p6.value(1.0) == 1.0);
    CHECK(p6.derivative(1.0) == 6.0);
    CHECK(p6.name() == "power(6)");
    CHECK_THROWS_AS(TemperatureSchedule::power(0.5), InvalidArgument);
}

TEST_CASE("schedules are monotone with matching derivatives")
{
    for (const auto& s : {TemperatureSchedule::linear(), TemperatureSchedule::power(2.0),
                          TemperatureSchedule::power(6.0), TemperatureSchedule::power(1.7)}) {
        CHECK(s.value(0.0) == 0.0);
        CHECK(s.value(1.0) == 1.0);
        double prev = 0.0;
        for (int k = 1; k <= 1000; ++k) {
            const double v = s.value(k * 1e-3);
            CHECK(v >= prev);
            prev = v;
        }
        for (double t : {0.2, 0.5, 0.8}) {
            const double h = 1e-6;
            const double fd = (s.value(t + h) - s.value(t - h)) / (2 * h);
            CHECK(s.derivative(t) == doctest::Approx(fd).epsilon(1e-6));
        }
    }
}

TEST_CASE("gaussian model gradients match finite differences")
{
    Matrix cov0(3, 3);
    cov0 << 2.0, 0.3, 0.0, 0.3, 1.0, 0.2, 0.0, 0.2, 1.5;
    Matrix covl(3, 3);
    covl << 1.0, 0.5, 0.25, 0.5, 1.0, 0.5, 0.25, 0.5, 1.0;
    Vector mu0(3), y(3);
    mu0 << 0.5, -1.0, 0.0;
    y << 1.0, 2.0, -0.5;
    const GaussianLinearModel model(mu0, cov0, covl, y);
    Rng rng(7);
    for (int rep = 0; rep < 10; ++rep) {
        double x[3];
        model.sample_prior(rng, x);
        double g_prior[3], g_lik[3];
        model.grad_log_prior(x, g_prior);
        model.grad_log_likelihood(x, g_lik);
        for (int k = 0; k < 3; ++k) {
            double up[3] = {x[0], x[1], x[2]};
            double down[3] = {x[0], x[1], x[2]};
            const double h = 1e-5;
            up[k] += h;
            down[k] -= h;
            const double fd_p = (model.log_prior(up) - model.log_prior(down)) / (2 * h);
            const double fd_l = (model.log_likelihood(up) - model.log_likelihood(down)) / (2 * h);
            CHECK(g_prior[k] == doctest::Approx(fd_p).epsilon(1e-4).scale(1.0));
            CHECK(g_lik[k] == doctest::Approx(fd_l).epsilon(1e-4).scale(1.0));
        }
    }
}

TEST_CASE("gaussian model box and log prior normalisation")
{
    Matrix cov0 = Matrix::Identity(2, 2) * 4.0;
    const GaussianLinearModel model(Vector::Zero(2), cov0, Matrix::Identity(2, 2), Vector::Zero(2));
    CHECK(model.integration_box()[0].lo == -16.0);
    CHECK(model.integration_box()[1].hi == 16.0);
    const double zero[] = {0.0, 0.0};
    CHECK(model.log_prior(zero) == doctest::Approx(-std::log(2.0 * std::numbers::pi * 4.0)));
    CHECK(model.bandwidth() == std::optional<std::size_t>(0));
}

TEST_CASE("log_gamma is finite on a grid of the integration box")
{
    const auto path = testing::correlated_gaussian_path(0.85, TemperatureSchedule::power(6.0));
    const auto& box = path->model().integration_box();
    for (double t : {0.0, 0.3, 1.0})
        for (int a = 0; a <= 20; ++a)
            for (int b = 0; b <= 20; ++b) {
                const double x[] = {box[0].lo + a * box[0].width() / 20, box[1].lo + b * box[1].width() / 20};
                CHECK(std::isfinite(log_gamma(*path, x, t)));
            }
}

TEST_CASE("model construction validates the box")
{
    FunctionModel::Parts parts;
    parts.log_prior = [](std::span<const double>) { return 0.0; };
    parts.log_likelihood = [](std::span<const double>) { return 0.0; };
    parts.sample_prior = [](Rng&, std::span<double>) {};
    parts.support = {{0.0, 1.0}};
    parts.integration_box = {{-1.0, 1.0}};
    CHECK_THROWS_AS(FunctionModel{parts}, InvalidArgument);
    parts.integration_box = {{0.0, std::numeric_limits<double>::infinity()}};
    CHECK_THROWS_AS(FunctionModel{parts}, InvalidArgument);
}
