#include "gibbsflow/reference.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

namespace
{

Matrix spd_inverse(const Matrix& m, const char* what)
{
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success)
        throw InvalidArgument(std::string(what) + " is singular or not positive definite");
    return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

double log_normal_cdf(double z)
{
    if (z > -5.0)
        return std::log(0.5 * std::erfc(-z / std::numbers::sqrt2));
    // asymptotic branch keeps precision deep in the lower tail
    const double z2 = z * z;
    const double series = 1.0 - 1.0 / z2 + 3.0 / (z2 * z2) - 15.0 / (z2 * z2 * z2) + 105.0 / (z2 * z2 * z2 * z2);
    return -0.5 * z2 - std::log(-z) - 0.5 * std::log(2.0 * std::numbers::pi) + std::log(series);
}

/// sign and log magnitude of exp(a) - exp(b).
LogScaled log_difference(double a, double b)
{
    if (a == b)
        return {0.0, -std::numeric_limits<double>::infinity()};
    if (a > b)
        return {1.0, a + std::log1p(-std::exp(b - a))};
    return {-1.0, b + std::log1p(-std::exp(a - b))};
}

} // namespace

GaussianPath::GaussianPath(Vector mu0_, Matrix sigma0_, Matrix sigma_l_, Vector y_)
    : mu0(std::move(mu0_)), sigma0(std::move(sigma0_)), sigma_l(std::move(sigma_l_)), y(std::move(y_))
{
    const auto d = mu0.size();
    if (d == 0 || sigma0.rows() != d || sigma0.cols() != d || sigma_l.rows() != d || sigma_l.cols() != d ||
        y.size() != d)
        throw InvalidArgument("gaussian path: inconsistent dimensions");
    spd_inverse(sigma0, "prior covariance");
    spd_inverse(sigma_l, "likelihood covariance");
}

std::shared_ptr<GaussianLinearModel> GaussianPath::model() const
{
    return std::make_shared<GaussianLinearModel>(mu0, sigma0, sigma_l, y);
}

std::pair<Vector, Matrix> gaussian_params(const GaussianPath& gp, const TemperatureSchedule& schedule, double t)
{
    const double lambda = schedule.value(t);
    const Matrix p0 = spd_inverse(gp.sigma0, "prior covariance");
    const Matrix pl = spd_inverse(gp.sigma_l, "likelihood covariance");
    const Matrix sigma_t = spd_inverse(p0 + lambda * pl, "tempered precision");
    const Vector mu_t = sigma_t * (p0 * gp.mu0 + lambda * (pl * gp.y));
    return {mu_t, sigma_t};
}

double gaussian_expected_loglik(const GaussianPath& gp, const TemperatureSchedule& schedule, double t)
{
    const auto [mu_t, sigma_t] = gaussian_params(gp, schedule, t);
    const Matrix pl = spd_inverse(gp.sigma_l, "likelihood covariance");
    const Vector r = mu_t - gp.y;
    return -0.5 * ((pl * sigma_t).trace() + r.dot(pl * r));
}

Vector minke_velocity(const GaussianPath& gp, const TemperatureSchedule& schedule, std::span<const double> x,
                      double t)
{
    const auto [mu_t, sigma_t] = gaussian_params(gp, schedule, t);
    const Matrix pl = spd_inverse(gp.sigma_l, "likelihood covariance");
    return -0.5 * schedule.derivative(t) * (sigma_t * (pl * (mu_t - 2.0 * gp.y + as_vector(x))));
}

Matrix minke_jacobian(const GaussianPath& gp, const TemperatureSchedule& schedule, double t)
{
    const auto [mu_t, sigma_t] = gaussian_params(gp, schedule, t);
    const Matrix pl = spd_inverse(gp.sigma_l, "likelihood covariance");
    return -0.5 * schedule.derivative(t) * sigma_t * pl;
}

double one_d_exact_map(const GaussianPath& gp, const TemperatureSchedule& schedule, double x0, double t)
{
    if (gp.dimension() != 1)
        throw InvalidArgument("one_d_exact_map needs a scalar path");
    const auto [mu_t, sigma_t] = gaussian_params(gp, schedule, t);
    return mu_t(0) + std::sqrt(sigma_t(0, 0) / gp.sigma0(0, 0)) * (x0 - gp.mu0(0));
}

Vector coordinatewise_velocity(const GaussianPath& gp, const TemperatureSchedule& schedule, std::span<const double> x,
                               double t)
{
    const auto d = static_cast<Eigen::Index>(gp.dimension());
    if (static_cast<Eigen::Index>(x.size()) != d)
        throw InvalidArgument("coordinatewise velocity: dimension mismatch");
    const auto diagonal = [](const Matrix& m) { return m.isApprox(Matrix(m.diagonal().asDiagonal()), 0.0); };
    if (!diagonal(gp.sigma0) || !diagonal(gp.sigma_l))
        throw InvalidArgument("coordinatewise velocity needs diagonal covariances");
    const double lambda = schedule.value(t);
    const double dlambda = schedule.derivative(t);
    Vector out(d);
    for (Eigen::Index i = 0; i < d; ++i) {
        const double s0 = gp.sigma0(i, i);
        const double sl = gp.sigma_l(i, i);
        const double st = 1.0 / (1.0 / s0 + lambda / sl);
        const double mt = st * (gp.mu0(i) / s0 + lambda * gp.y(i) / sl);
        out(i) = dlambda * st / sl * ((gp.y(i) - mt) - 0.5 * (x[i] - mt));
    }
    return out;
}

LogVelocity antiderivative_log_field(const TemperatureSchedule& schedule, double gamma1, double gamma2)
{
    return [schedule, gamma1, gamma2](std::span<const double> x, double t, std::span<double> direction,
                                      double& log_speed) {
        const auto c = antiderivative_velocity_log(schedule, gamma1, gamma2, x, t);
        const double m = std::max(c[0].log_abs, c[1].log_abs);
        if (!std::isfinite(m)) {
            direction[0] = 1.0;
            direction[1] = 0.0;
            log_speed = -std::numeric_limits<double>::infinity();
            return;
        }
        const double a = c[0].sign * std::exp(c[0].log_abs - m);
        const double b = c[1].sign * std::exp(c[1].log_abs - m);
        const double n = std::hypot(a, b);
        direction[0] = a / n;
        direction[1] = b / n;
        log_speed = m + std::log(n);
    };
}

std::array<LogScaled, 2> antiderivative_velocity_log(const TemperatureSchedule& schedule, double gamma1,
                                                     double gamma2, std::span<const double> x, double t)
{
    if (x.size() != 2)
        throw InvalidArgument("anti-derivative field is two-dimensional");
    if (std::abs(gamma1 + gamma2 - 1.0) > 1e-12)
        throw InvalidArgument("anti-derivative weights must sum to one");
    const double v = 1.0 / (1.0 + schedule.value(t));
    const double dlambda = schedule.derivative(t);
    const double gammas[2] = {gamma1, gamma2};
    std::array<LogScaled, 2> out{};
    for (int i = 0; i < 2; ++i) {
        const double xi = x[static_cast<std::size_t>(i)];
        const double xj = x[static_cast<std::size_t>(1 - i)];
        const double scale = gammas[i] * dlambda / 2.0;
        if (scale == 0.0) {
            out[static_cast<std::size_t>(i)] = {0.0, -std::numeric_limits<double>::infinity()};
            continue;
        }
        // gamma_i lambda' / 2 * (x_j^2 F(x_i) / phi(x_i) - v x_i) with pi_t = N(0, v I)
        const double log_phi = -0.5 * xi * xi / v - 0.5 * std::log(2.0 * std::numbers::pi * v);
        const double log_first = xj == 0.0 ? -std::numeric_limits<double>::infinity()
                                           : 2.0 * std::log(std::abs(xj)) + log_normal_cdf(xi / std::sqrt(v)) -
                                                 log_phi;
        LogScaled bracket;
        if (xi > 0.0) {
            bracket = log_difference(log_first, std::log(v * xi));
        } else if (xi < 0.0) {
            const double a = log_first;
            const double b = std::log(-v * xi);
            const double hi = std::max(a, b);
            bracket = {1.0, hi == -std::numeric_limits<double>::infinity()
                                ? hi
                                : hi + std::log(std::exp(a - hi) + std::exp(b - hi))};
        } else {
            bracket = {log_first == -std::numeric_limits<double>::infinity() ? 0.0 : 1.0, log_first};
        }
        const double sign = bracket.sign * (scale > 0.0 ? 1.0 : -1.0);
        out[static_cast<std::size_t>(i)] = {sign, bracket.log_abs + std::log(std::abs(scale))};
    }
    return out;
}

Vector antiderivative_velocity(const TemperatureSchedule& schedule, double gamma1, double gamma2,
                               std::span<const double> x, double t)
{
    const auto logs = antiderivative_velocity_log(schedule, gamma1, gamma2, x, t);
    Vector f(2);
    for (int i = 0; i < 2; ++i)
        f(i) = logs[static_cast<std::size_t>(i)].sign == 0.0 ? 0.0 : logs[static_cast<std::size_t>(i)].value();
    return f;
}

Vector knothe_velocity_2d(const TemperedPath& path, std::span<const double> x, double t,
                          const QuadratureRule& tensor_rule)
{
    const TargetModel& model = path.model();
    if (model.dimension() != 2 || x.size() != 2)
        throw InvalidArgument("knothe velocity is implemented for d = 2 only");
    const double lambda = path.schedule().value(t);
    const double dlambda = path.schedule().derivative(t);
    const auto& box = model.integration_box();
    for (int i = 0; i < 2; ++i)
        if (!(x[static_cast<std::size_t>(i)] > box[static_cast<std::size_t>(i)].lo &&
              x[static_cast<std::size_t>(i)] < box[static_cast<std::size_t>(i)].hi))
            throw DomainError("particle outside the integration box");
    if (dlambda == 0.0)
        return Vector::Zero(2);

    struct Grid
    {
        std::vector<double> u;
        std::vector<double> w;
    };
    auto grid = [&](double a, double b) { return Grid{tensor_rule.nodes(a, b), tensor_rule.weights(a, b)}; };
    const Grid full1 = grid(box[0].lo, box[0].hi);
    const Grid full2 = grid(box[1].lo, box[1].hi);
    const Grid left1 = grid(box[0].lo, x[0]);
    const Grid right1 = grid(x[0], box[0].hi);
    const Grid left2 = grid(box[1].lo, x[1]);

    struct Values
    {
        std::vector<double> psi;
        std::vector<double> ell;
        std::vector<double> w;
    };
    double m = -std::numeric_limits<double>::infinity();
    auto tabulate = [&](const Grid& g1, const Grid& g2) {
        Values v;
        for (std::size_t a = 0; a < g1.u.size(); ++a)
            for (std::size_t b = 0; b < g2.u.size(); ++b) {
                const double u[2] = {g1.u[a], g2.u[b]};
                const double ell = model.log_likelihood(u);
                const double lp = model.log_prior(u);
                const double psi = lambda == 0.0 ? lp : lp + lambda * ell;
                v.psi.push_back(psi);
                v.ell.push_back(ell);
                v.w.push_back(g1.w[a] * g2.w[b]);
                m = std::max(m, psi);
            }
        return v;
    };
    const Grid point1{{x[0]}, {1.0}};
    const Grid point2{{x[1]}, {1.0}};
    const Values all = tabulate(full1, full2);
    const Values left_mass = tabulate(left1, full2);
    const Values right_mass = tabulate(right1, full2);
    const Values lower2 = tabulate(full1, left2);
    const Values slice_left = tabulate(left1, point2);
    const Values slice_right = tabulate(right1, point2);
    const Values column = tabulate(point1, full2);
    const double ell_x = model.log_likelihood(x);
    const double psi_x = lambda == 0.0 ? model.log_prior(x) : model.log_prior(x) + lambda * ell_x;

    auto mass = [&](const Values& v) {
        double s = 0.0;
        for (std::size_t k = 0; k < v.psi.size(); ++k)
            s += v.w[k] * std::exp(v.psi[k] - m);
        return s;
    };
    const double z = mass(all);
    double it = 0.0;
    for (std::size_t k = 0; k < all.psi.size(); ++k)
        it += all.w[k] * std::exp(all.psi[k] - m) * all.ell[k];
    it /= z;
    auto centred = [&](const Values& v) {
        double s = 0.0;
        for (std::size_t k = 0; k < v.psi.size(); ++k)
            s += v.w[k] * std::exp(v.psi[k] - m) * (v.ell[k] - it);
        return s;
    };

    const double ml = mass(left_mass);
    const double mr = mass(right_mass);
    const double cdf1 = ml / (ml + mr);
    const double rho_x = std::exp(psi_x - m);
    if (rho_x == 0.0)
        throw DomainError("particle outside effective support");

    const double a = centred(slice_left);
    const double b = a + centred(slice_right);
    Vector f(2);
    f(0) = -dlambda * (a - cdf1 * b) / rho_x;
    f(1) = -dlambda * mass(column) * centred(lower2) / (z * rho_x);
    if (!f.allFinite())
        throw DomainError("particle outside effective support");
    return f;
}

} // namespace gibbsflow
