#include "gibbsflow/integrator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

TimeGrid::TimeGrid(std::vector<double> knots) : knots_(std::move(knots))
{
    if (knots_.size() < 2 || knots_.front() != 0.0 || knots_.back() != 1.0)
        throw InvalidArgument("time grid must start at 0 and end at 1");
    for (std::size_t n = 1; n < knots_.size(); ++n)
        if (!(knots_[n] > knots_[n - 1]))
            throw InvalidArgument("time grid must be strictly increasing");
}

TimeGrid TimeGrid::uniform(std::size_t steps)
{
    return power(steps, 1.0);
}

TimeGrid TimeGrid::power(std::size_t steps, double p)
{
    if (steps == 0)
        throw InvalidArgument("time grid needs at least one step");
    if (!(p > 0.0))
        throw InvalidArgument("time grid exponent must be positive");
    std::vector<double> k(steps + 1);
    for (std::size_t n = 0; n <= steps; ++n)
        k[n] = std::pow(static_cast<double>(n) / static_cast<double>(steps), p);
    k.back() = 1.0;
    return TimeGrid(std::move(k));
}

TimeGrid TimeGrid::piecewise_linear(std::size_t steps, const std::vector<std::pair<double, double>>& breakpoints)
{
    if (steps == 0)
        throw InvalidArgument("time grid needs at least one step");
    std::vector<std::pair<double, double>> pts{{0.0, 0.0}};
    for (const auto& b : breakpoints) {
        if (!(b.first > pts.back().first && b.second > pts.back().second && b.first < 1.0 && b.second < 1.0))
            throw InvalidArgument("breakpoints must be strictly increasing inside (0, 1)");
        pts.push_back(b);
    }
    pts.emplace_back(1.0, 1.0);
    std::vector<double> k(steps + 1);
    std::size_t seg = 0;
    for (std::size_t n = 0; n <= steps; ++n) {
        const double s = static_cast<double>(n) / static_cast<double>(steps);
        while (seg + 2 < pts.size() && s > pts[seg + 1].first)
            ++seg;
        const auto [s0, t0] = pts[seg];
        const auto [s1, t1] = pts[seg + 1];
        k[n] = t0 + (t1 - t0) * (s - s0) / (s1 - s0);
    }
    k.front() = 0.0;
    k.back() = 1.0;
    return TimeGrid(std::move(k));
}

std::pair<double, int> log_abs_det(const Matrix& a)
{
    Eigen::PartialPivLU<Matrix> lu(a);
    const Matrix& u = lu.matrixLU();
    double log_abs = 0.0;
    int sign = static_cast<int>(std::lround(lu.permutationP().determinant()));
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
        const double d = u(i, i);
        if (d == 0.0 || !std::isfinite(d))
            return {-std::numeric_limits<double>::infinity(), 0};
        log_abs += std::log(std::abs(d));
        if (d < 0.0)
            sign = -sign;
    }
    return {log_abs, sign};
}

std::pair<double, int> log_abs_det_banded(const Matrix& a, std::size_t band)
{
    const Eigen::Index n = a.rows();
    const auto b = static_cast<Eigen::Index>(band);
    Matrix w = a;
    const double scale = a.cwiseAbs().maxCoeff();
    double log_abs = 0.0;
    int sign = 1;
    for (Eigen::Index k = 0; k < n; ++k) {
        const double pivot = w(k, k);
        if (!(std::abs(pivot) > 1e-12 * scale))
            return log_abs_det(a);
        log_abs += std::log(std::abs(pivot));
        if (pivot < 0.0)
            sign = -sign;
        const Eigen::Index last = std::min(n - 1, k + b);
        for (Eigen::Index i = k + 1; i <= last; ++i) {
            const double factor = w(i, k) / pivot;
            if (factor == 0.0)
                continue;
            for (Eigen::Index j = k + 1; j <= last; ++j)
                w(i, j) -= factor * w(k, j);
        }
    }
    return {log_abs, sign};
}

EulerStep euler_step(const VelocityField& field, std::span<const double> x, double t, double dt)
{
    if (!(dt > 0.0))
        throw InvalidArgument("euler step needs dt > 0");
    const auto v = field.evaluate_step(x, t, dt, true);
    EulerStep out;
    out.evaluations = v.evaluations;
    out.x = as_vector(x) + dt * v.velocity;
    if (!out.x.allFinite())
        throw DomainError("non-finite state after euler step");
    const auto d = static_cast<Eigen::Index>(x.size());
    const Matrix j = Matrix::Identity(d, d) + dt * v.jacobian;
    const auto band = field.bandwidth();
    const auto [log_abs, sign] =
        band && *band + 1 < x.size() ? log_abs_det_banded(j, *band) : log_abs_det(j);
    out.log_det = log_abs;
    out.sign = sign;
    out.stretch = dt * v.jacobian.cwiseAbs().rowwise().sum().maxCoeff();
    return out;
}

double FlowTrajectory::total_log_det() const
{
    return std::accumulate(log_det.begin(), log_det.end(), 0.0);
}

MapStep flow_map_step(const VelocityField& field, std::span<const double> x, double t0, double t1,
                      const FlowOptions& options)
{
    MapStep out;
    out.x = as_vector(x);
    const std::function<bool(double, double, int)> advance = [&](double a, double b, int depth) -> bool {
        EulerStep step;
        try {
            step = euler_step(field, as_span(out.x), a, b - a);
        } catch (const DomainError& e) {
            out.failure = std::string("diverged: ") + e.what();
            return false;
        }
        out.evaluations += step.evaluations;
        // a fold can push points out of the domain even where the local determinant is positive
        const bool folded = step.sign <= 0 || !field.in_domain(as_span(step.x), b);
        const bool stiff = options.max_stretch > 0.0 && step.stretch > options.max_stretch;
        if (folded || (stiff && depth < options.max_halvings)) {
            if (depth >= options.max_halvings) {
                out.failure = "monotonicity violation";
                return false;
            }
            ++out.halvings;
            const double mid = 0.5 * (a + b);
            return advance(a, mid, depth + 1) && advance(mid, b, depth + 1);
        }
        if (step.x.cwiseAbs().maxCoeff() > options.divergence_cap) {
            out.failure = "diverged";
            return false;
        }
        out.x = std::move(step.x);
        out.log_det += step.log_det;
        return true;
    };
    advance(t0, t1, 0);
    return out;
}

FlowTrajectory run_flow(const VelocityField& field, const TimeGrid& grid, std::span<const double> x0,
                        double log_prior_x0, const FlowOptions& options)
{
    FlowTrajectory traj;
    traj.times.push_back(0.0);
    traj.states.push_back(as_vector(x0));
    traj.log_det.push_back(0.0);
    traj.log_density.push_back(log_prior_x0);
    traj.halvings.push_back(0);
    for (std::size_t n = 1; n <= grid.steps(); ++n) {
        const auto step = flow_map_step(field, as_span(traj.states.back()), grid[n - 1], grid[n], options);
        traj.evaluations += step.evaluations;
        if (step.failed()) {
            traj.failed = true;
            traj.failure = step.failure;
            traj.failure_time = grid[n - 1];
            break;
        }
        traj.times.push_back(grid[n]);
        traj.states.push_back(step.x);
        traj.log_det.push_back(step.log_det);
        traj.log_density.push_back(traj.log_density.back() - step.log_det);
        traj.halvings.push_back(step.halvings);
    }
    return traj;
}

namespace
{

Vector rk4(const std::function<Vector(const Vector&, double)>& f, const Vector& y, double t, double h)
{
    const Vector k1 = f(y, t);
    const Vector k2 = f(y + 0.5 * h * k1, t + 0.5 * h);
    const Vector k3 = f(y + 0.5 * h * k2, t + 0.5 * h);
    const Vector k4 = f(y + h * k3, t + h);
    return y + h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
}

} // namespace

ProbeResult adaptive_probe(const VelocityField& field, std::span<const double> x0, const ProbeOptions& options)
{
    if (!(options.tolerance > 0.0))
        throw InvalidArgument("probe tolerance must be positive");
    ProbeResult out;
    auto f = [&](const Vector& y, double t) {
        auto v = field.evaluate(as_span(y), std::min(t, 1.0), false);
        out.evaluations += v.evaluations;
        if (!v.velocity.allFinite())
            throw DomainError("non-finite velocity in probe");
        return v.velocity;
    };
    Vector y = as_vector(x0);
    double t = 0.0;
    double h = std::min(options.initial_step, options.max_step);
    while (t < 1.0) {
        if (out.times.size() + out.rejected >= options.max_steps)
            throw StiffError("probe exceeded the step budget", t);
        const bool last = t + h >= 1.0;
        const double step = last ? 1.0 - t : h;
        Vector full;
        Vector half;
        try {
            full = rk4(f, y, t, step);
            half = rk4(f, rk4(f, y, t, 0.5 * step), t + 0.5 * step, 0.5 * step);
        } catch (const DomainError&) {
            // a stage left the support; retry with a shorter step
            ++out.rejected;
            h = 0.25 * step;
            if (h < options.min_step)
                throw StiffError("stiff at t = " + std::to_string(t), t);
            continue;
        }
        const double err = (half - full).cwiseAbs().maxCoeff() / 15.0;
        const double allowed = options.tolerance * (1.0 + half.cwiseAbs().maxCoeff());
        const double factor = err == 0.0 ? 4.0 : std::clamp(0.9 * std::pow(allowed / err, 0.2), 0.2, 4.0);
        if (err <= allowed && half.allFinite()) {
            y = half + (half - full) / 15.0;
            t = last ? 1.0 : t + step;
            out.times.push_back(t);
            out.steps.push_back(step);
            h = std::min(options.max_step, step * factor);
        } else {
            ++out.rejected;
            h = step * std::min(factor, 0.5);
            if (h < options.min_step)
                throw StiffError("stiff at t = " + std::to_string(t), t);
        }
    }
    out.final_state = y;
    return out;
}

double probe_sup_distance(const ProbeResult& probe)
{
    const double k = static_cast<double>(probe.times.size());
    double worst = 0.0;
    for (std::size_t i = 0; i < probe.times.size(); ++i) {
        const double frac = static_cast<double>(i + 1) / k;
        worst = std::max(worst, std::abs(frac - probe.times[i]));
        // the curve jumps at each step time, so compare the lower corner too
        worst = std::max(worst, std::abs(static_cast<double>(i) / k - probe.times[i]));
    }
    return worst;
}

std::pair<std::vector<double>, std::vector<double>> median_step_curve(const std::vector<ProbeResult>& probes,
                                                                     std::size_t resolution)
{
    if (probes.empty())
        throw InvalidArgument("median step curve needs at least one probe");
    std::vector<double> tau(resolution + 1);
    std::vector<double> curve(resolution + 1);
    std::vector<double> values(probes.size());
    for (std::size_t g = 0; g <= resolution; ++g) {
        tau[g] = static_cast<double>(g) / static_cast<double>(resolution);
        for (std::size_t p = 0; p < probes.size(); ++p) {
            // piecewise-linear cumulative step fraction through (0, 0) and (tau_k, k / K)
            const auto& times = probes[p].times;
            const double k = static_cast<double>(times.size());
            const auto it = std::lower_bound(times.begin(), times.end(), tau[g]);
            const auto idx = static_cast<std::size_t>(it - times.begin());
            if (idx >= times.size()) {
                values[p] = 1.0;
                continue;
            }
            const double t_hi = times[idx];
            const double t_lo = idx == 0 ? 0.0 : times[idx - 1];
            const double c_lo = static_cast<double>(idx) / k;
            const double w = t_hi > t_lo ? (tau[g] - t_lo) / (t_hi - t_lo) : 1.0;
            values[p] = c_lo + w / k;
        }
        std::sort(values.begin(), values.end());
        const std::size_t n = values.size();
        curve[g] = n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
    }
    return {tau, curve};
}

double median_probe_sup_distance(const std::vector<ProbeResult>& probes)
{
    const auto [tau, curve] = median_step_curve(probes, 4000);
    double worst = 0.0;
    for (std::size_t g = 0; g < tau.size(); ++g)
        worst = std::max(worst, std::abs(curve[g] - tau[g]));
    return worst;
}

TimeGrid schedule_from_probe(const std::vector<ProbeResult>& probes, std::size_t steps, double uniform_share)
{
    if (probes.empty())
        throw InvalidArgument("schedule_from_probe needs at least one probe");
    if (steps == 0)
        throw InvalidArgument("time grid needs at least one step");
    if (!(uniform_share > 0.0 && uniform_share <= 1.0))
        throw InvalidArgument("uniform share must lie in (0, 1]");
    constexpr std::size_t resolution = 4000;
    const auto [tau, median] = median_step_curve(probes, resolution);
    std::vector<double> h(resolution + 1);
    for (std::size_t g = 0; g <= resolution; ++g) {
        h[g] = (1.0 - uniform_share) * median[g] + uniform_share * tau[g];
        if (g > 0)
            h[g] = std::max(h[g], h[g - 1]);
    }
    h.front() = 0.0;
    h.back() = 1.0;
    std::vector<double> knots(steps + 1);
    std::size_t g = 0;
    for (std::size_t n = 0; n <= steps; ++n) {
        const double u = static_cast<double>(n) / static_cast<double>(steps);
        while (g + 1 < resolution && h[g + 1] < u)
            ++g;
        const double span = h[g + 1] - h[g];
        const double w = span > 0.0 ? std::clamp((u - h[g]) / span, 0.0, 1.0) : 0.0;
        knots[n] = tau[g] + w * (tau[g + 1] - tau[g]);
    }
    knots.front() = 0.0;
    knots.back() = 1.0;
    return TimeGrid(std::move(knots));
}

LogVelocity log_velocity(const VelocityField& field)
{
    return [&field](std::span<const double> x, double t, std::span<double> direction, double& log_speed) {
        const Vector v = field.evaluate(x, t, false).velocity;
        const double norm = v.norm();
        if (!std::isfinite(norm))
            throw DomainError("velocity overflow; supply a log-scaled field");
        log_speed = norm > 0.0 ? std::log(norm) : -std::numeric_limits<double>::infinity();
        for (std::size_t k = 0; k < direction.size(); ++k)
            direction[k] = norm > 0.0 ? v(static_cast<Eigen::Index>(k)) / norm : 0.0;
    };
}

const char* to_string(ArclengthResult::Status s)
{
    switch (s) {
    case ArclengthResult::Status::completed:
        return "completed";
    case ArclengthResult::Status::diverged:
        return "diverged";
    case ArclengthResult::Status::exhausted:
        return "exhausted";
    }
    return "unknown";
}

ArclengthResult integrate_arclength(const LogVelocity& field, std::span<const double> x0,
                                    const ArclengthOptions& options)
{
    const auto d = static_cast<Eigen::Index>(x0.size());
    std::vector<double> dir(x0.size());
    // state (x, t); derivative with respect to arclength s of the curve (x(t), t)
    auto rhs = [&](const Vector& y, double) {
        Vector dy(d + 1);
        const double t = std::clamp(y(d), 0.0, 1.0);
        double log_speed = 0.0;
        field(std::span<const double>(y.data(), x0.size()), t, dir, log_speed);
        double along;
        double dt;
        if (log_speed > 0.0) {
            const double e = std::exp(-2.0 * log_speed);
            along = 1.0 / std::sqrt(1.0 + e);
            dt = std::exp(-log_speed) / std::sqrt(1.0 + e);
        } else {
            const double e = std::exp(2.0 * log_speed);
            along = std::exp(log_speed) / std::sqrt(1.0 + e);
            dt = 1.0 / std::sqrt(1.0 + e);
        }
        for (Eigen::Index k = 0; k < d; ++k)
            dy(k) = along * dir[static_cast<std::size_t>(k)];
        dy(d) = dt;
        return dy;
    };

    ArclengthResult out;
    Vector y(d + 1);
    y.head(d) = as_vector(x0);
    y(d) = 0.0;
    double h = options.initial_step;
    out.max_norm = y.head(d).cwiseAbs().maxCoeff();
    while (out.steps < options.max_steps) {
        const Vector full = rk4(rhs, y, 0.0, h);
        const Vector half = rk4(rhs, rk4(rhs, y, 0.0, 0.5 * h), 0.0, 0.5 * h);
        const double err = (half - full).cwiseAbs().maxCoeff() / 15.0;
        const double allowed = options.tolerance * (1.0 + half.cwiseAbs().maxCoeff());
        const double factor = err == 0.0 ? 4.0 : std::clamp(0.9 * std::pow(allowed / err, 0.2), 0.2, 4.0);
        if (!(err <= allowed) || !half.allFinite()) {
            h *= std::min(factor, 0.5);
            if (h < 1e-300)
                break;
            continue;
        }
        ++out.steps;
        const Vector next = half + (half - full) / 15.0;
        if (next(d) >= 1.0) {
            // finish in the time parameterization over the remaining interval
            auto in_time = [&](const Vector& x, double t) {
                Vector yt(d + 1);
                yt.head(d) = x;
                yt(d) = t;
                const Vector dy = rhs(yt, 0.0);
                return Vector(dy.head(d) / dy(d));
            };
            const double rest = 1.0 - y(d);
            const Vector mid = rk4(in_time, y.head(d), y(d), 0.5 * rest);
            out.state = rk4(in_time, mid, y(d) + 0.5 * rest, 0.5 * rest);
            out.time = 1.0;
            out.max_norm = std::max(out.max_norm, out.state.cwiseAbs().maxCoeff());
            out.path.emplace_back(1.0, out.state.cwiseAbs().maxCoeff());
            out.status = ArclengthResult::Status::completed;
            return out;
        }
        y = next;
        const double norm = y.head(d).cwiseAbs().maxCoeff();
        out.max_norm = std::max(out.max_norm, norm);
        out.path.emplace_back(y(d), norm);
        if (norm > options.divergence_cap) {
            out.status = ArclengthResult::Status::diverged;
            out.time = y(d);
            out.state = y.head(d);
            return out;
        }
        h *= factor;
    }
    out.status = ArclengthResult::Status::exhausted;
    out.time = y(d);
    out.state = y.head(d);
    return out;
}

} // namespace gibbsflow
