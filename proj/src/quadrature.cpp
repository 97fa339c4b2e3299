#include "gibbsflow/quadrature.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

namespace
{

void check_interval(double a, double b)
{
    if (!std::isfinite(a) || !std::isfinite(b) || !(a < b))
        throw InvalidArgument("quadrature interval must be finite with a < b");
}

std::vector<double> evaluate(const QuadratureRule& rule, const std::function<double(double)>& phi, double a,
                             double b)
{
    const auto u = rule.nodes(a, b);
    std::vector<double> v(u.size());
    for (std::size_t k = 0; k < u.size(); ++k) {
        v[k] = phi(u[k]);
        if (!std::isfinite(v[k]))
            throw QuadratureError("integrand overflow", u[k]);
    }
    return v;
}

} // namespace

QuadratureRule::QuadratureRule(QuadratureKind kind, std::size_t points) : kind_(kind)
{
    if (kind == QuadratureKind::trapezoid && points < 2)
        throw InvalidArgument("trapezoid rule needs at least 2 points");
    if (kind == QuadratureKind::simpson && points < 3)
        throw InvalidArgument("simpson rule needs at least 3 points");

    const std::size_t n = points - 1;
    const double h = 1.0 / static_cast<double>(n);
    unit_nodes_.resize(points);
    for (std::size_t k = 0; k < points; ++k)
        unit_nodes_[k] = static_cast<double>(k) * h;
    unit_nodes_.back() = 1.0;

    unit_weights_.assign(points, 0.0);
    if (kind == QuadratureKind::trapezoid) {
        for (std::size_t k = 0; k < n; ++k) {
            unit_weights_[k] += 0.5 * h;
            unit_weights_[k + 1] += 0.5 * h;
        }
        return;
    }
    const std::size_t simpson_end = (n % 2 == 0) ? n : n - 3;
    for (std::size_t k = 0; k < simpson_end; k += 2) {
        unit_weights_[k] += h / 3.0;
        unit_weights_[k + 1] += 4.0 * h / 3.0;
        unit_weights_[k + 2] += h / 3.0;
    }
    if (simpson_end != n) {
        const std::size_t k = simpson_end;
        unit_weights_[k] += 3.0 * h / 8.0;
        unit_weights_[k + 1] += 9.0 * h / 8.0;
        unit_weights_[k + 2] += 9.0 * h / 8.0;
        unit_weights_[k + 3] += 3.0 * h / 8.0;
    }
}

void QuadratureRule::nodes(double a, double b, std::span<double> out) const
{
    const double w = b - a;
    for (std::size_t k = 0; k < unit_nodes_.size(); ++k)
        out[k] = a + w * unit_nodes_[k];
    out.back() = b;
}

std::vector<double> QuadratureRule::nodes(double a, double b) const
{
    std::vector<double> u(unit_nodes_.size());
    nodes(a, b, u);
    return u;
}

std::vector<double> QuadratureRule::weights(double a, double b) const
{
    std::vector<double> w(unit_weights_);
    for (auto& v : w)
        v *= b - a;
    return w;
}

double QuadratureRule::integrate(const std::function<double(double)>& phi, double a, double b) const
{
    check_interval(a, b);
    return integrate_values(evaluate(*this, phi, a, b), a, b);
}

double QuadratureRule::integrate_values(std::span<const double> values, double a, double b) const
{
    if (values.size() != unit_weights_.size())
        throw InvalidArgument("value count does not match the rule");
    double s = 0.0;
    for (std::size_t k = 0; k < values.size(); ++k)
        s += unit_weights_[k] * values[k];
    return s * (b - a);
}

CumulativeIntegral::CumulativeIntegral(const QuadratureRule& rule, std::vector<double> values, double a, double b)
    : nodes_(rule.nodes(a, b)), values_(std::move(values))
{
    check_interval(a, b);
    const std::size_t r = nodes_.size();
    if (values_.size() != r)
        throw InvalidArgument("value count does not match the rule");
    for (std::size_t k = 0; k < r; ++k)
        if (!std::isfinite(values_[k]))
            throw QuadratureError("integrand overflow", nodes_[k]);
    nonnegative_ = std::all_of(values_.begin(), values_.end(), [](double v) { return v >= 0.0; });

    const std::size_t n = r - 1;
    if (rule.kind() == QuadratureKind::trapezoid) {
        for (std::size_t k = 0; k < n; ++k)
            panels_.push_back({k, 1});
    } else {
        const std::size_t simpson_end = (n % 2 == 0) ? n : n - 3;
        for (std::size_t k = 0; k < simpson_end; k += 2)
            panels_.push_back({k, 2});
        if (simpson_end != n)
            panels_.push_back({simpson_end, 3});
    }
    panel_of_interval_.resize(n);
    for (std::size_t p = 0; p < panels_.size(); ++p)
        for (std::size_t k = 0; k < panels_[p].order; ++k)
            panel_of_interval_[panels_[p].first + k] = p;

    prefix_.assign(r, 0.0);
    for (const auto& p : panels_) {
        const std::size_t s = p.first;
        const std::size_t e = s + p.order;
        double panel_sum = 0.0;
        if (p.order == 1) {
            panel_sum = 0.5 * (nodes_[e] - nodes_[s]) * (values_[s] + values_[e]);
        } else {
            const double h = (nodes_[e] - nodes_[s]) / static_cast<double>(p.order);
            if (p.order == 2)
                panel_sum = h / 3.0 * (values_[s] + 4.0 * values_[s + 1] + values_[e]);
            else
                panel_sum = 3.0 * h / 8.0 * (values_[s] + 3.0 * values_[s + 1] + 3.0 * values_[s + 2] + values_[e]);
        }
        prefix_[e] = prefix_[s] + panel_sum;
        double running = prefix_[s];
        for (std::size_t k = s + 1; k < e; ++k) {
            double v = prefix_[s] + panel_integral(p, nodes_[k]);
            if (nonnegative_)
                v = std::clamp(std::max(v, running), prefix_[s], prefix_[e]);
            prefix_[k] = v;
            running = v;
        }
    }
}

const CumulativeIntegral::Panel& CumulativeIntegral::panel_containing(std::size_t interval) const
{
    return panels_[panel_of_interval_[interval]];
}

double CumulativeIntegral::panel_integral(const Panel& p, double x) const
{
    // two-point Gauss-Legendre is exact for the cubic or lower interpolant
    const double lo = nodes_[p.first];
    const double half = 0.5 * (x - lo);
    const double mid = lo + half;
    const double g = half / std::sqrt(3.0);
    auto interp = [&](double u) {
        double s = 0.0;
        for (std::size_t j = 0; j <= p.order; ++j) {
            double l = 1.0;
            for (std::size_t m = 0; m <= p.order; ++m)
                if (m != j)
                    l *= (u - nodes_[p.first + m]) / (nodes_[p.first + j] - nodes_[p.first + m]);
            s += l * values_[p.first + j];
        }
        return s;
    };
    return half * (interp(mid - g) + interp(mid + g));
}

double CumulativeIntegral::at(double x) const
{
    if (x <= nodes_.front())
        return 0.0;
    if (x >= nodes_.back())
        return prefix_.back();
    const double h = (nodes_.back() - nodes_.front()) / static_cast<double>(nodes_.size() - 1);
    auto k = static_cast<std::size_t>((x - nodes_.front()) / h);
    k = std::min(k, nodes_.size() - 2);
    const Panel& p = panel_containing(k);
    const std::size_t e = p.first + p.order;
    double v = prefix_[p.first] + panel_integral(p, x);
    if (nonnegative_) {
        const auto below = prefix_[k];
        const auto above = prefix_[std::min(k + 1, e)];
        v = std::clamp(v, below, above);
    }
    return v;
}

double integrate(const QuadratureRule& rule, const std::function<double(double)>& phi, double a, double b)
{
    return rule.integrate(phi, a, b);
}

CumulativeIntegral cumulative(const QuadratureRule& rule, const std::function<double(double)>& phi, double a,
                              double b)
{
    check_interval(a, b);
    return {rule, evaluate(rule, phi, a, b), a, b};
}

double endpoint_derivative_check(const QuadratureRule& rule, const std::function<double(double)>& phi, double a,
                                 double x)
{
    check_interval(a, x);
    (void)rule;
    const double v = phi(x);
    if (!std::isfinite(v))
        throw QuadratureError("integrand overflow", x);
    return v;
}

} // namespace gibbsflow
