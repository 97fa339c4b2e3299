#pragma once

#include <cstddef>
#include <functional>
#include <span>
#include <vector>

namespace gibbsflow
{

enum class QuadratureKind
{
    trapezoid,
    simpson
};

/// Closed composite Newton-Cotes rule with R equispaced nodes.
///
/// Simpson with an even number of points uses the 1/3 rule on all but the
/// last three subintervals and the 3/8 rule on those.
class QuadratureRule
{
  public:
    QuadratureRule(QuadratureKind kind, std::size_t points);

    static QuadratureRule trapezoid(std::size_t points) { return {QuadratureKind::trapezoid, points}; }
    static QuadratureRule simpson(std::size_t points) { return {QuadratureKind::simpson, points}; }

    QuadratureKind kind() const { return kind_; }
    std::size_t points() const { return unit_nodes_.size(); }

    /// Nodes and weights on [0, 1]; weights sum to 1.
    const std::vector<double>& unit_nodes() const { return unit_nodes_; }
    const std::vector<double>& unit_weights() const { return unit_weights_; }

    void nodes(double a, double b, std::span<double> out) const;
    std::vector<double> nodes(double a, double b) const;
    std::vector<double> weights(double a, double b) const;

    double integrate(const std::function<double(double)>& phi, double a, double b) const;
    /// Sum of weights times precomputed node values.
    double integrate_values(std::span<const double> values, double a, double b) const;

  private:
    QuadratureKind kind_;
    std::vector<double> unit_nodes_;
    std::vector<double> unit_weights_;
};

/// Prefix integrals of a rule, F(u_k) at every node.
class CumulativeIntegral
{
  public:
    CumulativeIntegral(const QuadratureRule& rule, std::vector<double> values, double a, double b);

    const std::vector<double>& nodes() const { return nodes_; }
    const std::vector<double>& values() const { return values_; }
    const std::vector<double>& prefix() const { return prefix_; }
    double total() const { return prefix_.back(); }

    /// Integral from a to x of the rule's piecewise interpolant.
    double at(double x) const;

  private:
    struct Panel
    {
        std::size_t first;
        std::size_t order;
    };

    const Panel& panel_containing(std::size_t interval) const;
    double panel_integral(const Panel& p, double x) const;

    std::vector<double> nodes_;
    std::vector<double> values_;
    std::vector<double> prefix_;
    std::vector<Panel> panels_;
    std::vector<std::size_t> panel_of_interval_;
    bool nonnegative_;
};

double integrate(const QuadratureRule& rule, const std::function<double(double)>& phi, double a, double b);

CumulativeIntegral cumulative(const QuadratureRule& rule, const std::function<double(double)>& phi, double a,
                              double b);

/// Derivative of the prefix integral with respect to its upper endpoint x.
double endpoint_derivative_check(const QuadratureRule& rule, const std::function<double(double)>& phi, double a,
                                 double x);

} // namespace gibbsflow
