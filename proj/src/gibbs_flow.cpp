#include "gibbsflow/gibbs_flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

namespace
{

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

/// One term of the split rule: a node on the left or right sub-interval with its weight.
struct Term
{
    std::size_t node;
    bool left;
    double weight;
    double dnode_ds;   // derivative of the node position with respect to x_i
    double dlogw_ds;   // derivative of log weight with respect to x_i
};

struct Slice
{
    std::vector<double> nodes;
    std::vector<Term> terms;
    std::size_t centre = 0;
    bool nudged = false;
};

Slice build_slice(const QuadratureRule& rule, double lo, double hi, double s)
{
    Slice out;
    const double margin = 1e-9 * (hi - lo);
    if (!(s > lo + margin && s < hi - margin)) {
        s = std::clamp(s, lo + margin, hi - margin);
        out.nudged = true;
    }
    const auto& a = rule.unit_nodes();
    const auto& w = rule.unit_weights();
    const std::size_t r = a.size();
    out.nodes.resize(2 * r - 1);
    out.terms.reserve(2 * r);
    const double wl = s - lo;
    const double wr = hi - s;
    for (std::size_t k = 0; k < r; ++k) {
        out.nodes[k] = lo + wl * a[k];
        out.terms.push_back({k, true, wl * w[k], a[k], 1.0 / wl});
    }
    out.nodes[r - 1] = s;
    out.centre = r - 1;
    for (std::size_t k = 0; k < r; ++k) {
        const std::size_t node = r - 1 + k;
        if (k > 0)
            out.nodes[node] = s + wr * a[k];
        out.terms.push_back({node, false, wr * w[k], 1.0 - a[k], -1.0 / wr});
    }
    out.nodes.back() = hi;
    return out;
}

} // namespace

GibbsFlow::GibbsFlow(std::shared_ptr<const TemperedPath> path, QuadratureRule rule, JacobianDiagonal diagonal)
    : path_(std::move(path)), rule_(std::move(rule)), diagonal_(diagonal)
{
    if (!path_)
        throw InvalidArgument("gibbs flow needs a path");
}

VelocityEvaluation GibbsFlow::evaluate(std::span<const double> x, double t, bool with_jacobian) const
{
    return gibbs_evaluate(*path_, rule_, x, t, with_jacobian, diagonal_);
}

bool GibbsFlow::in_domain(std::span<const double> x, double) const
{
    const auto& box = path_->model().integration_box();
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!box[i].contains(x[i]))
            return false;
    return true;
}

VelocityEvaluation gibbs_evaluate(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x,
                                  double t, bool with_jacobian, JacobianDiagonal diagonal)
{
    const TargetModel& model = path.model();
    const std::size_t d = model.dimension();
    if (x.size() != d)
        throw InvalidArgument("point dimension does not match the model");
    const double lambda = path.schedule().value(t);
    const double dlambda = path.schedule().derivative(t);
    const auto di = static_cast<Eigen::Index>(d);

    VelocityEvaluation out;
    out.velocity = Vector::Zero(di);
    out.conditional_cdf = Vector::Zero(di);
    out.conditional_loglik = Vector::Zero(di);
    if (with_jacobian) {
        out.jacobian = Matrix::Zero(di, di);
        out.has_jacobian = true;
    }
    const bool gradients = with_jacobian && dlambda != 0.0;

    SliceValues values;
    std::vector<double> psi;
    std::vector<double> p;
    std::vector<double> dpsi_x(d);
    std::vector<double> delta;
    std::vector<double> eta;
    for (std::size_t i = 0; i < d; ++i) {
        const Interval box = model.integration_box()[i];
        const Slice slice = build_slice(rule, box.lo, box.hi, x[i]);
        model.evaluate_slice(x, i, slice.nodes, gradients, values);
        out.evaluations += slice.nodes.size() * (gradients ? 2 : 1);

        const std::size_t n = slice.nodes.size();
        psi.resize(n);
        double m = neg_inf;
        for (std::size_t j = 0; j < n; ++j) {
            const double lp = values.log_prior[j];
            psi[j] = (lambda == 0.0 || lp == neg_inf) ? lp : lp + lambda * values.log_likelihood[j];
            if (std::isnan(psi[j]) || psi[j] == std::numeric_limits<double>::infinity())
                throw DomainError("density evaluated outside support");
            m = std::max(m, psi[j]);
        }
        const double psi_x = psi[slice.centre];
        if (m == neg_inf || psi_x == neg_inf)
            throw DomainError("particle outside effective support");

        const auto& terms = slice.terms;
        p.assign(terms.size(), 0.0);
        double z = 0.0;
        for (std::size_t j = 0; j < terms.size(); ++j) {
            p[j] = terms[j].weight * std::exp(psi[terms[j].node] - m);
            z += p[j];
        }
        double cdf = 0.0;
        double ibar = 0.0;
        for (std::size_t j = 0; j < terms.size(); ++j) {
            p[j] /= z;
            if (p[j] == 0.0)
                continue;
            if (terms[j].left)
                cdf += p[j];
            ibar += p[j] * values.log_likelihood[terms[j].node];
        }
        out.conditional_cdf(static_cast<Eigen::Index>(i)) = std::clamp(cdf, 0.0, 1.0);
        out.conditional_loglik(static_cast<Eigen::Index>(i)) = ibar;
        if (dlambda == 0.0)
            continue;

        // integrate over the side with less mass; both give the same value under the discrete rule
        const bool use_left = cdf < 0.5;
        const double sign = use_left ? 1.0 : -1.0;
        double s_over_rho = 0.0;
        for (const auto& term : terms) {
            if (term.left != use_left || term.weight == 0.0 || psi[term.node] == neg_inf)
                continue;
            s_over_rho += term.weight * std::exp(psi[term.node] - psi_x) *
                          (ibar - values.log_likelihood[term.node]);
        }
        const double f = dlambda * sign * s_over_rho;
        if (!std::isfinite(f))
            throw DomainError("particle outside effective support");
        out.velocity(static_cast<Eigen::Index>(i)) = f;
        if (!with_jacobian)
            continue;

        const auto& gp = values.grad_log_prior;
        const auto& gl = values.grad_log_likelihood;
        auto grad_psi = [&](std::size_t k, std::size_t node) {
            const auto kk = static_cast<Eigen::Index>(k);
            const auto nn = static_cast<Eigen::Index>(node);
            return lambda == 0.0 ? gp(kk, nn) : gp(kk, nn) + lambda * gl(kk, nn);
        };
        delta.resize(terms.size());
        eta.resize(terms.size());
        for (std::size_t k = 0; k < d; ++k) {
            const auto ri = static_cast<Eigen::Index>(i);
            const auto ck = static_cast<Eigen::Index>(k);
            if (k == i && slice.nudged) {
                out.jacobian(ri, ck) = 0.0;
                continue;
            }
            if (k == i && diagonal == JacobianDiagonal::endpoint_identity) {
                out.jacobian(ri, ck) = dlambda * (ibar - values.log_likelihood[slice.centre]) -
                                       f * grad_psi(i, slice.centre);
                continue;
            }
            double delta_bar = 0.0;
            for (std::size_t j = 0; j < terms.size(); ++j) {
                const auto& term = terms[j];
                if (term.weight == 0.0 || psi[term.node] == neg_inf) {
                    delta[j] = eta[j] = 0.0;
                    continue;
                }
                const double g = grad_psi(k, term.node);
                const double h = gl(ck, static_cast<Eigen::Index>(term.node));
                if (k == i) {
                    delta[j] = term.dlogw_ds + g * term.dnode_ds;
                    eta[j] = h * term.dnode_ds;
                } else {
                    delta[j] = g;
                    eta[j] = h;
                }
                delta_bar += p[j] * delta[j];
            }
            double dibar = 0.0;
            for (std::size_t j = 0; j < terms.size(); ++j)
                if (p[j] != 0.0)
                    dibar += p[j] * ((delta[j] - delta_bar) * (values.log_likelihood[terms[j].node] - ibar) + eta[j]);
            double ds_over_rho = 0.0;
            for (std::size_t j = 0; j < terms.size(); ++j) {
                const auto& term = terms[j];
                if (term.left != use_left || term.weight == 0.0 || psi[term.node] == neg_inf)
                    continue;
                const double ell = values.log_likelihood[term.node];
                ds_over_rho += term.weight * std::exp(psi[term.node] - psi_x) *
                               ((delta[j] - delta_bar) * (ibar - ell) + dibar - eta[j]);
            }
            const double dpsi = grad_psi(k, slice.centre);
            out.jacobian(ri, ck) = dlambda * sign * ds_over_rho - f * (dpsi - delta_bar);
        }
        if (!out.jacobian.row(static_cast<Eigen::Index>(i)).allFinite())
            throw DomainError("particle outside effective support");
    }
    return out;
}

VelocityEvaluation gibbs_velocity(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x,
                                  double t)
{
    return gibbs_evaluate(path, rule, x, t, false);
}

Matrix gibbs_jacobian(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x, double t,
                      JacobianDiagonal diagonal)
{
    return gibbs_evaluate(path, rule, x, t, true, diagonal).jacobian;
}

double local_error(const TemperedPath& path, const QuadratureRule& rule, std::span<const double> x, double t,
                   const QuadratureRule& tensor_rule)
{
    const TargetModel& model = path.model();
    const std::size_t d = model.dimension();
    if (d > 3)
        throw InvalidArgument("local error needs dimension at most 3");
    const double dlambda = path.schedule().derivative(t);
    const double lambda = path.schedule().value(t);

    const std::size_t r = tensor_rule.points();
    std::vector<std::vector<double>> nodes(d);
    std::vector<std::vector<double>> weights(d);
    for (std::size_t i = 0; i < d; ++i) {
        const auto& b = model.integration_box()[i];
        nodes[i] = tensor_rule.nodes(b.lo, b.hi);
        weights[i] = tensor_rule.weights(b.lo, b.hi);
    }
    std::size_t total = 1;
    for (std::size_t i = 0; i < d; ++i)
        total *= r;
    std::vector<double> psi(total);
    std::vector<double> ell(total);
    std::vector<double> w(total);
    std::vector<double> u(d);
    for (std::size_t flat = 0; flat < total; ++flat) {
        std::size_t rest = flat;
        double weight = 1.0;
        for (std::size_t i = 0; i < d; ++i) {
            const std::size_t k = rest % r;
            rest /= r;
            u[i] = nodes[i][k];
            weight *= weights[i][k];
        }
        const double lp = model.log_prior(u);
        ell[flat] = model.log_likelihood(u);
        psi[flat] = lambda == 0.0 ? lp : lp + lambda * ell[flat];
        w[flat] = weight;
    }
    const double ell_x = model.log_likelihood(x);
    const double psi_x = lambda == 0.0 ? model.log_prior(x) : model.log_prior(x) + lambda * ell_x;
    double m = psi_x;
    for (double v : psi)
        m = std::max(m, v);
    double z = 0.0;
    double it = 0.0;
    for (std::size_t j = 0; j < total; ++j) {
        const double q = w[j] * std::exp(psi[j] - m);
        if (q == 0.0)
            continue;
        z += q;
        it += q * ell[j];
    }
    it /= z;
    const double density = std::exp(psi_x - m) / z;

    const auto sweep = gibbs_velocity(path, rule, x, t);
    double residual = ell_x - it;
    for (std::size_t i = 0; i < d; ++i)
        residual -= ell_x - sweep.conditional_loglik(static_cast<Eigen::Index>(i));
    return dlambda * density * std::abs(residual);
}

} // namespace gibbsflow
