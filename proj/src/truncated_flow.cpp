#include "gibbsflow/truncated_flow.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

Bound Bound::constant(double v)
{
    return {[v](double) { return v; }, [](double) { return 0.0; }};
}

TruncationSchedule::TruncationSchedule(std::vector<Bound> lower, std::vector<Bound> upper)
    : lower_(std::move(lower)), upper_(std::move(upper))
{
    if (lower_.empty() || lower_.size() != upper_.size())
        throw InvalidArgument("truncation schedule needs matching lower and upper bounds");
    for (std::size_t i = 0; i < lower_.size(); ++i) {
        if (!lower_[i].value || !lower_[i].derivative || !upper_[i].value || !upper_[i].derivative)
            throw InvalidArgument("truncation bounds need value and derivative");
        if (!(terminal_lower(i) < terminal_upper(i)))
            throw InvalidArgument("terminal truncation bounds must satisfy a_i < b_i");
    }
}

bool TruncationSchedule::contains(std::span<const double> x, double t) const
{
    for (std::size_t i = 0; i < x.size(); ++i)
        if (!(x[i] > lower(i, t) && x[i] < upper(i, t)))
            return false;
    return true;
}

GaussianDensity::GaussianDensity(Vector mean, Matrix cov) : mean_(std::move(mean)), cov_(std::move(cov))
{
    if (cov_.rows() != mean_.size() || cov_.cols() != mean_.size() || mean_.size() == 0)
        throw InvalidArgument("gaussian: inconsistent dimensions");
    Eigen::LLT<Matrix> llt(cov_);
    if (llt.info() != Eigen::Success)
        throw InvalidArgument("gaussian: covariance is not positive definite");
    chol_ = llt.matrixL();
    prec_ = llt.solve(Matrix::Identity(cov_.rows(), cov_.cols()));
}

double GaussianDensity::sd(std::size_t i) const
{
    const auto k = static_cast<Eigen::Index>(i);
    return std::sqrt(cov_(k, k));
}

double GaussianDensity::log_density(std::span<const double> x) const
{
    return gaussian_log_density(x, mean_, chol_);
}

Vector GaussianDensity::grad_log_density(std::span<const double> x) const
{
    return prec_ * (mean_ - as_vector(x));
}

void GaussianDensity::sample(Rng& rng, std::span<double> out) const
{
    Vector z(mean_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z(i) = rng.normal();
    Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size())) = mean_ + chol_ * z;
}

TruncatedGaussianPath::TruncatedGaussianPath(GaussianDensity prior, TruncationSchedule schedule)
    : prior_(std::move(prior)), schedule_(std::move(schedule))
{
    if (prior_.dimension() != schedule_.dimension())
        throw InvalidArgument("truncation schedule and prior differ in dimension");
}

double TruncatedGaussianPath::log_density(std::span<const double> x, double t) const
{
    if (!schedule_.contains(x, t))
        return -std::numeric_limits<double>::infinity();
    return prior_.log_density(x);
}

double TruncatedGaussianPath::log_density_ratio(std::span<const double> x, double from, double to) const
{
    const bool inside_to = schedule_.contains(x, to);
    const bool inside_from = schedule_.contains(x, from);
    if (!inside_to)
        return inside_from ? -std::numeric_limits<double>::infinity() : std::numeric_limits<double>::quiet_NaN();
    return inside_from ? 0.0 : std::numeric_limits<double>::infinity();
}

void TruncatedGaussianPath::grad_log_density(std::span<const double> x, double, std::span<double> out) const
{
    Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size())) = prior_.grad_log_density(x);
}

void TruncatedGaussianPath::sample_initial(Rng& rng, std::span<double> out) const
{
    for (int attempt = 0; attempt < 10000; ++attempt) {
        prior_.sample(rng, out);
        if (schedule_.contains(out, 0.0))
            return;
    }
    throw DomainError("initial truncation region has negligible prior mass");
}

namespace
{

struct Term
{
    double node;
    bool left;
    double weight;
    double dnode_ds;
    double dlogw_ds;
};

VelocityEvaluation truncated_evaluate(const GaussianDensity& prior, const TruncationSchedule& schedule,
                                      const QuadratureRule& rule, std::span<const double> x, double t,
                                      bool with_jacobian, TruncatedFlow::Diagonal diagonal, double step = 0.0)
{
    const std::size_t d = prior.dimension();
    if (x.size() != d || schedule.dimension() != d)
        throw InvalidArgument("point dimension does not match the prior");
    if (!schedule.contains(x, t))
        throw DomainError("particle outside the current truncation region");
    const auto di = static_cast<Eigen::Index>(d);
    const Matrix& prec = prior.precision();
    const Vector g = prior.grad_log_density(x);

    VelocityEvaluation out;
    out.velocity = Vector::Zero(di);
    out.conditional_cdf = Vector::Zero(di);
    if (with_jacobian) {
        out.jacobian = Matrix::Zero(di, di);
        out.has_jacobian = true;
    }

    const auto& a = rule.unit_nodes();
    const auto& w = rule.unit_weights();
    const std::size_t r = a.size();
    std::vector<Term> terms;
    std::vector<double> psi;
    std::vector<double> p;
    std::vector<double> delta;
    for (std::size_t i = 0; i < d; ++i) {
        const auto ii = static_cast<Eigen::Index>(i);
        const double clip_lo = prior.mean()(ii) - 8.0 * prior.sd(i);
        const double clip_hi = prior.mean()(ii) + 8.0 * prior.sd(i);
        const double alpha = schedule.lower(i, t);
        const double beta = schedule.upper(i, t);
        const double lo = std::max(alpha, clip_lo);
        const double hi = std::min(beta, clip_hi);
        double dalpha = alpha >= clip_lo ? schedule.lower_derivative(i, t) : 0.0;
        double dbeta = beta <= clip_hi ? schedule.upper_derivative(i, t) : 0.0;
        if (step > 0.0) {
            // secant speeds carry the current bounds exactly onto the bounds at t + step
            dalpha = (std::max(schedule.lower(i, t + step), clip_lo) - lo) / step;
            dbeta = (std::min(schedule.upper(i, t + step), clip_hi) - hi) / step;
        }
        if (!(lo < hi))
            throw DomainError("truncation region has no prior mass");

        const double xi = x[i];
        const double margin = 1e-9 * (hi - lo);
        double s = xi;
        bool nudged = false;
        if (!(s > lo + margin && s < hi - margin)) {
            s = std::clamp(s, lo + margin, hi - margin);
            nudged = true;
        }
        const double pii = prec(ii, ii);
        // log pi_0(u, x_{-i}) - log pi_0(x)
        auto rel = [&](double u) { return (u - xi) * g(ii) - 0.5 * pii * (u - xi) * (u - xi); };

        terms.clear();
        const double wl = s - lo;
        const double wr = hi - s;
        for (std::size_t k = 0; k < r; ++k)
            terms.push_back({k + 1 == r ? s : lo + wl * a[k], true, wl * w[k], a[k], 1.0 / wl});
        for (std::size_t k = 0; k < r; ++k)
            terms.push_back({k == 0 ? s : (k + 1 == r ? hi : s + wr * a[k]), false, wr * w[k], 1.0 - a[k],
                             -1.0 / wr});
        out.evaluations += (2 * r - 1) * (with_jacobian ? 2 : 1);

        psi.resize(terms.size());
        double m = -std::numeric_limits<double>::infinity();
        for (std::size_t j = 0; j < terms.size(); ++j) {
            psi[j] = rel(terms[j].node);
            m = std::max(m, psi[j]);
        }
        p.resize(terms.size());
        double z = 0.0;
        for (std::size_t j = 0; j < terms.size(); ++j) {
            p[j] = terms[j].weight * std::exp(psi[j] - m);
            z += p[j];
        }
        double cdf = 0.0;
        for (std::size_t j = 0; j < terms.size(); ++j) {
            p[j] /= z;
            if (terms[j].left)
                cdf += p[j];
        }
        cdf = std::clamp(cdf, 0.0, 1.0);
        out.conditional_cdf(ii) = cdf;

        const double a_alpha = dalpha != 0.0 ? dalpha * std::exp(rel(lo)) : 0.0;
        const double a_beta = dbeta != 0.0 ? dbeta * std::exp(rel(hi)) : 0.0;
        const double f = a_alpha * (1.0 - cdf) + a_beta * cdf;
        if (!std::isfinite(f) || !std::isfinite(z))
            throw DomainError("particle outside effective support");
        out.velocity(ii) = f;
        if (!with_jacobian || (a_alpha == 0.0 && a_beta == 0.0))
            continue;

        delta.resize(terms.size());
        for (std::size_t k = 0; k < d; ++k) {
            const auto kk = static_cast<Eigen::Index>(k);
            if (k == i && nudged)
                continue;
            double da_alpha;
            double da_beta;
            if (k == i) {
                da_alpha = -a_alpha * g(ii);
                da_beta = -a_beta * g(ii);
            } else {
                da_alpha = a_alpha * prec(kk, ii) * (xi - lo);
                da_beta = a_beta * prec(kk, ii) * (xi - hi);
            }
            double dcdf = 0.0;
            if (k == i && diagonal == TruncatedFlow::Diagonal::endpoint_identity) {
                dcdf = std::exp(-m) / z;
            } else {
                double delta_bar = 0.0;
                for (std::size_t j = 0; j < terms.size(); ++j) {
                    const double gk = g(kk) + prec(kk, ii) * (xi - terms[j].node);
                    delta[j] = k == i ? terms[j].dlogw_ds + gk * terms[j].dnode_ds : gk;
                    delta_bar += p[j] * delta[j];
                }
                for (std::size_t j = 0; j < terms.size(); ++j)
                    if (terms[j].left)
                        dcdf += p[j] * (delta[j] - delta_bar);
            }
            out.jacobian(ii, kk) = da_alpha * (1.0 - cdf) - a_alpha * dcdf + da_beta * cdf + a_beta * dcdf;
        }
        if (!out.jacobian.row(ii).allFinite())
            throw DomainError("particle outside effective support");
    }
    return out;
}

} // namespace

TruncatedFlow::TruncatedFlow(std::shared_ptr<const TruncatedGaussianPath> path, QuadratureRule rule,
                             Diagonal diagonal)
    : path_(std::move(path)), rule_(std::move(rule)), diagonal_(diagonal)
{
    if (!path_)
        throw InvalidArgument("truncated flow needs a path");
}

VelocityEvaluation TruncatedFlow::evaluate(std::span<const double> x, double t, bool with_jacobian) const
{
    return truncated_evaluate(path_->prior(), path_->schedule(), rule_, x, t, with_jacobian, diagonal_);
}

VelocityEvaluation TruncatedFlow::evaluate_step(std::span<const double> x, double t, double dt,
                                                bool with_jacobian) const
{
    return truncated_evaluate(path_->prior(), path_->schedule(), rule_, x, t, with_jacobian, diagonal_, dt);
}

VelocityEvaluation truncated_velocity(const GaussianDensity& prior, const TruncationSchedule& schedule,
                                      const QuadratureRule& rule, std::span<const double> x, double t)
{
    return truncated_evaluate(prior, schedule, rule, x, t, false, TruncatedFlow::Diagonal::exact_discrete);
}

Matrix truncated_jacobian(const GaussianDensity& prior, const TruncationSchedule& schedule,
                          const QuadratureRule& rule, std::span<const double> x, double t)
{
    return truncated_evaluate(prior, schedule, rule, x, t, true, TruncatedFlow::Diagonal::exact_discrete).jacobian;
}

} // namespace gibbsflow
