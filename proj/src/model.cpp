#include "gibbsflow/model.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

namespace
{

void central_difference(const std::function<double(std::span<const double>)>& f, std::span<const double> x,
                        std::span<double> out)
{
    std::vector<double> work(x.begin(), x.end());
    for (std::size_t k = 0; k < x.size(); ++k) {
        const double h = 1e-5 * std::max(1.0, std::abs(x[k]));
        work[k] = x[k] + h;
        const double up = f(work);
        work[k] = x[k] - h;
        const double down = f(work);
        work[k] = x[k];
        out[k] = (up - down) / (2.0 * h);
    }
}

void check_box(const Box& support, const Box& box)
{
    if (support.empty())
        throw InvalidArgument("model dimension must be positive");
    if (support.size() != box.size())
        throw InvalidArgument("support and integration box differ in dimension");
    for (std::size_t i = 0; i < box.size(); ++i) {
        if (!std::isfinite(box[i].lo) || !std::isfinite(box[i].hi) || !(box[i].lo < box[i].hi))
            throw InvalidArgument("integration box must be finite and non-empty in every coordinate");
        if (box[i].lo < support[i].lo || box[i].hi > support[i].hi)
            throw InvalidArgument("integration box must lie inside the support");
    }
}

} // namespace

TargetModel::TargetModel(Box support, Box integration_box) : support_(std::move(support)), box_(std::move(integration_box))
{
    check_box(support_, box_);
}

void TargetModel::grad_log_prior(std::span<const double> x, std::span<double> out) const
{
    central_difference([this](std::span<const double> z) { return log_prior(z); }, x, out);
}

void TargetModel::grad_log_likelihood(std::span<const double> x, std::span<double> out) const
{
    central_difference([this](std::span<const double> z) { return log_likelihood(z); }, x, out);
}

void TargetModel::evaluate_slice(std::span<const double> x, std::size_t i, std::span<const double> nodes,
                                 bool with_gradients, SliceValues& out) const
{
    const std::size_t n = nodes.size();
    const std::size_t d = dimension();
    out.log_prior.resize(n);
    out.log_likelihood.resize(n);
    if (with_gradients) {
        out.grad_log_prior.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
        out.grad_log_likelihood.resize(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    }
    std::vector<double> work(x.begin(), x.end());
    for (std::size_t j = 0; j < n; ++j) {
        work[i] = nodes[j];
        out.log_prior[j] = log_prior(work);
        out.log_likelihood[j] = log_likelihood(work);
        if (with_gradients) {
            grad_log_prior(work, {out.grad_log_prior.col(static_cast<Eigen::Index>(j)).data(), d});
            grad_log_likelihood(work, {out.grad_log_likelihood.col(static_cast<Eigen::Index>(j)).data(), d});
        }
    }
}

FunctionModel::FunctionModel(Parts parts)
    : TargetModel(parts.support, parts.integration_box), parts_(std::move(parts))
{
    if (!parts_.log_prior || !parts_.log_likelihood || !parts_.sample_prior)
        throw InvalidArgument("function model needs log_prior, log_likelihood and sample_prior");
}

void FunctionModel::grad_log_prior(std::span<const double> x, std::span<double> out) const
{
    if (parts_.grad_log_prior)
        parts_.grad_log_prior(x, out);
    else
        TargetModel::grad_log_prior(x, out);
}

void FunctionModel::grad_log_likelihood(std::span<const double> x, std::span<double> out) const
{
    if (parts_.grad_log_likelihood)
        parts_.grad_log_likelihood(x, out);
    else
        TargetModel::grad_log_likelihood(x, out);
}

namespace
{

Box gaussian_box(const Vector& mean, const Matrix& cov, double sds)
{
    Box box(static_cast<std::size_t>(mean.size()));
    for (Eigen::Index i = 0; i < mean.size(); ++i) {
        const double s = std::sqrt(cov(i, i));
        box[static_cast<std::size_t>(i)] = {mean(i) - sds * s, mean(i) + sds * s};
    }
    return box;
}

Box real_line(std::size_t d)
{
    const double inf = std::numeric_limits<double>::infinity();
    return Box(d, Interval{-inf, inf});
}

Matrix checked_inverse(const Matrix& m, const char* what)
{
    Eigen::LLT<Matrix> llt(m);
    if (llt.info() != Eigen::Success)
        throw InvalidArgument(std::string(what) + " is not positive definite");
    return llt.solve(Matrix::Identity(m.rows(), m.cols()));
}

} // namespace

GaussianLinearModel::GaussianLinearModel(Vector prior_mean, Matrix prior_cov, Matrix lik_cov, Vector observation,
                                         double box_sds)
    : TargetModel(real_line(static_cast<std::size_t>(prior_mean.size())),
                  gaussian_box(prior_mean, prior_cov, box_sds)),
      mu0_(std::move(prior_mean)), cov0_(std::move(prior_cov)), cov_l_(std::move(lik_cov)), y_(std::move(observation))
{
    const auto d = mu0_.size();
    if (cov0_.rows() != d || cov0_.cols() != d || cov_l_.rows() != d || cov_l_.cols() != d || y_.size() != d)
        throw InvalidArgument("gaussian model: inconsistent dimensions");
    prec0_ = checked_inverse(cov0_, "prior covariance");
    prec_l_ = checked_inverse(cov_l_, "likelihood covariance");
    chol0_ = cov0_.llt().matrixL();
    log_norm0_ = -0.5 * static_cast<double>(d) * std::log(2.0 * std::numbers::pi) -
                 chol0_.diagonal().array().log().sum();
    std::size_t band = 0;
    for (Eigen::Index i = 0; i < d; ++i)
        for (Eigen::Index j = 0; j < d; ++j)
            if (std::abs(prec0_(i, j)) > 1e-14 * std::abs(prec0_(i, i)) ||
                std::abs(prec_l_(i, j)) > 1e-14 * std::abs(prec_l_(i, i)))
                band = std::max(band, static_cast<std::size_t>(std::abs(i - j)));
    bandwidth_ = band;
}

double GaussianLinearModel::log_prior(std::span<const double> x) const
{
    const Vector r = as_vector(x) - mu0_;
    return log_norm0_ - 0.5 * r.dot(prec0_ * r);
}

double GaussianLinearModel::log_likelihood(std::span<const double> x) const
{
    const Vector r = as_vector(x) - y_;
    return -0.5 * r.dot(prec_l_ * r);
}

void GaussianLinearModel::grad_log_prior(std::span<const double> x, std::span<double> out) const
{
    Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size())) = prec0_ * (mu0_ - as_vector(x));
}

void GaussianLinearModel::grad_log_likelihood(std::span<const double> x, std::span<double> out) const
{
    Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size())) = prec_l_ * (y_ - as_vector(x));
}

void GaussianLinearModel::sample_prior(Rng& rng, std::span<double> out) const
{
    Vector z(mu0_.size());
    for (Eigen::Index i = 0; i < z.size(); ++i)
        z(i) = rng.normal();
    Eigen::Map<Vector>(out.data(), static_cast<Eigen::Index>(out.size())) = mu0_ + chol0_ * z;
}

TemperatureSchedule::TemperatureSchedule(std::string name, std::function<double(double)> value,
                                         std::function<double(double)> derivative)
    : name_(std::move(name)), value_(std::move(value)), derivative_(std::move(derivative))
{
    if (!value_ || !derivative_)
        throw InvalidArgument("temperature schedule needs value and derivative");
}

TemperatureSchedule TemperatureSchedule::linear()
{
    return {"linear", [](double t) { return t; }, [](double) { return 1.0; }};
}

TemperatureSchedule TemperatureSchedule::power(double p)
{
    if (!(p >= 1.0) || !std::isfinite(p))
        throw InvalidArgument("power schedule needs a finite exponent p >= 1");
    if (p == 1.0)
        return linear();
    std::ostringstream name;
    name << "power(" << p << ")";
    return {name.str(), [p](double t) { return std::pow(t, p); },
            [p](double t) { return p * std::pow(t, p - 1.0); }};
}

double TemperatureSchedule::value(double t) const
{
    if (t <= 0.0)
        return 0.0;
    if (t >= 1.0)
        return 1.0;
    return value_(t);
}

double DensityPath::log_density_ratio(std::span<const double> x, double from, double to) const
{
    return log_density(x, to) - log_density(x, from);
}

TemperedPath::TemperedPath(std::shared_ptr<const TargetModel> model, TemperatureSchedule schedule)
    : model_(std::move(model)), schedule_(std::move(schedule))
{
    if (!model_)
        throw InvalidArgument("tempered path needs a model");
}

double TemperedPath::log_density(std::span<const double> x, double t) const
{
    const double lp = model_->log_prior(x);
    if (lp == -std::numeric_limits<double>::infinity())
        return lp;
    const double lambda = schedule_.value(t);
    if (lambda == 0.0)
        return lp;
    return lp + lambda * model_->log_likelihood(x);
}

double TemperedPath::log_density_ratio(std::span<const double> x, double from, double to) const
{
    const double dl = schedule_.value(to) - schedule_.value(from);
    if (dl == 0.0)
        return 0.0;
    return dl * model_->log_likelihood(x);
}

void TemperedPath::grad_log_density(std::span<const double> x, double t, std::span<double> out) const
{
    model_->grad_log_prior(x, out);
    const double lambda = schedule_.value(t);
    if (lambda == 0.0)
        return;
    std::vector<double> gl(x.size());
    model_->grad_log_likelihood(x, gl);
    for (std::size_t k = 0; k < x.size(); ++k)
        out[k] += lambda * gl[k];
}

double log_gamma(const TemperedPath& path, std::span<const double> x, double t)
{
    const double v = path.log_density(x, t);
    if (!std::isfinite(v))
        throw DomainError("density evaluated outside support");
    return v;
}

double dt_log_gamma(const TemperedPath& path, std::span<const double> x, double t)
{
    const double dl = path.schedule().derivative(t);
    const double ll = path.model().log_likelihood(x);
    if (!std::isfinite(ll) || !std::isfinite(path.model().log_prior(x)))
        throw DomainError("density evaluated outside support");
    return dl == 0.0 ? 0.0 : dl * ll;
}

double gaussian_log_density(std::span<const double> x, const Vector& mean, const Matrix& chol_lower)
{
    const Vector r = as_vector(x) - mean;
    const Vector z = chol_lower.triangularView<Eigen::Lower>().solve(r);
    return -0.5 * static_cast<double>(mean.size()) * std::log(2.0 * std::numbers::pi) -
           chol_lower.diagonal().array().log().sum() - 0.5 * z.squaredNorm();
}

} // namespace gibbsflow
