#include "gibbsflow/models.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <istream>
#include <limits>
#include <numbers>
#include <numeric>
#include <ostream>
#include <string>

#include "gibbsflow/error.hpp"

namespace gibbsflow
{

namespace
{

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

double log_add(double a, double b)
{
    if (a == neg_inf)
        return b;
    if (b == neg_inf)
        return a;
    return a > b ? a + std::log1p(std::exp(b - a)) : b + std::log1p(std::exp(a - b));
}

Box cube(std::size_t d, double half_width)
{
    if (!(half_width > 0.0) || !std::isfinite(half_width))
        throw InvalidArgument("mixture prior half width must be positive and finite");
    return Box(d, Interval{-half_width, half_width});
}

} // namespace

MixtureModel::MixtureModel(std::size_t components, std::vector<double> observations, double sd, double half_width)
    : TargetModel(cube(components, half_width), cube(components, half_width)), y_(std::move(observations)), sd_(sd),
      half_width_(half_width)
{
    if (y_.empty())
        throw InvalidArgument("mixture model needs observations");
    if (!(sd_ > 0.0))
        throw InvalidArgument("mixture sd must be positive");
    log_norm_ = -0.5 * std::log(2.0 * std::numbers::pi * sd_ * sd_);
}

double MixtureModel::log_component(double y, double mean) const
{
    const double z = (y - mean) / sd_;
    return log_norm_ - 0.5 * z * z;
}

double MixtureModel::log_prior(std::span<const double> x) const
{
    for (double v : x)
        if (!(v >= -half_width_ && v <= half_width_))
            return neg_inf;
    return -static_cast<double>(x.size()) * std::log(2.0 * half_width_);
}

double MixtureModel::log_likelihood(std::span<const double> x) const
{
    const std::size_t d = x.size();
    double total = -static_cast<double>(y_.size()) * std::log(static_cast<double>(d));
    for (double y : y_) {
        double s = neg_inf;
        for (double mean : x)
            s = log_add(s, log_component(y, mean));
        total += s;
    }
    return total;
}

void MixtureModel::grad_log_prior(std::span<const double>, std::span<double> out) const
{
    std::fill(out.begin(), out.end(), 0.0);
}

void MixtureModel::grad_log_likelihood(std::span<const double> x, std::span<double> out) const
{
    const std::size_t d = x.size();
    std::fill(out.begin(), out.end(), 0.0);
    std::vector<double> lc(d);
    for (double y : y_) {
        double s = neg_inf;
        for (std::size_t k = 0; k < d; ++k) {
            lc[k] = log_component(y, x[k]);
            s = log_add(s, lc[k]);
        }
        for (std::size_t k = 0; k < d; ++k)
            out[k] += std::exp(lc[k] - s) * (y - x[k]) / (sd_ * sd_);
    }
}

void MixtureModel::sample_prior(Rng& rng, std::span<double> out) const
{
    for (auto& v : out)
        v = -half_width_ + 2.0 * half_width_ * rng.uniform();
}

void MixtureModel::evaluate_slice(std::span<const double> x, std::size_t i, std::span<const double> nodes,
                                  bool with_gradients, SliceValues& out) const
{
    const std::size_t d = x.size();
    const std::size_t n = nodes.size();
    const std::size_t m = y_.size();
    out.log_prior.resize(n);
    out.log_likelihood.resize(n);
    if (with_gradients) {
        out.grad_log_prior = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
        out.grad_log_likelihood = Matrix::Zero(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(n));
    }

    // log of the summed density of the components other than i, per observation
    std::vector<double> rest(m, neg_inf);
    std::vector<double> lc(with_gradients ? m * d : 0);
    for (std::size_t j = 0; j < m; ++j)
        for (std::size_t k = 0; k < d; ++k) {
            if (k == i)
                continue;
            const double v = log_component(y_[j], x[k]);
            rest[j] = log_add(rest[j], v);
            if (with_gradients)
                lc[j * d + k] = v;
        }

    bool prior_inside = true;
    for (std::size_t k = 0; k < d; ++k)
        if (k != i && !(x[k] >= -half_width_ && x[k] <= half_width_))
            prior_inside = false;
    const double log_prior_value = -static_cast<double>(d) * std::log(2.0 * half_width_);
    const double base = -static_cast<double>(m) * std::log(static_cast<double>(d));
    const double inv_var = 1.0 / (sd_ * sd_);

    for (std::size_t q = 0; q < n; ++q) {
        const double u = nodes[q];
        out.log_prior[q] = prior_inside && u >= -half_width_ && u <= half_width_ ? log_prior_value : neg_inf;
        double total = base;
        for (std::size_t j = 0; j < m; ++j) {
            const double own = log_component(y_[j], u);
            const double s = log_add(rest[j], own);
            total += s;
            if (with_gradients) {
                auto col = out.grad_log_likelihood.col(static_cast<Eigen::Index>(q));
                for (std::size_t k = 0; k < d; ++k) {
                    const double mean = k == i ? u : x[k];
                    const double v = k == i ? own : lc[j * d + k];
                    col(static_cast<Eigen::Index>(k)) += std::exp(v - s) * (y_[j] - mean) * inv_var;
                }
            }
        }
        out.log_likelihood[q] = total;
    }
}

std::vector<double> generate_mixture_data(std::span<const double> truth, double sd, std::size_t m,
                                          std::uint64_t seed)
{
    const std::size_t d = truth.size();
    if (d == 0 || m == 0 || m % d != 0)
        throw InvalidArgument("number of observations must be a positive multiple of the number of components");
    if (!(sd >= 0.0))
        throw InvalidArgument("mixture sd must be nonnegative");
    Rng rng(seed);
    std::vector<double> y;
    y.reserve(m);
    for (std::size_t i = 0; i < d; ++i)
        for (std::size_t k = 0; k < m / d; ++k)
            y.push_back(truth[i] + sd * rng.normal());
    return y;
}

void write_observations_csv(std::ostream& os, std::span<const double> y)
{
    const auto flags = os.flags();
    const auto precision = os.precision();
    os << std::setprecision(17);
    for (double v : y)
        os << v << '\n';
    os.flags(flags);
    os.precision(precision);
}

std::vector<double> read_observations_csv(std::istream& is)
{
    std::vector<double> y;
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty() || line[0] == '#')
            continue;
        std::size_t used = 0;
        double v;
        try {
            v = std::stod(line, &used);
        } catch (const std::exception&) {
            throw InvalidArgument("bad observation line: " + line);
        }
        if (line.find_first_not_of(" \t\r", used) != std::string::npos)
            throw InvalidArgument("bad observation line: " + line);
        y.push_back(v);
    }
    return y;
}

std::vector<std::vector<std::size_t>> permutations(std::size_t d)
{
    std::vector<std::size_t> p(d);
    std::iota(p.begin(), p.end(), 0);
    std::vector<std::vector<std::size_t>> all;
    do
        all.push_back(p);
    while (std::next_permutation(p.begin(), p.end()));
    return all;
}

std::size_t assign_mode(std::span<const double> x, std::span<const double> truth)
{
    if (x.size() != truth.size() || x.empty())
        throw InvalidArgument("assign_mode: dimension mismatch");
    if (x.size() > 10)
        throw InvalidArgument("assign_mode: dimension too large for exhaustive search");
    std::vector<std::size_t> p(x.size());
    std::iota(p.begin(), p.end(), 0);
    double best = std::numeric_limits<double>::infinity();
    std::size_t best_index = 0;
    std::size_t index = 0;
    do {
        ++index;
        double s = 0.0;
        for (std::size_t k = 0; k < x.size(); ++k)
            s += (x[k] - truth[p[k]]) * (x[k] - truth[p[k]]);
        if (s < best) {
            best = s;
            best_index = index;
        }
    } while (std::next_permutation(p.begin(), p.end()));
    return best_index;
}

TruncatedGaussianTarget::TruncatedGaussianTarget(Vector mean_, Matrix cov_, std::vector<double> lower_,
                                                 std::vector<double> upper_)
    : mean(std::move(mean_)), cov(std::move(cov_)), lower(std::move(lower_)), upper(std::move(upper_))
{
    const auto d = static_cast<std::size_t>(mean.size());
    if (d == 0 || cov.rows() != mean.size() || cov.cols() != mean.size() || lower.size() != d || upper.size() != d)
        throw InvalidArgument("truncated gaussian: inconsistent dimensions");
    if (cov.llt().info() != Eigen::Success)
        throw InvalidArgument("truncated gaussian: covariance is not positive definite");
    for (std::size_t i = 0; i < d; ++i)
        if (!(lower[i] < upper[i]))
            throw InvalidArgument("truncated gaussian: bounds must satisfy a_i < b_i");
}

TruncatedGaussianTarget TruncatedGaussianTarget::orthant(std::size_t d, double rho, double xi)
{
    if (d == 0)
        throw InvalidArgument("truncated gaussian: dimension must be positive");
    if (!(rho > -1.0 / static_cast<double>(std::max<std::size_t>(d - 1, 1))) || !(rho < 1.0))
        throw InvalidArgument("truncated gaussian: correlation out of range");
    Vector mean(static_cast<Eigen::Index>(d));
    for (std::size_t i = 0; i < d; ++i)
        mean(static_cast<Eigen::Index>(i)) = i < d / 2 ? -xi : xi;
    Matrix cov = Matrix::Constant(static_cast<Eigen::Index>(d), static_cast<Eigen::Index>(d), rho);
    cov.diagonal().setOnes();
    return {mean, cov, std::vector<double>(d, 0.0), std::vector<double>(d, std::numeric_limits<double>::infinity())};
}

TruncationSchedule default_truncation_schedule(const TruncatedGaussianTarget& target)
{
    const std::size_t d = target.dimension();
    std::vector<Bound> lower;
    std::vector<Bound> upper;
    for (std::size_t i = 0; i < d; ++i) {
        if (target.lower[i] != 0.0 || target.upper[i] != std::numeric_limits<double>::infinity())
            throw InvalidArgument("default truncation schedule needs orthant bounds; supply an explicit schedule");
        const auto k = static_cast<Eigen::Index>(i);
        const double sd = std::sqrt(target.cov(k, k));
        const double clip_lo = target.mean(k) - 8.0 * sd;
        const double clip_hi = target.mean(k) + 8.0 * sd;
        auto raw = [](double t) { return t > 0.0 ? 1.0 - 1.0 / t : -std::numeric_limits<double>::infinity(); };
        lower.push_back({[raw, clip_lo](double t) { return std::max(raw(t), clip_lo); },
                         [raw, clip_lo](double t) { return raw(t) > clip_lo ? 1.0 / (t * t) : 0.0; }});
        upper.push_back(Bound::constant(clip_hi));
    }
    return {std::move(lower), std::move(upper)};
}

std::vector<Vector> latin_hypercube(std::size_t n, const Box& box, Rng& rng)
{
    const std::size_t d = box.size();
    std::vector<Vector> points(n, Vector(static_cast<Eigen::Index>(d)));
    std::vector<std::size_t> strata(n);
    for (std::size_t i = 0; i < d; ++i) {
        std::iota(strata.begin(), strata.end(), 0);
        for (std::size_t k = n; k > 1; --k)
            std::swap(strata[k - 1], strata[rng.below(k)]);
        for (std::size_t k = 0; k < n; ++k) {
            const double u = (static_cast<double>(strata[k]) + rng.uniform()) / static_cast<double>(n);
            points[k](static_cast<Eigen::Index>(i)) = box[i].lo + box[i].width() * u;
        }
    }
    return points;
}

} // namespace gibbsflow
