#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "gibbsflow/model.hpp"
#include "gibbsflow/truncated_flow.hpp"

namespace gibbsflow
{

/// Posterior over the means of an equally weighted gaussian mixture with
/// known common sd and a uniform prior on [-half_width, half_width]^d.
class MixtureModel final : public TargetModel
{
  public:
    MixtureModel(std::size_t components, std::vector<double> observations, double sd, double half_width = 10.0);

    std::string name() const override { return "mixture"; }
    double log_prior(std::span<const double> x) const override;
    double log_likelihood(std::span<const double> x) const override;
    void grad_log_prior(std::span<const double> x, std::span<double> out) const override;
    void grad_log_likelihood(std::span<const double> x, std::span<double> out) const override;
    bool has_analytic_gradients() const override { return true; }
    void sample_prior(Rng& rng, std::span<double> out) const override;
    void evaluate_slice(std::span<const double> x, std::size_t i, std::span<const double> nodes,
                        bool with_gradients, SliceValues& out) const override;

    const std::vector<double>& observations() const { return y_; }
    double sd() const { return sd_; }

  private:
    double log_component(double y, double mean) const;

    std::vector<double> y_;
    double sd_;
    double half_width_;
    double log_norm_;
};

/// Observations with exactly m/d draws from N(x*_i, sd^2) for each component i, in component order.
std::vector<double> generate_mixture_data(std::span<const double> truth, double sd, std::size_t m,
                                          std::uint64_t seed);

void write_observations_csv(std::ostream& os, std::span<const double> y);
std::vector<double> read_observations_csv(std::istream& is);

/// Seed of the shipped benchmark dataset.
inline constexpr std::uint64_t mixture_dataset_seed = 20150623;

/// All d! permutations of 0..d-1 in lexicographic order.
std::vector<std::vector<std::size_t>> permutations(std::size_t d);

/// 1-based lexicographic index of the permutation p minimising |x - x*_p|^2 (ties: smallest index).
std::size_t assign_mode(std::span<const double> x, std::span<const double> truth);

/// Gaussian N(mu, Sigma) truncated to prod_i (a_i, b_i).
struct TruncatedGaussianTarget
{
    Vector mean;
    Matrix cov;
    std::vector<double> lower;
    std::vector<double> upper;

    TruncatedGaussianTarget(Vector mean, Matrix cov, std::vector<double> lower, std::vector<double> upper);

    std::size_t dimension() const { return static_cast<std::size_t>(mean.size()); }

    /// Orthant [0, inf)^d, mean (-xi, ..., -xi, xi, ..., xi) and unit variances with common correlation rho.
    static TruncatedGaussianTarget orthant(std::size_t d, double rho, double xi);
};

/// alpha_i(t) = max(1 - 1/t, mu_i - 8 sd_i), beta_i(t) = mu_i + 8 sd_i; orthant targets only.
TruncationSchedule default_truncation_schedule(const TruncatedGaussianTarget& target);

/// Latin hypercube sample of n points in the box (one point per stratum in every coordinate).
std::vector<Vector> latin_hypercube(std::size_t n, const Box& box, Rng& rng);

} // namespace gibbsflow
