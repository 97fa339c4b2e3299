#include <doctest.h>

#include <cmath>
#include <numbers>
#include <numeric>

#include "gibbsflow/error.hpp"
#include "gibbsflow/gibbs_flow.hpp"
#include "gibbsflow/models.hpp"
#include "gibbsflow/smc.hpp"
#include "gibbsflow/truncated_flow.hpp"
#include "test_support.hpp"

using namespace gibbsflow;

namespace
{

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

/// Time-independent N(0, 1), optionally with zero gradient.
class StandardNormal final : public DensityPath
{
  public:
    explicit StandardNormal(bool flat_gradient = false) : flat_(flat_gradient) {}
    std::size_t dimension() const override { return 1; }
    double log_density(std::span<const double> x, double) const override { return -0.5 * x[0] * x[0]; }
    void grad_log_density(std::span<const double> x, double, std::span<double> out) const override
    {
        out[0] = flat_ ? 0.0 : -x[0];
    }
    void sample_initial(Rng& rng, std::span<double> out) const override { out[0] = rng.normal(); }

  private:
    bool flat_;
};

std::shared_ptr<TruncatedGaussianPath> orthant_path(std::size_t d, double rho, double xi)
{
    const auto target = TruncatedGaussianTarget::orthant(d, rho, xi);
    return std::make_shared<TruncatedGaussianPath>(GaussianDensity(target.mean, target.cov),
                                                   default_truncation_schedule(target));
}

double mean(const std::vector<double>& v) { return std::accumulate(v.begin(), v.end(), 0.0) / v.size(); }

double standard_error(const std::vector<double>& v)
{
    const double m = mean(v);
    double s = 0.0;
    for (double a : v)
        s += (a - m) * (a - m);
    return std::sqrt(s / (v.size() - 1) / v.size());
}

// standard error of a correlated series by batch means
double batch_error(const std::vector<double>& v, std::size_t batches = 50)
{
    const std::size_t b = v.size() / batches;
    std::vector<double> means(batches);
    for (std::size_t k = 0; k < batches; ++k)
        means[k] = std::accumulate(v.begin() + k * b, v.begin() + (k + 1) * b, 0.0) / b;
    return standard_error(means);
}

} // namespace

TEST_CASE("effective sample size")
{
    const double uniform[] = {0.0, 0.0, 0.0, 0.0};
    CHECK(ess(uniform) == doctest::Approx(4.0));
    const double one[] = {neg_inf, 1.0, neg_inf};
    CHECK(ess(one) == doctest::Approx(1.0));
    const double half[] = {std::log(0.5), std::log(0.5), neg_inf, neg_inf};
    CHECK(ess(half) == doctest::Approx(2.0));
    const double dead[] = {neg_inf, neg_inf};
    CHECK_THROWS_AS(ess(dead), EnsembleDied);
    Rng rng(1);
    std::vector<double> w(20);
    for (double& v : w)
        v = 5.0 * rng.normal();
    CHECK(ess(w) >= 1.0);
    CHECK(ess(w) <= 20.0);
}

TEST_CASE("reweighting keeps normalized weights")
{
    ParticleEnsemble e({Vector::Constant(1, 0.0), Vector::Constant(1, 1.0)});
    const double inc[] = {neg_inf, 0.3};
    const double dz = e.reweight(inc);
    CHECK(dz == doctest::Approx(0.3 + std::log(0.5)));
    const auto w = e.weights();
    CHECK(w[0] == 0.0);
    CHECK(w[1] == 1.0);
    const double none[] = {neg_inf, neg_inf};
    CHECK_THROWS_AS(e.reweight(none), EnsembleDied);
}

TEST_CASE("resampling")
{
    Rng rng(4);
    const std::vector<double> flat(8, 0.125);
    auto idx = resample_indices(flat, 8, ResampleScheme::systematic, rng);
    std::sort(idx.begin(), idx.end());
    for (std::size_t k = 0; k < 8; ++k)
        CHECK(idx[k] == k);

    const std::vector<double> first{1.0, 0.0, 0.0, 0.0};
    for (auto scheme : {ResampleScheme::systematic, ResampleScheme::multinomial})
        for (auto i : resample_indices(first, 10, scheme, rng))
            CHECK(i == 0);

    const std::vector<double> w{0.75, 0.25};
    const auto draws = resample_indices(w, 10000, ResampleScheme::multinomial, rng);
    const auto zeros = std::count(draws.begin(), draws.end(), 0u);
    CHECK(std::abs(zeros - 7500.0) < 3.0 * std::sqrt(10000 * 0.75 * 0.25));

    ParticleEnsemble e({Vector::Constant(1, 1.0), Vector::Constant(1, 2.0)});
    const double inc[] = {0.0, neg_inf};
    e.reweight(inc);
    const double z = e.log_z;
    resample(e, ResampleScheme::systematic, rng);
    CHECK(e.x[1](0) == 1.0);
    CHECK(e.log_z == z);
    CHECK(e.weights()[1] == doctest::Approx(0.5));
    CHECK(e.ancestry.size() == 1);
}

TEST_CASE("resampling is unbiased")
{
    Rng rng(8);
    std::vector<double> w(16);
    for (std::size_t i = 0; i < 16; ++i)
        w[i] = static_cast<double>(i + 1);
    const double total = std::accumulate(w.begin(), w.end(), 0.0);
    for (double& v : w)
        v /= total;
    for (auto scheme : {ResampleScheme::multinomial, ResampleScheme::systematic}) {
        std::vector<double> counts(16, 0.0);
        const int reps = 10000;
        for (int r = 0; r < reps; ++r)
            for (auto i : resample_indices(w, 16, scheme, rng))
                counts[i] += 1.0;
        if (scheme == ResampleScheme::multinomial) {
            // chi-square with 15 degrees of freedom, 0.999 quantile 37.7
            double chi2 = 0.0;
            for (std::size_t i = 0; i < 16; ++i) {
                const double expect = reps * 16 * w[i];
                chi2 += (counts[i] - expect) * (counts[i] - expect) / expect;
            }
            CHECK(chi2 < 37.7);
        } else {
            for (std::size_t i = 0; i < 16; ++i)
                CHECK(counts[i] / reps == doctest::Approx(16 * w[i]).epsilon(0.02));
        }
    }
}

TEST_CASE("random walk metropolis")
{
    const auto trunc = orthant_path(1, 0.0, 0.0);
    KernelConfig cfg;
    cfg.step = 50.0;
    Rng rng(3);
    Vector x = Vector::Constant(1, 0.5);
    double ld = trunc->log_density(as_span(x), 1.0);
    for (int k = 0; k < 200; ++k) {
        const bool ok = rwmh_move(*trunc, 1.0, x, ld, cfg, rng);
        CHECK(trunc->log_density(as_span(x), 1.0) > neg_inf);
        (void)ok;
    }

    const StandardNormal target;
    cfg.step = 1e-7;
    std::size_t accepted = 0;
    for (int k = 0; k < 1000; ++k)
        accepted += rwmh_move(target, 0.0, x, ld, cfg, rng);
    CHECK(accepted >= 999);

    cfg.step = 2.4;
    x(0) = 0.0;
    ld = 0.0;
    double s2 = 0.0;
    const int n = 100000;
    for (int k = 0; k < n; ++k) {
        rwmh_move(target, 0.0, x, ld, cfg, rng);
        s2 += x(0) * x(0);
    }
    CHECK(std::abs(s2 / n - 1.0) < 0.05);
}

TEST_CASE("mala")
{
    Rng a(6);
    Rng b(6);
    const StandardNormal flat(true);
    KernelConfig cfg;
    cfg.kind = KernelKind::mala;
    cfg.step = 1.3;
    KernelConfig rw = cfg;
    rw.kind = KernelKind::rwmh;
    Vector xa = Vector::Constant(1, 0.4);
    Vector xb = xa;
    double la = flat.log_density(as_span(xa), 0.0);
    double lb = la;
    for (int k = 0; k < 500; ++k) {
        CHECK(mala_move(flat, 0.0, xa, la, cfg, a) == rwmh_move(flat, 0.0, xb, lb, rw, b));
        CHECK(xa(0) == xb(0));
    }

    const StandardNormal target;
    cfg.step = 1e-6;
    std::size_t accepted = 0;
    for (int k = 0; k < 1000; ++k)
        accepted += mala_move(target, 0.0, xa, la, cfg, a);
    CHECK(accepted >= 999);

    cfg.step = 1.2;
    std::vector<double> chain(100000);
    la = target.log_density(as_span(xa), 0.0);
    for (double& v : chain) {
        mala_move(target, 0.0, xa, la, cfg, a);
        v = xa(0);
    }
    CHECK(std::abs(mean(chain)) < 3.0 * batch_error(chain));

    CHECK_THROWS_AS(validate_kernel(cfg, *orthant_path(2, 0.0, 0.0)), InvalidArgument);
}

TEST_CASE("random walk leaves exact samples invariant")
{
    const StandardNormal target;
    KernelConfig cfg;
    cfg.step = 1.5;
    cfg.moves = 1000;
    std::vector<double> before(1000);
    std::vector<double> after(1000);
    for (std::size_t i = 0; i < 1000; ++i) {
        Rng rng = Rng::stream(12, i);
        Vector x = Vector::Constant(1, rng.normal());
        before[i] = x(0);
        mcmc_moves(target, 0.0, x, cfg, rng);
        after[i] = x(0);
    }
    CHECK(std::abs(mean(after)) < 3.0 * standard_error(after));
    std::vector<double> sq(1000);
    for (std::size_t i = 0; i < 1000; ++i)
        sq[i] = after[i] * after[i];
    CHECK(std::abs(mean(sq) - 1.0) < 3.0 * standard_error(sq));
}

TEST_CASE("flow weights under exact transport are flat")
{
    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::linear());
    const GibbsFlow flow(path, QuadratureRule::simpson(50));
    SamplerConfig cfg;
    cfg.kind = SamplerKind::flow;
    cfg.particles = 256;
    cfg.grid = TimeGrid::uniform(200);
    cfg.resample_threshold = 0.0;
    const auto r = run_sampler(*path, &flow, cfg);
    for (double w : r.ensemble.weights())
        CHECK(std::abs(w * 256 - 1.0) < 0.02);
    CHECK(r.log_z == doctest::Approx(-0.5 * std::log(2.0)).epsilon(0.02));
    CHECK(r.trace.size() == 201);
    CHECK(r.trace.back().ess > 255.0);
}

TEST_CASE("flow weight update bookkeeping")
{
    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::linear());
    ParticleEnsemble e({Vector::Constant(1, 0.3), Vector::Constant(1, -1.0)});
    const auto w0 = e.log_w;
    std::vector<MapStep> same(2);
    same[0].x = e.x[0];
    same[1].x = e.x[1];
    flow_weight_update(e, *path, 0.4, 0.4, same);
    CHECK(e.log_w == w0);

    std::vector<MapStep> one_fails = same;
    one_fails[0].failure = "diverged";
    flow_weight_update(e, *path, 0.4, 0.4, one_fails);
    CHECK(e.weights()[1] == 1.0);
}

TEST_CASE("annealed importance sampling")
{
    const auto cpath = testing::constant_likelihood_path(1, 0.7);
    ParticleEnsemble e({Vector::Constant(1, 0.3), Vector::Constant(1, -1.0)});
    const auto w0 = e.log_w;
    CHECK(ais_weight_update(e, *cpath, 0.2, 0.2) == doctest::Approx(0.0).scale(1.0));
    CHECK(ais_weight_update(e, *cpath, 0.2, 0.6) == doctest::Approx(0.7 * 0.4));
    CHECK(e.log_w[0] == doctest::Approx(w0[0]));

    // one tempering step from the prior to the posterior
    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::linear());
    SamplerConfig cfg;
    cfg.kind = SamplerKind::ais;
    cfg.particles = 100000;
    cfg.grid = TimeGrid::uniform(1);
    cfg.pilot_particles = 0;
    cfg.resample_threshold = 0.0;
    const auto r = run_sampler(*path, nullptr, cfg);
    std::vector<double> lik(cfg.particles);
    Rng dummy(0);
    for (std::size_t i = 0; i < cfg.particles; ++i) {
        Rng rng = Rng::stream(cfg.seed, i, 0, 1);
        double x0;
        path->sample_initial(rng, std::span<double>(&x0, 1));
        lik[i] = std::exp(-0.5 * x0 * x0);
    }
    CHECK(std::abs(std::exp(r.log_z) - 1.0 / std::numbers::sqrt2) < 3.0 * standard_error(lik));
    CHECK(std::exp(r.log_z) == doctest::Approx(mean(lik)).epsilon(1e-10));
}

TEST_CASE("gibbs ais reduces to its parts")
{
    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::linear());
    const ZeroField zero(1);
    SamplerConfig cfg;
    cfg.particles = 64;
    cfg.grid = TimeGrid::uniform(10);
    cfg.pilot_particles = 0;
    cfg.kind = SamplerKind::gibbs_ais;
    const auto g = run_sampler(*path, &zero, cfg);
    cfg.kind = SamplerKind::ais;
    const auto a = run_sampler(*path, nullptr, cfg);
    CHECK(g.log_z == doctest::Approx(a.log_z).epsilon(1e-12));
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(g.ensemble.x[i](0) == a.ensemble.x[i](0));

    const GibbsFlow flow(path, QuadratureRule::simpson(30));
    cfg.kind = SamplerKind::flow;
    cfg.resample_threshold = 0.0;
    const auto f = run_sampler(*path, &flow, cfg);
    cfg.kind = SamplerKind::gibbs_ais;
    cfg.kernel.moves = 1;
    // a vanishing step rejects nothing but moves nowhere
    cfg.kernel.step = 1e-300;
    const auto gf = run_sampler(*path, &flow, cfg);
    CHECK(gf.log_z == doctest::Approx(f.log_z).epsilon(1e-12));
}

TEST_CASE("path sampling estimate")
{
    const auto grid = TimeGrid::uniform(20);
    const std::vector<double> constant(21, 0.7);
    CHECK(path_sampling_logz(constant, grid, [](double) { return 1.0; }) == doctest::Approx(0.7));
    CHECK(path_sampling_logz(constant, grid, [](double) { return 0.0; }) == 0.0);

    const auto path = testing::scalar_gaussian_path(TemperatureSchedule::linear());
    SamplerConfig cfg;
    cfg.kind = SamplerKind::ais;
    cfg.particles = 512;
    cfg.grid = TimeGrid::uniform(40);
    cfg.kernel.step = 1.0;
    cfg.kernel.moves = 2;
    cfg.pilot_particles = 64;
    std::vector<double> est;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
        cfg.seed = seed;
        est.push_back(run_sampler(*path, nullptr, cfg).path_sampling_log_z);
    }
    CHECK(std::abs(mean(est) + 0.5 * std::log(2.0)) < 3.0 * standard_error(est));
}

TEST_CASE("orthant normalizing constant")
{
    for (const auto& [rho, z] : {std::pair{0.0, 0.25}, std::pair{0.5, 1.0 / 3.0}}) {
        const auto path = orthant_path(2, rho, 0.0);
        const TruncatedFlow flow(path, QuadratureRule::simpson(40));
        SamplerConfig cfg;
        cfg.particles = 256;
        cfg.grid = TimeGrid::uniform(50);
        std::vector<double> est;
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            cfg.seed = seed;
            est.push_back(std::exp(run_sampler(*path, &flow, cfg).log_z));
        }
        CHECK(std::abs(mean(est) - z) < 3.0 * standard_error(est));
    }
}

TEST_CASE("sampler results do not depend on the thread count")
{
    const auto path = orthant_path(2, 0.5, 1.0);
    const TruncatedFlow flow(path, QuadratureRule::simpson(20));
    SamplerConfig cfg;
    cfg.particles = 64;
    cfg.grid = TimeGrid::uniform(8);
    cfg.seed = 99;
    cfg.threads = 1;
    const auto one = run_sampler(*path, &flow, cfg);
    cfg.threads = 4;
    const auto four = run_sampler(*path, &flow, cfg);
    CHECK(one.log_z == four.log_z);
    for (std::size_t i = 0; i < 64; ++i)
        CHECK(one.ensemble.x[i] == four.ensemble.x[i]);
}

TEST_CASE("sampler configuration errors")
{
    const auto path = orthant_path(2, 0.0, 0.0);
    SamplerConfig cfg;
    CHECK_THROWS_AS(run_sampler(*path, nullptr, cfg), InvalidArgument);
    cfg.kind = SamplerKind::ais;
    cfg.kernel.kind = KernelKind::mala;
    CHECK_THROWS_AS(run_sampler(*path, nullptr, cfg), InvalidArgument);
    cfg.kernel.kind = KernelKind::rwmh;
    cfg.particles = 0;
    CHECK_THROWS_AS(run_sampler(*path, nullptr, cfg), InvalidArgument);
}

TEST_CASE("conditional smc")
{
    const auto path = orthant_path(1, 0.0, 0.0);
    const TruncatedFlow flow(path, QuadratureRule::simpson(40));
    SamplerConfig cfg;
    cfg.grid = TimeGrid::uniform(8);
    cfg.kernel.step = 0.8;
    cfg.kernel.moves = 2;
    std::vector<Vector> ref;
    for (std::size_t n = 0; n <= 8; ++n)
        ref.push_back(Vector::Constant(1, 0.5 + 0.1 * n));
    Rng rng(21);

    cfg.particles = 1;
    CHECK(conditional_smc(ref, *path, &flow, cfg, rng).trajectory == ref);

    cfg.particles = 16;
    std::vector<double> draws;
    for (int sweep = 0; sweep < 5000; ++sweep) {
        auto r = conditional_smc(ref, *path, &flow, cfg, rng);
        REQUIRE(r.trajectory.size() == 9);
        ref = std::move(r.trajectory);
        draws.push_back(ref.back()(0));
    }
    const double target = std::sqrt(2.0 / std::numbers::pi);
    CHECK(std::abs(mean(draws) - target) < 3.0 * batch_error(draws));

    const auto cpath = testing::constant_likelihood_path(1, 0.0);
    SamplerConfig two;
    two.kind = SamplerKind::ais;
    two.grid = TimeGrid::uniform(2);
    two.particles = 4;
    two.resample_threshold = 0.0;
    std::vector<Vector> cref(3, Vector::Zero(1));
    std::vector<double> picks(4, 0.0);
    for (int k = 0; k < 4000; ++k)
        picks[conditional_smc(cref, *cpath, nullptr, two, rng).selected] += 1.0;
    for (double p : picks)
        CHECK(std::abs(p - 1000.0) < 3.0 * std::sqrt(4000 * 0.25 * 0.75));

    CHECK_THROWS_AS(conditional_smc(std::vector<Vector>(2, Vector::Zero(1)), *path, &flow, cfg, rng),
                    InvalidArgument);
}
