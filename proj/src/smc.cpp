#include "gibbsflow/smc.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "gibbsflow/error.hpp"
#include "gibbsflow/parallel.hpp"

namespace gibbsflow
{

namespace
{

constexpr double neg_inf = -std::numeric_limits<double>::infinity();

// stream purposes
enum : std::uint64_t
{
    purpose_initial = 1,
    purpose_move = 2,
    purpose_resample = 3,
    purpose_pilot = 4,
    purpose_select = 5
};

// particle key used for ensemble-wide draws
constexpr std::uint64_t ensemble_key = ~std::uint64_t{0};

Vector standard_normal(Rng& rng, Eigen::Index d)
{
    Vector z(d);
    for (Eigen::Index k = 0; k < d; ++k)
        z(k) = rng.normal();
    return z;
}

Vector apply_chol(const KernelConfig& cfg, const Vector& z)
{
    return cfg.proposal_chol.size() == 0 ? z : Vector(cfg.proposal_chol.triangularView<Eigen::Lower>() * z);
}

} // namespace

double log_sum_exp(std::span<const double> v)
{
    double m = neg_inf;
    for (double a : v)
        m = std::max(m, a);
    if (m == neg_inf)
        return neg_inf;
    double s = 0.0;
    for (double a : v)
        s += std::exp(a - m);
    return m + std::log(s);
}

std::vector<double> normalized_weights(std::span<const double> log_w)
{
    const double lse = log_sum_exp(log_w);
    if (lse == neg_inf || std::isnan(lse))
        throw EnsembleDied();
    std::vector<double> w(log_w.size());
    for (std::size_t i = 0; i < w.size(); ++i)
        w[i] = std::exp(log_w[i] - lse);
    return w;
}

double ess(std::span<const double> log_w)
{
    const auto w = normalized_weights(log_w);
    double s = 0.0;
    for (double v : w)
        s += v * v;
    return std::clamp(1.0 / s, 1.0, static_cast<double>(w.size()));
}

ParticleEnsemble::ParticleEnsemble(std::vector<Vector> positions)
    : x(std::move(positions)), log_w(x.size(), -std::log(static_cast<double>(x.size())))
{
}

double ParticleEnsemble::reweight(std::span<const double> increments)
{
    if (increments.size() != log_w.size())
        throw InvalidArgument("one increment per particle required");
    std::vector<double> next(log_w.size());
    for (std::size_t i = 0; i < next.size(); ++i) {
        const double inc = std::isnan(increments[i]) ? neg_inf : increments[i];
        next[i] = log_w[i] + inc;
    }
    const double lse = log_sum_exp(next);
    if (lse == neg_inf)
        throw EnsembleDied();
    for (std::size_t i = 0; i < next.size(); ++i)
        log_w[i] = next[i] - lse;
    log_z += lse;
    return lse;
}

double flow_weight_update(ParticleEnsemble& ensemble, const DensityPath& path, double t0, double t1,
                          const std::vector<MapStep>& steps)
{
    if (steps.size() != ensemble.size())
        throw InvalidArgument("one map step per particle required");
    std::vector<double> inc(ensemble.size(), neg_inf);
    for (std::size_t i = 0; i < ensemble.size(); ++i) {
        if (steps[i].failed() || ensemble.log_w[i] == neg_inf)
            continue;
        const double before = path.log_density(as_span(ensemble.x[i]), t0);
        ensemble.x[i] = steps[i].x;
        inc[i] = path.log_density(as_span(ensemble.x[i]), t1) - before + steps[i].log_det;
    }
    return ensemble.reweight(inc);
}

double ais_weight_update(ParticleEnsemble& ensemble, const DensityPath& path, double t0, double t1)
{
    std::vector<double> inc(ensemble.size(), neg_inf);
    for (std::size_t i = 0; i < ensemble.size(); ++i)
        if (ensemble.log_w[i] != neg_inf)
            inc[i] = path.log_density_ratio(as_span(ensemble.x[i]), t0, t1);
    return ensemble.reweight(inc);
}

std::vector<std::size_t> resample_indices(std::span<const double> w, std::size_t n, ResampleScheme scheme, Rng& rng)
{
    if (w.empty())
        throw InvalidArgument("cannot resample an empty ensemble");
    std::vector<double> u(n);
    if (scheme == ResampleScheme::systematic) {
        const double u0 = rng.uniform();
        for (std::size_t k = 0; k < n; ++k)
            u[k] = (static_cast<double>(k) + u0) / static_cast<double>(n);
    } else {
        for (double& v : u)
            v = rng.uniform();
        std::sort(u.begin(), u.end());
    }
    std::vector<std::size_t> idx(n);
    double cum = w[0];
    std::size_t j = 0;
    for (std::size_t k = 0; k < n; ++k) {
        while (u[k] > cum && j + 1 < w.size())
            cum += w[++j];
        idx[k] = j;
    }
    // rounding may leave a zero-weight tail index; step back to a live one
    for (auto& i : idx)
        while (w[i] == 0.0 && i > 0)
            --i;
    return idx;
}

void resample(ParticleEnsemble& ensemble, ResampleScheme scheme, Rng& rng)
{
    const auto w = ensemble.weights();
    const auto idx = resample_indices(w, ensemble.size(), scheme, rng);
    std::vector<Vector> x(idx.size());
    for (std::size_t k = 0; k < idx.size(); ++k)
        x[k] = ensemble.x[idx[k]];
    ensemble.x = std::move(x);
    std::fill(ensemble.log_w.begin(), ensemble.log_w.end(), -std::log(static_cast<double>(ensemble.size())));
    ensemble.ancestry.push_back(idx);
}

void validate_kernel(const KernelConfig& cfg, const DensityPath& path)
{
    if (!(cfg.step > 0.0))
        throw InvalidArgument("kernel step must be positive");
    if (cfg.moves == 0)
        throw InvalidArgument("kernel needs at least one move");
    if (cfg.kind == KernelKind::mala && path.has_hard_constraints())
        throw InvalidArgument("mala is not available for paths with hard constraints");
    const auto d = static_cast<Eigen::Index>(path.dimension());
    if (cfg.proposal_chol.size() != 0 && (cfg.proposal_chol.rows() != d || cfg.proposal_chol.cols() != d))
        throw InvalidArgument("proposal covariance has the wrong dimension");
}

MoveStats& MoveStats::operator+=(const MoveStats& o)
{
    proposed += o.proposed;
    accepted += o.accepted;
    evaluations += o.evaluations;
    return *this;
}

bool rwmh_move(const DensityPath& path, double t, Vector& x, double& log_density, const KernelConfig& cfg, Rng& rng)
{
    const Vector prop = x + cfg.step * apply_chol(cfg, standard_normal(rng, x.size()));
    const double lp = path.log_density(as_span(prop), t);
    if (lp == neg_inf || std::isnan(lp))
        return false;
    if (std::log(rng.uniform()) < lp - log_density) {
        x = prop;
        log_density = lp;
        return true;
    }
    return false;
}

bool mala_move(const DensityPath& path, double t, Vector& x, double& log_density, const KernelConfig& cfg, Rng& rng)
{
    const auto d = x.size();
    const double eps = cfg.step;
    const bool plain = cfg.proposal_chol.size() == 0;
    auto drift = [&](const Vector& at) {
        Vector g(d);
        path.grad_log_density(as_span(at), t, as_span(g));
        if (!plain)
            g = cfg.proposal_chol * (cfg.proposal_chol.transpose() * g);
        return Vector(at + 0.5 * eps * eps * g);
    };
    // log q(to | from) up to a constant
    auto log_q = [&](const Vector& to, const Vector& mean) {
        Vector r = to - mean;
        if (!plain)
            r = cfg.proposal_chol.triangularView<Eigen::Lower>().solve(r);
        return -0.5 * r.squaredNorm() / (eps * eps);
    };
    const Vector mean_x = drift(x);
    const Vector prop = mean_x + eps * apply_chol(cfg, standard_normal(rng, d));
    const double lp = path.log_density(as_span(prop), t);
    if (lp == neg_inf || std::isnan(lp))
        return false;
    const Vector mean_prop = drift(prop);
    const double log_alpha = lp - log_density + log_q(x, mean_prop) - log_q(prop, mean_x);
    if (std::log(rng.uniform()) < log_alpha) {
        x = prop;
        log_density = lp;
        return true;
    }
    return false;
}

MoveStats mcmc_moves(const DensityPath& path, double t, Vector& x, const KernelConfig& cfg, Rng& rng)
{
    MoveStats s;
    double ld = path.log_density(as_span(x), t);
    s.evaluations = 1;
    if (ld == neg_inf || std::isnan(ld))
        return s;
    for (std::size_t k = 0; k < cfg.moves; ++k) {
        const bool ok = cfg.kind == KernelKind::mala ? mala_move(path, t, x, ld, cfg, rng)
                                                     : rwmh_move(path, t, x, ld, cfg, rng);
        ++s.proposed;
        s.accepted += ok;
        s.evaluations += cfg.kind == KernelKind::mala ? 3 : 1;
    }
    return s;
}

double path_sampling_logz(std::span<const double> expected_loglik, const TimeGrid& grid,
                          const std::function<double(double)>& temperature_derivative)
{
    if (expected_loglik.size() != grid.steps() + 1)
        throw InvalidArgument("one expected log-likelihood per grid knot required");
    auto term = [&](std::size_t n) {
        const double dl = temperature_derivative(grid[n]);
        return dl == 0.0 ? 0.0 : dl * expected_loglik[n];
    };
    double s = 0.0;
    for (std::size_t n = 1; n <= grid.steps(); ++n)
        s += 0.5 * grid.dt(n) * (term(n - 1) + term(n));
    return s;
}

const char* to_string(SamplerKind kind)
{
    switch (kind) {
    case SamplerKind::flow:
        return "flow";
    case SamplerKind::ais:
        return "ais";
    case SamplerKind::gibbs_ais:
        return "gibbs_ais";
    }
    return "unknown";
}

const char* to_string(ResampleScheme scheme)
{
    return scheme == ResampleScheme::systematic ? "systematic" : "multinomial";
}

const char* to_string(KernelKind kind) { return kind == KernelKind::mala ? "mala" : "rwmh"; }

namespace
{

struct Propagation
{
    std::vector<double> increments;
    std::size_t evaluations = 0;
    std::size_t failed = 0;
};

// Move every live particle from t0 to t1 and compute its log-weight increment.
Propagation propagate(ParticleEnsemble& e, const DensityPath& path, const VelocityField* field,
                      const SamplerConfig& cfg, double t0, double t1, unsigned threads)
{
    const std::size_t n = e.size();
    Propagation out;
    out.increments.assign(n, neg_inf);
    std::vector<std::size_t> evals(n, 0);
    std::vector<char> failed(n, 0);
    if (cfg.kind == SamplerKind::ais) {
        parallel_for(n, threads, [&](std::size_t i) {
            if (e.log_w[i] == neg_inf)
                return;
            out.increments[i] = path.log_density_ratio(as_span(e.x[i]), t0, t1);
            evals[i] = 1;
        });
    } else {
        parallel_for(n, threads, [&](std::size_t i) {
            if (e.log_w[i] == neg_inf)
                return;
            const double before = path.log_density(as_span(e.x[i]), t0);
            const auto step = flow_map_step(*field, as_span(e.x[i]), t0, t1, cfg.flow);
            evals[i] = step.evaluations + 2;
            if (step.failed()) {
                failed[i] = 1;
                return;
            }
            e.x[i] = step.x;
            out.increments[i] = path.log_density(as_span(e.x[i]), t1) - before + step.log_det;
        });
    }
    for (std::size_t i = 0; i < n; ++i) {
        out.evaluations += evals[i];
        out.failed += static_cast<std::size_t>(failed[i]);
    }
    return out;
}

double weighted_loglik(const ParticleEnsemble& e, const DensityPath& path)
{
    const auto w = e.weights();
    double s = 0.0;
    for (std::size_t i = 0; i < e.size(); ++i) {
        if (w[i] == 0.0)
            continue;
        const auto ll = path.log_likelihood(as_span(e.x[i]));
        if (!ll)
            return std::numeric_limits<double>::quiet_NaN();
        s += w[i] * *ll;
    }
    return s;
}

MoveStats move_all(ParticleEnsemble& e, const DensityPath& path, double t, const KernelConfig& kernel,
                   std::uint64_t seed, std::size_t step, std::uint64_t purpose, unsigned threads,
                   std::size_t first = 0)
{
    std::vector<MoveStats> stats(e.size());
    parallel_for(e.size(), threads, [&](std::size_t i) {
        if (i < first || e.log_w[i] == neg_inf)
            return;
        Rng rng = Rng::stream(seed, i, step, purpose);
        stats[i] = mcmc_moves(path, t, e.x[i], kernel, rng);
    });
    MoveStats total;
    for (const auto& s : stats)
        total += s;
    return total;
}

std::vector<Vector> initial_positions(const DensityPath& path, std::size_t n, std::uint64_t seed,
                                      std::uint64_t purpose)
{
    std::vector<Vector> x(n, Vector(static_cast<Eigen::Index>(path.dimension())));
    for (std::size_t i = 0; i < n; ++i) {
        Rng rng = Rng::stream(seed, i, 0, purpose);
        path.sample_initial(rng, as_span(x[i]));
    }
    return x;
}

void check_sampler(const DensityPath& path, const VelocityField* field, const SamplerConfig& cfg)
{
    if (cfg.particles == 0)
        throw InvalidArgument("sampler needs at least one particle");
    if (cfg.kind != SamplerKind::ais) {
        if (!field)
            throw InvalidArgument(std::string(to_string(cfg.kind)) + " sampler needs a velocity field");
        if (field->dimension() != path.dimension())
            throw InvalidArgument("velocity field and path dimensions differ");
    }
    if (cfg.kind != SamplerKind::flow)
        validate_kernel(cfg.kernel, path);
    if (cfg.resample_threshold < 0.0 || cfg.resample_threshold > 1.0)
        throw InvalidArgument("resample threshold must lie in [0, 1]");
}

} // namespace

std::vector<double> pilot_kernel_steps(const DensityPath& path, const VelocityField* field, const SamplerConfig& cfg)
{
    check_sampler(path, field, cfg);
    const std::size_t m = cfg.grid.steps();
    std::vector<double> steps(m, cfg.kernel.step);
    if (cfg.kind == SamplerKind::flow || cfg.pilot_particles == 0)
        return steps;
    const unsigned threads = resolve_threads(cfg.threads);
    const std::uint64_t seed = cfg.seed ^ 0x9e3779b97f4a7c15ULL;
    ParticleEnsemble e(initial_positions(path, cfg.pilot_particles, seed, purpose_initial));
    KernelConfig kernel = cfg.kernel;
    kernel.moves = 1;
    double log_step = std::log(cfg.kernel.step);
    constexpr std::size_t rounds = 4;
    for (std::size_t n = 1; n <= m; ++n) {
        const double t0 = cfg.grid[n - 1];
        const double t1 = cfg.grid[n];
        auto prop = propagate(e, path, field, cfg, t0, t1, threads);
        try {
            e.reweight(prop.increments);
        } catch (const EnsembleDied&) {
            break;
        }
        if (e.ess() < 0.5 * static_cast<double>(e.size())) {
            Rng rng = Rng::stream(seed, ensemble_key, n, purpose_resample);
            resample(e, cfg.scheme, rng);
        }
        for (std::size_t r = 0; r < rounds; ++r) {
            kernel.step = std::exp(log_step);
            const auto s = move_all(e, path, t1, kernel, seed, n * rounds + r, purpose_pilot, threads);
            log_step += std::pow(static_cast<double>(r + 1), -0.6) * (s.rate() - cfg.kernel.target);
        }
        steps[n - 1] = std::exp(log_step);
    }
    return steps;
}

SamplerResult run_sampler(const DensityPath& path, const VelocityField* field, const SamplerConfig& cfg,
                          const std::vector<Vector>& initial)
{
    check_sampler(path, field, cfg);
    const unsigned threads = resolve_threads(cfg.threads);
    const std::size_t m = cfg.grid.steps();
    SamplerResult out;
    out.kernel_steps = cfg.kind == SamplerKind::flow ? std::vector<double>(m, cfg.kernel.step)
                                                     : pilot_kernel_steps(path, field, cfg);

    if (!initial.empty() && initial.size() != cfg.particles)
        throw InvalidArgument("initial positions must match the particle count");
    ParticleEnsemble& e = out.ensemble;
    e = ParticleEnsemble(initial.empty() ? initial_positions(path, cfg.particles, cfg.seed, purpose_initial)
                                         : initial);

    std::vector<double> expected(m + 1, std::numeric_limits<double>::quiet_NaN());
    expected[0] = weighted_loglik(e, path);
    out.trace.push_back({0, 0.0, e.ess(), 0.0, 0.0, 0, 0, false, expected[0]});

    KernelConfig kernel = cfg.kernel;
    for (std::size_t n = 1; n <= m; ++n) {
        const double t0 = cfg.grid[n - 1];
        const double t1 = cfg.grid[n];
        StepRecord rec;
        rec.step = n;
        rec.t = t1;
        auto prop = propagate(e, path, field, cfg, t0, t1, threads);
        rec.evaluations = prop.evaluations;
        rec.failed = prop.failed;
        try {
            e.reweight(prop.increments);
        } catch (const EnsembleDied&) {
            out.died = true;
            e.log_z = neg_inf;
            rec.ess = 0.0;
            rec.log_z = neg_inf;
            out.evaluations += rec.evaluations;
            out.trace.push_back(rec);
            break;
        }
        e.step = n;
        expected[n] = weighted_loglik(e, path);
        rec.expected_loglik = expected[n];
        rec.ess = e.ess();
        if (cfg.resample_threshold > 0.0 && rec.ess < cfg.resample_threshold * static_cast<double>(e.size())) {
            Rng rng = Rng::stream(cfg.seed, ensemble_key, n, purpose_resample);
            resample(e, cfg.scheme, rng);
            rec.resampled = true;
        }
        if (cfg.kind != SamplerKind::flow) {
            kernel.step = out.kernel_steps[n - 1];
            const auto s = move_all(e, path, t1, kernel, cfg.seed, n, purpose_move, threads);
            rec.acceptance = s.rate();
            rec.evaluations += s.evaluations;
        }
        rec.log_z = e.log_z;
        out.evaluations += rec.evaluations;
        out.trace.push_back(rec);
    }
    out.log_z = e.log_z;
    if (!out.died && path.temperature_derivative(0.0))
        out.path_sampling_log_z =
            path_sampling_logz(expected, cfg.grid, [&path](double t) { return *path.temperature_derivative(t); });
    else
        out.path_sampling_log_z = std::numeric_limits<double>::quiet_NaN();
    return out;
}

ConditionalResult conditional_smc(const std::vector<Vector>& reference, const DensityPath& path,
                                  const VelocityField* field, const SamplerConfig& cfg, Rng& rng,
                                  const std::vector<double>& kernel_steps)
{
    check_sampler(path, field, cfg);
    const std::size_t m = cfg.grid.steps();
    const auto d = static_cast<Eigen::Index>(path.dimension());
    if (reference.size() != m + 1)
        throw InvalidArgument("reference trajectory must have one state per grid knot");
    for (const auto& r : reference)
        if (r.size() != d)
            throw InvalidArgument("reference trajectory has the wrong dimension");
    if (!kernel_steps.empty() && kernel_steps.size() != m)
        throw InvalidArgument("one kernel step per time step required");

    ConditionalResult out;
    const std::size_t n_particles = cfg.particles;
    if (n_particles == 1) {
        out.trajectory = reference;
        out.ensemble = ParticleEnsemble({reference.back()});
        return out;
    }
    const unsigned threads = resolve_threads(cfg.threads);
    const std::uint64_t seed = rng();
    auto x0 = initial_positions(path, n_particles, seed, purpose_initial);
    x0[0] = reference[0];
    ParticleEnsemble e(std::move(x0));
    std::vector<std::vector<Vector>> hist(n_particles);
    for (std::size_t i = 0; i < n_particles; ++i) {
        hist[i].reserve(m + 1);
        hist[i].push_back(e.x[i]);
    }

    KernelConfig kernel = cfg.kernel;
    for (std::size_t n = 1; n <= m; ++n) {
        const double t0 = cfg.grid[n - 1];
        const double t1 = cfg.grid[n];
        auto prop = propagate(e, path, field, cfg, t0, t1, threads);
        e.reweight(prop.increments); // the pinned particle keeps the ensemble alive
        if (cfg.resample_threshold > 0.0 && e.ess() < cfg.resample_threshold * static_cast<double>(n_particles)) {
            Rng r = Rng::stream(seed, ensemble_key, n, purpose_resample);
            const auto w = e.weights();
            auto idx = resample_indices(w, n_particles - 1, ResampleScheme::multinomial, r);
            idx.insert(idx.begin(), 0);
            std::vector<Vector> x(n_particles);
            std::vector<std::vector<Vector>> h(n_particles);
            for (std::size_t k = 0; k < n_particles; ++k) {
                x[k] = e.x[idx[k]];
                h[k] = hist[idx[k]];
            }
            e.x = std::move(x);
            hist = std::move(h);
            std::fill(e.log_w.begin(), e.log_w.end(), -std::log(static_cast<double>(n_particles)));
            e.ancestry.push_back(std::move(idx));
        }
        if (cfg.kind != SamplerKind::flow) {
            kernel.step = kernel_steps.empty() ? cfg.kernel.step : kernel_steps[n - 1];
            move_all(e, path, t1, kernel, seed, n, purpose_move, threads, 1);
        }
        e.x[0] = reference[n];
        for (std::size_t i = 0; i < n_particles; ++i)
            hist[i].push_back(e.x[i]);
        e.step = n;
    }
    const auto w = e.weights();
    Rng pick = Rng::stream(seed, ensemble_key, m + 1, purpose_select);
    out.selected = resample_indices(w, 1, ResampleScheme::multinomial, pick)[0];
    out.trajectory = std::move(hist[out.selected]);
    out.ensemble = std::move(e);
    return out;
}

} // namespace gibbsflow
