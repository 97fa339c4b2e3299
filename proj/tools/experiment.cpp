#include "experiment.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <limits>
#include <numbers>
#include <sstream>

#include <CLI11.hpp>

#include "gibbsflow/gibbs_flow.hpp"
#include "gibbsflow/models.hpp"
#include "gibbsflow/parallel.hpp"
#include "gibbsflow/reference.hpp"
#include "gibbsflow/truncated_flow.hpp"

namespace gibbsflow::cli
{

namespace fs = std::filesystem;

namespace
{

// stream keys for draws made by the driver rather than the sampler
constexpr std::uint64_t key_replicate = 0x7265706c;
constexpr std::uint64_t key_probe = 0x70726f62;
constexpr std::uint64_t key_lhs = 0x6c6873;

void check_keys(const json& j, std::initializer_list<const char*> allowed, const std::string& where)
{
    if (!j.is_object())
        throw ConfigError(where + " must be an object");
    for (const auto& [key, value] : j.items()) {
        if (std::none_of(allowed.begin(), allowed.end(), [&](const char* a) { return key == a; }))
            throw ConfigError("unknown key '" + key + "' in " + where);
    }
}

double number(const json& j, const char* key, double fallback, const std::string& where)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_number())
        throw ConfigError(where + "." + key + " must be a number");
    return j[key].get<double>();
}

std::size_t count(const json& j, const char* key, std::size_t fallback, const std::string& where)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_number_unsigned())
        throw ConfigError(where + "." + key + " must be a non-negative integer");
    return j[key].get<std::size_t>();
}

std::string text(const json& j, const char* key, const std::string& fallback, const std::string& where)
{
    if (!j.contains(key))
        return fallback;
    if (!j[key].is_string())
        throw ConfigError(where + "." + key + " must be a string");
    return j[key].get<std::string>();
}

std::vector<double> numbers(const json& j, const std::string& where)
{
    if (!j.is_array())
        throw ConfigError(where + " must be an array of numbers");
    std::vector<double> out;
    for (const auto& v : j) {
        if (!v.is_number())
            throw ConfigError(where + " must be an array of numbers");
        out.push_back(v.get<double>());
    }
    return out;
}

Vector vector_of(const std::vector<double>& v) { return Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())); }

// a number is a multiple of the identity, a flat array a diagonal, nested arrays a full matrix
Matrix matrix(const json& j, Eigen::Index d, const std::string& where)
{
    if (j.is_number())
        return j.get<double>() * Matrix::Identity(d, d);
    if (!j.is_array() || static_cast<Eigen::Index>(j.size()) != d)
        throw ConfigError(where + " must be a number or have " + std::to_string(d) + " entries");
    if (j[0].is_number())
        return vector_of(numbers(j, where)).asDiagonal();
    Matrix m(d, d);
    for (Eigen::Index r = 0; r < d; ++r) {
        const auto row = numbers(j[static_cast<std::size_t>(r)], where);
        if (static_cast<Eigen::Index>(row.size()) != d)
            throw ConfigError(where + " must be square");
        for (Eigen::Index c = 0; c < d; ++c)
            m(r, c) = row[static_cast<std::size_t>(c)];
    }
    return m;
}

TemperatureSchedule parse_schedule(const json& config)
{
    if (!config.contains("schedule"))
        return TemperatureSchedule::linear();
    const json& s = config["schedule"];
    if (s.is_string()) {
        if (s == "linear")
            return TemperatureSchedule::linear();
        throw ConfigError("schedule must be \"linear\" or an object");
    }
    check_keys(s, {"kind", "exponent"}, "schedule");
    const auto kind = text(s, "kind", "linear", "schedule");
    if (kind == "linear")
        return TemperatureSchedule::linear();
    if (kind == "power")
        return TemperatureSchedule::power(number(s, "exponent", 1.0, "schedule"));
    throw ConfigError("unknown schedule kind '" + kind + "'");
}

QuadratureRule parse_quadrature(const json& config, std::size_t default_points)
{
    if (!config.contains("quadrature"))
        return QuadratureRule::simpson(default_points);
    const json& q = config["quadrature"];
    check_keys(q, {"kind", "points"}, "quadrature");
    const auto kind = text(q, "kind", "simpson", "quadrature");
    const auto points = count(q, "points", default_points, "quadrature");
    if (kind == "simpson")
        return QuadratureRule::simpson(points);
    if (kind == "trapezoid")
        return QuadratureRule::trapezoid(points);
    throw ConfigError("unknown quadrature kind '" + kind + "'");
}

ProbeOptions parse_probe(const json& config, std::size_t& starts)
{
    ProbeOptions o;
    o.tolerance = 3e-6;
    starts = 4;
    if (!config.contains("probe"))
        return o;
    const json& p = config["probe"];
    check_keys(p, {"starts", "tolerance", "max_step", "initial_step"}, "probe");
    starts = count(p, "starts", starts, "probe");
    o.tolerance = number(p, "tolerance", o.tolerance, "probe");
    o.max_step = number(p, "max_step", o.max_step, "probe");
    o.initial_step = number(p, "initial_step", o.initial_step, "probe");
    if (starts == 0)
        throw ConfigError("probe.starts must be positive");
    return o;
}

void build_model(const json& config, Experiment& e, const fs::path& base_dir)
{
    if (!config.contains("model"))
        throw ConfigError("missing model");
    const json& m = config["model"];
    if (!m.is_object() || !m.contains("name") || !m["name"].is_string())
        throw ConfigError("model.name is required");
    e.model_name = m["name"].get<std::string>();
    const auto jacobian = [&] {
        std::string v = "exact_discrete";
        if (config.contains("sampler") && config["sampler"].contains("flow"))
            v = text(config["sampler"]["flow"], "jacobian", v, "sampler.flow");
        if (v != "exact_discrete" && v != "endpoint_identity")
            throw ConfigError("sampler.flow.jacobian must be exact_discrete or endpoint_identity");
        return v == "exact_discrete";
    }();

    if (e.model_name == "orthant") {
        check_keys(m, {"name", "dimension", "rho", "xi"}, "model");
        if (config.contains("schedule"))
            throw ConfigError("schedule does not apply to truncated targets");
        const auto d = count(m, "dimension", 2, "model");
        const double rho = number(m, "rho", 0.0, "model");
        const double xi = number(m, "xi", 0.0, "model");
        const auto target = TruncatedGaussianTarget::orthant(d, rho, xi);
        auto path = std::make_shared<TruncatedGaussianPath>(GaussianDensity(target.mean, target.cov),
                                                            default_truncation_schedule(target));
        e.path = path;
        e.field = std::make_shared<TruncatedFlow>(path, parse_quadrature(config, 40),
                                                  jacobian ? TruncatedFlow::Diagonal::exact_discrete
                                                           : TruncatedFlow::Diagonal::endpoint_identity);
        if (d == 1)
            e.reference_z = 0.5 * std::erfc(-xi / std::numbers::sqrt2);
        else if (d == 2 && xi == 0.0)
            e.reference_z = 0.25 + std::asin(rho) / (2.0 * std::numbers::pi);
        return;
    }

    std::shared_ptr<const TargetModel> model;
    std::size_t default_points = 50;
    if (e.model_name == "mixture") {
        check_keys(m, {"name", "components", "truth", "sd", "observations", "dataset_seed", "data", "half_width"},
                   "model");
        const auto d = count(m, "components", 4, "model");
        e.truth = m.contains("truth") ? numbers(m["truth"], "model.truth") : std::vector<double>{-3.0, 0.0, 3.0, 6.0};
        if (e.truth.size() != d)
            throw ConfigError("model.truth must have one entry per component");
        const double sd = number(m, "sd", 0.55, "model");
        std::vector<double> y;
        if (m.contains("data")) {
            if (m.contains("observations") || m.contains("dataset_seed"))
                throw ConfigError("model.data excludes observations and dataset_seed");
            fs::path file = text(m, "data", "", "model");
            if (file.is_relative())
                file = base_dir / file;
            std::ifstream is(file);
            if (!is)
                throw ConfigError("cannot open data file " + file.string());
            y = read_observations_csv(is);
        } else {
            const auto obs = count(m, "observations", 100, "model");
            const auto seed = static_cast<std::uint64_t>(count(m, "dataset_seed", mixture_dataset_seed, "model"));
            y = generate_mixture_data(e.truth, sd, obs, seed);
        }
        model = std::make_shared<MixtureModel>(d, std::move(y), sd, number(m, "half_width", 10.0, "model"));
    } else if (e.model_name == "gaussian") {
        check_keys(m, {"name", "prior_mean", "prior_cov", "lik_cov", "observation", "box_sds"}, "model");
        if (!m.contains("prior_mean"))
            throw ConfigError("model.prior_mean is required");
        const Vector mu0 = vector_of(numbers(m["prior_mean"], "model.prior_mean"));
        const auto d = mu0.size();
        const Matrix cov0 = matrix(m.value("prior_cov", json(1.0)), d, "model.prior_cov");
        const Matrix cov_l = matrix(m.value("lik_cov", json(1.0)), d, "model.lik_cov");
        const Vector y = m.contains("observation") ? vector_of(numbers(m["observation"], "model.observation"))
                                                   : Vector::Zero(d);
        if (y.size() != d)
            throw ConfigError("model.observation must match prior_mean");
        model = std::make_shared<GaussianLinearModel>(mu0, cov0, cov_l, y, number(m, "box_sds", 8.0, "model"));
    } else {
        throw ConfigError("unknown model '" + e.model_name + "'");
    }
    auto tempered = std::make_shared<TemperedPath>(model, parse_schedule(config));
    e.tempered = tempered;
    e.path = tempered;
    e.field = std::make_shared<GibbsFlow>(tempered, parse_quadrature(config, default_points),
                                          jacobian ? JacobianDiagonal::exact_discrete
                                                   : JacobianDiagonal::endpoint_identity);
}

Matrix prior_chol(const Experiment& e)
{
    if (const auto* t = dynamic_cast<const TruncatedGaussianPath*>(e.path.get()))
        return t->prior().chol();
    if (e.tempered)
        if (const auto* g = dynamic_cast<const GaussianLinearModel*>(&e.tempered->model()))
            return g->prior_cov().llt().matrixL();
    throw ConfigError("kernel covariance \"prior\" needs a gaussian prior");
}

void build_sampler(const json& config, Experiment& e)
{
    SamplerConfig& s = e.sampler;
    const json sampler = config.value("sampler", json::object());
    check_keys(sampler, {"kind", "particles", "initial", "resample", "kernel", "flow"}, "sampler");
    const auto kind = text(sampler, "kind", "gibbs_ais", "sampler");
    if (kind == "flow")
        s.kind = SamplerKind::flow;
    else if (kind == "ais")
        s.kind = SamplerKind::ais;
    else if (kind == "gibbs_ais")
        s.kind = SamplerKind::gibbs_ais;
    else
        throw ConfigError("unknown sampler kind '" + kind + "'");
    s.particles = count(sampler, "particles", s.particles, "sampler");
    if (s.particles == 0)
        throw ConfigError("sampler.particles must be positive");
    const auto initial = text(sampler, "initial", "prior", "sampler");
    if (initial != "prior" && initial != "latin_hypercube")
        throw ConfigError("sampler.initial must be prior or latin_hypercube");
    e.latin_hypercube = initial == "latin_hypercube";
    if (e.latin_hypercube) {
        if (!e.tempered)
            throw ConfigError("latin hypercube starts need a tempered model");
        for (const auto& iv : e.tempered->model().support())
            if (!std::isfinite(iv.lo) || !std::isfinite(iv.hi))
                throw ConfigError("latin hypercube starts need a bounded prior support");
    }

    const json resample = sampler.value("resample", json::object());
    check_keys(resample, {"scheme", "threshold"}, "sampler.resample");
    const auto scheme = text(resample, "scheme", "systematic", "sampler.resample");
    if (scheme == "systematic")
        s.scheme = ResampleScheme::systematic;
    else if (scheme == "multinomial")
        s.scheme = ResampleScheme::multinomial;
    else
        throw ConfigError("unknown resampling scheme '" + scheme + "'");
    s.resample_threshold = number(resample, "threshold", s.resample_threshold, "sampler.resample");
    if (s.resample_threshold < 0.0 || s.resample_threshold > 1.0)
        throw ConfigError("sampler.resample.threshold must lie in [0, 1]");

    const json kernel = sampler.value("kernel", json::object());
    check_keys(kernel, {"kind", "step", "moves", "covariance", "target", "pilot_particles"}, "sampler.kernel");
    const auto kk = text(kernel, "kind", "rwmh", "sampler.kernel");
    if (kk == "rwmh")
        s.kernel.kind = KernelKind::rwmh;
    else if (kk == "mala")
        s.kernel.kind = KernelKind::mala;
    else
        throw ConfigError("unknown kernel kind '" + kk + "'");
    s.kernel.step = number(kernel, "step", s.kernel.step, "sampler.kernel");
    s.kernel.moves = count(kernel, "moves", s.kernel.moves, "sampler.kernel");
    s.kernel.target = number(kernel, "target", s.kernel.target, "sampler.kernel");
    s.pilot_particles = count(kernel, "pilot_particles", s.pilot_particles, "sampler.kernel");
    const auto cov = text(kernel, "covariance", "identity", "sampler.kernel");
    if (cov == "prior")
        s.kernel.proposal_chol = prior_chol(e);
    else if (cov != "identity")
        throw ConfigError("sampler.kernel.covariance must be identity or prior");
    try {
        validate_kernel(s.kernel, *e.path);
    } catch (const InvalidArgument& err) {
        throw ConfigError(err.what());
    }

    const json flow = sampler.value("flow", json::object());
    check_keys(flow, {"max_halvings", "divergence_cap", "max_stretch", "jacobian"}, "sampler.flow");
    s.flow.max_halvings = static_cast<int>(count(flow, "max_halvings", 6, "sampler.flow"));
    s.flow.divergence_cap = number(flow, "divergence_cap", s.flow.divergence_cap, "sampler.flow");
    s.flow.max_stretch = number(flow, "max_stretch", s.flow.max_stretch, "sampler.flow");
}

std::vector<ProbeResult> run_probes(const Experiment& e, unsigned threads)
{
    std::vector<ProbeResult> probes(e.probe_starts);
    const std::size_t d = e.path->dimension();
    parallel_for(e.probe_starts, threads, [&](std::size_t k) {
        Rng rng = Rng::stream(e.seed, key_probe, k);
        Vector x0(static_cast<Eigen::Index>(d));
        e.path->sample_initial(rng, as_span(x0));
        probes[k] = adaptive_probe(*e.field, as_span(x0), e.probe);
    });
    return probes;
}

TimeGrid build_grid(const json& config, const Experiment& e)
{
    const json grid = config.value("grid", json::object());
    check_keys(grid, {"kind", "steps", "exponent", "breakpoints"}, "grid");
    const auto kind = text(grid, "kind", "uniform", "grid");
    const auto steps = count(grid, "steps", 50, "grid");
    if (steps == 0)
        throw ConfigError("grid.steps must be positive");
    if (kind != "power" && grid.contains("exponent"))
        throw ConfigError("grid.exponent only applies to power grids");
    if (kind != "piecewise_linear" && grid.contains("breakpoints"))
        throw ConfigError("grid.breakpoints only applies to piecewise_linear grids");
    if (kind == "uniform")
        return TimeGrid::uniform(steps);
    if (kind == "power")
        return TimeGrid::power(steps, number(grid, "exponent", 1.0, "grid"));
    if (kind == "piecewise_linear") {
        std::vector<std::pair<double, double>> points;
        for (const auto& bp : grid.value("breakpoints", json::array())) {
            const auto v = numbers(bp, "grid.breakpoints");
            if (v.size() != 2)
                throw ConfigError("grid.breakpoints entries must be [s, t] pairs");
            points.emplace_back(v[0], v[1]);
        }
        return TimeGrid::piecewise_linear(steps, points);
    }
    if (kind == "probe")
        return schedule_from_probe(run_probes(e, 1), steps);
    throw ConfigError("unknown grid kind '" + kind + "'");
}

std::string format(double v)
{
    char buf[64];
    const auto r = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, r.ptr);
}

json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

void write_file(const fs::path& file, const std::string& content)
{
    std::ofstream os(file, std::ios::binary);
    if (!os)
        throw Error("cannot write " + file.string());
    os << content;
    if (!os)
        throw Error("cannot write " + file.string());
}

struct Cell
{
    json params;
    Experiment experiment;
    fs::path dir;
};

std::vector<Cell> prepare(const Options& options, fs::path& out)
{
    const json config = load_config(options.config);
    fs::path base = options.config.parent_path();
    std::vector<Cell> cells;
    const auto expanded = expand_sweep(config);
    for (std::size_t c = 0; c < expanded.size(); ++c) {
        Cell cell{expanded[c].first, build_experiment(expanded[c].second, options.seed, base), {}};
        char name[32];
        std::snprintf(name, sizeof name, "cell-%03zu", c);
        cell.dir = expanded.size() == 1 ? options.out : options.out / name;
        cells.push_back(std::move(cell));
    }
    out = options.out;
    return cells;
}

void ensure_dir(const fs::path& dir)
{
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec)
        throw Error("cannot create " + dir.string() + ": " + ec.message());
}

struct Replicate
{
    SamplerResult result;
    double seconds = 0.0;
};

// runs every (cell, replicate) pair; pairs run concurrently, or particles do when there is a single pair
std::vector<std::vector<Replicate>> run_all(std::vector<Cell>& cells, unsigned threads)
{
    std::vector<std::pair<std::size_t, std::size_t>> jobs;
    std::vector<std::vector<Replicate>> out(cells.size());
    for (std::size_t c = 0; c < cells.size(); ++c) {
        out[c].resize(cells[c].experiment.replicates);
        for (std::size_t r = 0; r < cells[c].experiment.replicates; ++r)
            jobs.emplace_back(c, r);
    }
    const bool per_job = jobs.size() > 1;
    parallel_for(jobs.size(), per_job ? threads : 1u, [&](std::size_t j) {
        const auto [c, r] = jobs[j];
        const Experiment& e = cells[c].experiment;
        SamplerConfig cfg = e.sampler;
        cfg.seed = replicate_seed(e.seed, r);
        cfg.threads = per_job ? 1u : threads;
        const auto start = std::chrono::steady_clock::now();
        const auto initial = e.latin_hypercube ? initial_positions(e, cfg.seed) : std::vector<Vector>{};
        out[c][r].result = run_sampler(*e.path, e.field.get(), cfg, initial);
        out[c][r].seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    });
    return out;
}

void write_sweep_index(const fs::path& out, const std::vector<Cell>& cells)
{
    if (cells.size() < 2)
        return;
    json index = json::array();
    for (const auto& cell : cells)
        index.push_back({{"cell", cell.dir.filename().string()}, {"params", cell.params}});
    write_file(out / "sweep.json", index.dump(2) + "\n");
}

} // namespace

json load_config(const fs::path& file)
{
    std::ifstream is(file);
    if (!is)
        throw ConfigError("cannot open config " + file.string());
    try {
        return json::parse(is);
    } catch (const json::parse_error& e) {
        throw ConfigError(std::string("invalid JSON in ") + file.string() + ": " + e.what());
    }
}

std::vector<std::pair<json, json>> expand_sweep(const json& config)
{
    if (!config.is_object())
        throw ConfigError("config must be a JSON object");
    json base = config;
    json sweep = json::object();
    if (base.contains("sweep")) {
        sweep = base["sweep"];
        base.erase("sweep");
        if (!sweep.is_object())
            throw ConfigError("sweep must be an object of arrays");
    }
    std::vector<std::pair<json, json>> cells{{json::object(), base}};
    for (const auto& [key, values] : sweep.items()) {
        if (!values.is_array() || values.empty())
            throw ConfigError("sweep." + key + " must be a non-empty array");
        json::json_pointer ptr;
        std::stringstream ss(key);
        for (std::string part; std::getline(ss, part, '.');)
            ptr /= part;
        std::vector<std::pair<json, json>> next;
        for (const auto& cell : cells) {
            for (const auto& v : values) {
                auto c = cell;
                c.first[key] = v;
                c.second[ptr] = v;
                next.push_back(std::move(c));
            }
        }
        cells = std::move(next);
    }
    return cells;
}

Experiment build_experiment(const json& cell, std::optional<std::uint64_t> seed, const fs::path& base_dir)
{
    const json& config = cell;
    check_keys(config, {"description", "seed", "replicates", "model", "schedule", "quadrature", "grid", "sampler",
                        "probe", "demo"},
               "config");
    Experiment e;
    e.config = cell;
    e.seed = seed ? *seed : static_cast<std::uint64_t>(count(config, "seed", 1, "config"));
    e.replicates = count(config, "replicates", 1, "config");
    if (e.replicates == 0)
        throw ConfigError("replicates must be positive");
    try {
        build_model(config, e, base_dir);
        e.probe = parse_probe(config, e.probe_starts);
        build_sampler(config, e);
        e.sampler.grid = build_grid(config, e);
    } catch (const ConfigError&) {
        throw;
    } catch (const InvalidArgument& err) {
        throw ConfigError(err.what());
    }
    e.sampler.seed = e.seed;
    return e;
}

std::uint64_t replicate_seed(std::uint64_t seed, std::size_t replicate)
{
    return Rng::stream(seed, key_replicate, replicate)();
}

std::vector<Vector> initial_positions(const Experiment& e, std::uint64_t rep_seed)
{
    if (!e.latin_hypercube)
        return {};
    Rng rng = Rng::stream(rep_seed, key_lhs);
    return latin_hypercube(e.sampler.particles, e.tempered->model().support(), rng);
}

void command_run(const Options& options)
{
    fs::path out;
    auto cells = prepare(options, out);
    const unsigned threads = resolve_threads(options.threads);
    const auto results = run_all(cells, threads);
    ensure_dir(out);
    write_sweep_index(out, cells);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const Experiment& e = cells[c].experiment;
        ensure_dir(cells[c].dir);
        std::string trace = std::string("#gibbsflow trace v1\n") + trace_header + "\n";
        std::string particles = "#gibbsflow particles v1\nreplicate,particle,log_weight";
        for (std::size_t i = 1; i <= e.path->dimension(); ++i)
            particles += ",x" + std::to_string(i);
        particles += e.truth.empty() ? "\n" : ",mode\n";
        json reps = json::array();
        std::vector<std::size_t> modes(e.truth.empty() ? 0 : permutations(e.truth.size()).size(), 0);
        std::size_t evaluations = 0;
        std::size_t dead = 0;
        double seconds = 0.0;
        for (std::size_t r = 0; r < results[c].size(); ++r) {
            const auto& res = results[c][r].result;
            for (const auto& s : res.trace) {
                trace += std::to_string(r) + "," + std::to_string(s.step) + "," + format(s.t) + "," + format(s.ess) +
                         "," + format(s.log_z) + "," + format(s.acceptance) + "," + std::to_string(s.evaluations) +
                         "," + std::to_string(s.failed) + "," + (s.resampled ? "1" : "0") + "," +
                         format(s.expected_loglik) + "\n";
            }
            const auto& ens = res.ensemble;
            for (std::size_t i = 0; i < ens.size(); ++i) {
                particles += std::to_string(r) + "," + std::to_string(i) + "," + format(ens.log_w[i]);
                for (Eigen::Index k = 0; k < ens.x[i].size(); ++k)
                    particles += "," + format(ens.x[i](k));
                if (!e.truth.empty()) {
                    const auto mode = assign_mode(as_span(ens.x[i]), e.truth);
                    particles += "," + std::to_string(mode);
                    if (std::isfinite(ens.log_w[i]))
                        ++modes[mode - 1];
                    else
                        ++dead;
                }
                particles += "\n";
            }
            reps.push_back({{"replicate", r},
                            {"seed", replicate_seed(e.seed, r)},
                            {"log_z", finite_or_null(res.log_z)},
                            {"path_sampling_log_z", finite_or_null(res.path_sampling_log_z)},
                            {"final_ess", res.died ? 0.0 : ens.ess()},
                            {"evaluations", res.evaluations},
                            {"died", res.died},
                            {"wall_seconds", results[c][r].seconds}});
            evaluations += res.evaluations;
            seconds += results[c][r].seconds;
        }
        json summary = {{"command", "run"},
                        {"config", e.config},
                        {"params", cells[c].params},
                        {"seed", e.seed},
                        {"sampler", to_string(e.sampler.kind)},
                        {"grid", e.sampler.grid.knots()},
                        {"replicates", reps},
                        {"evaluations", evaluations},
                        {"wall_seconds", seconds}};
        if (!e.truth.empty()) {
            summary["mode_counts"] = modes;
            summary["failed_particles"] = dead;
        }
        write_file(cells[c].dir / "trace.csv", trace);
        write_file(cells[c].dir / "particles.csv", particles);
        write_file(cells[c].dir / "summary.json", summary.dump(2) + "\n");
    }
}

void command_zest(const Options& options)
{
    fs::path out;
    auto cells = prepare(options, out);
    const unsigned threads = resolve_threads(options.threads);
    const auto results = run_all(cells, threads);
    ensure_dir(out);
    write_sweep_index(out, cells);
    for (std::size_t c = 0; c < cells.size(); ++c) {
        const Experiment& e = cells[c].experiment;
        ensure_dir(cells[c].dir);
        std::string csv = "#gibbsflow zest v1\nreplicate,log_z,z,final_ess,evaluations,died\n";
        std::vector<double> z;
        std::vector<double> log_z;
        std::size_t evaluations = 0;
        double seconds = 0.0;
        for (std::size_t r = 0; r < results[c].size(); ++r) {
            const auto& res = results[c][r].result;
            const double ess = res.died ? 0.0 : res.ensemble.ess();
            csv += std::to_string(r) + "," + format(res.log_z) + "," + format(std::exp(res.log_z)) + "," + format(ess) +
                   "," + std::to_string(res.evaluations) + "," + (res.died ? "1" : "0") + "\n";
            z.push_back(std::exp(res.log_z));
            log_z.push_back(res.log_z);
            evaluations += res.evaluations;
            seconds += results[c][r].seconds;
        }
        const auto mean_sd = [](const std::vector<double>& v) {
            const double n = static_cast<double>(v.size());
            double m = 0.0;
            for (double x : v)
                m += x / n;
            double ss = 0.0;
            for (double x : v)
                ss += (x - m) * (x - m);
            return std::pair{m, v.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0};
        };
        const auto [mz, sz] = mean_sd(z);
        const auto [ml, sl] = mean_sd(log_z);
        const double n = static_cast<double>(z.size());
        json summary = {{"command", "zest"},
                        {"config", e.config},
                        {"params", cells[c].params},
                        {"seed", e.seed},
                        {"replicates", z.size()},
                        {"mean_z", finite_or_null(mz)},
                        {"se_z", finite_or_null(sz / std::sqrt(n))},
                        {"mean_log_z", finite_or_null(ml)},
                        {"se_log_z", finite_or_null(sl / std::sqrt(n))},
                        {"evaluations", evaluations},
                        {"wall_seconds", seconds}};
        if (e.reference_z) {
            summary["reference_z"] = *e.reference_z;
            summary["z_score"] = finite_or_null((mz - *e.reference_z) / (sz / std::sqrt(n)));
        }
        write_file(cells[c].dir / "zest.csv", csv);
        write_file(cells[c].dir / "summary.json", summary.dump(2) + "\n");
    }
}

void command_schedule(const Options& options)
{
    fs::path out;
    auto cells = prepare(options, out);
    const unsigned threads = resolve_threads(options.threads);
    ensure_dir(out);
    write_sweep_index(out, cells);
    for (auto& cell : cells) {
        const Experiment& e = cell.experiment;
        const auto start = std::chrono::steady_clock::now();
        const auto probes = run_probes(e, threads);
        const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
        const auto grid = schedule_from_probe(probes, e.sampler.grid.steps());
        ensure_dir(cell.dir);
        std::string csv = "#gibbsflow probe v1\nstart,step,t,dt\n";
        json per = json::array();
        std::size_t evaluations = 0;
        for (std::size_t k = 0; k < probes.size(); ++k) {
            const auto& p = probes[k];
            for (std::size_t i = 0; i < p.times.size(); ++i)
                csv += std::to_string(k) + "," + std::to_string(i + 1) + "," + format(p.times[i]) + "," +
                       format(p.steps[i]) + "\n";
            per.push_back({{"start", k},
                           {"steps", p.times.size()},
                           {"rejected", p.rejected},
                           {"sup_distance", probe_sup_distance(p)},
                           {"evaluations", p.evaluations}});
            evaluations += p.evaluations;
        }
        std::string grid_csv = "#gibbsflow grid v1\nstep,t\n";
        for (std::size_t n = 0; n <= grid.steps(); ++n)
            grid_csv += std::to_string(n) + "," + format(grid[n]) + "\n";
        const json summary = {{"command", "schedule"},
                              {"config", e.config},
                              {"params", cell.params},
                              {"seed", e.seed},
                              {"probes", per},
                              {"median_sup_distance", median_probe_sup_distance(probes)},
                              {"evaluations", evaluations},
                              {"wall_seconds", seconds}};
        write_file(cell.dir / "probes.csv", csv);
        write_file(cell.dir / "grid.csv", grid_csv);
        write_file(cell.dir / "summary.json", summary.dump(2) + "\n");
    }
}

void command_demo_divergence(const Options& options)
{
    json config = json::object();
    if (!options.config.empty())
        config = load_config(options.config);
    check_keys(config, {"description", "schedule", "demo"}, "config");
    const json demo = config.value("demo", json::object());
    check_keys(demo, {"start", "gamma", "tolerance", "divergence_cap", "threshold"}, "demo");
    const auto start = demo.contains("start") ? numbers(demo["start"], "demo.start") : std::vector<double>{3.0, 3.0};
    const auto gamma = demo.contains("gamma") ? numbers(demo["gamma"], "demo.gamma") : std::vector<double>{0.5, 0.5};
    if (start.size() != 2 || gamma.size() != 2)
        throw ConfigError("demo.start and demo.gamma must have two entries");
    if (std::abs(gamma[0] + gamma[1] - 1.0) > 1e-12)
        throw ConfigError("demo.gamma must sum to one");
    ArclengthOptions ao;
    ao.tolerance = number(demo, "tolerance", ao.tolerance, "demo");
    ao.divergence_cap = number(demo, "divergence_cap", ao.divergence_cap, "demo");
    const double threshold = number(demo, "threshold", 1e3, "demo");
    TemperatureSchedule schedule = TemperatureSchedule::linear();
    try {
        schedule = parse_schedule(config);
    } catch (const InvalidArgument& err) {
        throw ConfigError(err.what());
    }

    const GaussianPath gp(Vector::Zero(2), Matrix::Identity(2, 2), Matrix::Identity(2, 2), Vector::Zero(2));
    const FunctionField minke(2, [gp, schedule](std::span<const double> x, double t) {
        return minke_velocity(gp, schedule, x, t);
    });
    const FunctionField coordinatewise(2, [gp, schedule](std::span<const double> x, double t) {
        return coordinatewise_velocity(gp, schedule, x, t);
    });
    const std::vector<std::pair<std::string, LogVelocity>> flows = {
        {"antiderivative", antiderivative_log_field(schedule, gamma[0], gamma[1])},
        {"minke", log_velocity(minke)},
        {"coordinatewise", log_velocity(coordinatewise)}};

    const auto t0 = std::chrono::steady_clock::now();
    std::string csv = "#gibbsflow divergence v1\nflow,step,t,max_norm\n";
    json per = json::array();
    for (const auto& [name, field] : flows) {
        const auto r = integrate_arclength(field, start, ao);
        for (std::size_t i = 0; i < r.path.size(); ++i)
            csv += name + "," + std::to_string(i + 1) + "," + format(r.path[i].first) + "," +
                   format(r.path[i].second) + "\n";
        per.push_back({{"flow", name},
                       {"status", to_string(r.status)},
                       {"time", r.time},
                       {"max_norm", r.max_norm},
                       {"exceeds_threshold", r.max_norm > threshold},
                       {"steps", r.steps}});
    }
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    ensure_dir(options.out);
    write_file(options.out / "divergence.csv", csv);
    const json summary = {{"command", "demo-divergence"},
                          {"start", start},
                          {"gamma", gamma},
                          {"schedule", schedule.name()},
                          {"flows", per},
                          {"wall_seconds", seconds}};
    write_file(options.out / "summary.json", summary.dump(2) + "\n");
}

int main(int argc, char** argv)
{
    CLI::App app{"Gibbs flow transport, AIS and SMC experiments"};
    app.require_subcommand(1);
    Options options;
    std::string config;
    std::string out = ".";
    std::uint64_t seed = 0;
    const auto add_common = [&](CLI::App* sub, bool config_required) {
        auto* c = sub->add_option("--config", config, "experiment config (JSON)");
        if (config_required)
            c->required();
        sub->add_option("--seed", seed, "run seed (overrides the config)");
        sub->add_option("--out", out, "output directory");
        sub->add_option("--threads", options.threads, "worker threads (0 = GIBBSFLOW_THREADS or all cores)");
    };
    auto* run = app.add_subcommand("run", "SMC, AIS or flow experiment with per-step ESS and log Z trace");
    auto* schedule = app.add_subcommand("schedule", "adaptive probes and the derived time grid");
    auto* zest = app.add_subcommand("zest", "normalizing-constant replication study");
    auto* demo = app.add_subcommand("demo-divergence", "finite-time blow-up of the anti-derivative flow");
    for (auto* sub : {run, schedule, zest})
        add_common(sub, true);
    add_common(demo, false);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }
    options.config = config;
    options.out = out;
    for (auto* sub : {run, schedule, zest, demo})
        if (sub->count("--seed") > 0)
            options.seed = seed;

    try {
        if (*run)
            command_run(options);
        else if (*schedule)
            command_schedule(options);
        else if (*zest)
            command_zest(options);
        else
            command_demo_divergence(options);
    } catch (const ConfigError& e) {
        std::cerr << "gibbsflow: config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "gibbsflow: " << e.what() << "\n";
        return 3;
    }
    return 0;
}

} // namespace gibbsflow::cli
