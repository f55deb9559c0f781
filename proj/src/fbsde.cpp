#include "mfgflow/fbsde.hpp"

#include "mfgflow/json_io.hpp"

#include <chrono>
#include <cmath>

namespace mfgflow {

namespace {

double norm_of(const Vec& v) { return v.norm(); }

Vec soft_bound(const Vec& raw, double cap) {
    return cap * (raw / cap).array().tanh();
}

}  // namespace

// --- ValuePath ---

ValuePath::ValuePath(int d, int N, double sigma, int hidden, double z_cap, const CounterRng& rng)
    : d_(d), N_(N), sigma_(sigma), z_cap_(z_cap) {
    require(N >= 2, "ValuePath: N must be >= 2");
    u0_ = Mlp1h(d, hidden, 1);
    u0_.init_random(rng, 7);
    steps_.reserve(N);
    for (int n = 0; n < N; ++n) {
        steps_.emplace_back(d, hidden, 1 + d);
        steps_.back().init_random(rng, 100 + static_cast<std::uint64_t>(n));
    }
    step_offsets_.resize(N);
    int off = u0_.n_params();
    for (int n = 0; n < N; ++n) {
        step_offsets_[n] = off;
        off += steps_[n].n_params();
    }
    n_params_ = off;
}

Mat ValuePath::z_batch(const Mat& X, int n) const {
    require(n >= 0 && n < N_, "z_batch: step index out of range");
    const Mat out = steps_[n].forward(X);
    return (z_cap_ * (out.bottomRows(d_) / z_cap_).array().tanh()).matrix();
}

Mat ValuePath::control(const Mat& X, int n) const { return -z_batch(X, n) / sigma_; }

double ValuePath::u(const Vec& x, int n) const {
    require(n >= 0 && n < N_, "u: step index out of range (terminal value is g)");
    if (n == 0) return u0_.forward1(x)[0];
    return steps_[n].forward1(x)[0];
}

Vec ValuePath::u_batch(const Mat& X, int n) const {
    require(n >= 0 && n < N_, "u_batch: step index out of range");
    if (n == 0) return u0_.forward(X).row(0).transpose();
    return steps_[n].forward(X).row(0).transpose();
}

Vec ValuePath::grad_u(const Vec& x, int n) const {
    require(n >= 0 && n < N_, "grad_u: step index out of range");
    return n == 0 ? u0_.input_grad(x, 0) : steps_[n].input_grad(x, 0);
}

double ValuePath::lap_u(const Vec& x, int n) const {
    require(n >= 0 && n < N_, "lap_u: step index out of range");
    return n == 0 ? u0_.input_laplacian(x, 0) : steps_[n].input_laplacian(x, 0);
}

Vec ValuePath::get_params() const {
    Vec out(n_params_);
    out.head(u0_.n_params()) = u0_.params();
    for (int n = 0; n < N_; ++n)
        out.segment(step_offsets_[n], steps_[n].n_params()) = steps_[n].params();
    return out;
}

void ValuePath::set_params(const Vec& p) {
    require(static_cast<int>(p.size()) == n_params_, "ValuePath::set_params: size mismatch");
    u0_.params() = p.head(u0_.n_params());
    for (int n = 0; n < N_; ++n)
        steps_[n].params() = p.segment(step_offsets_[n], steps_[n].n_params());
}

std::string ValuePath::to_json() const {
    Json j;
    j["schema_version"] = 1;
    j["kind"] = "value_path";
    j["d"] = d_;
    j["N"] = N_;
    j["sigma"] = sigma_;
    j["z_cap"] = z_cap_;
    j["hidden"] = u0_.hidden_dim();
    j["u0"] = vec_to_json(u0_.params());
    Json arr = Json::array();
    for (const auto& s : steps_) arr.push_back(vec_to_json(s.params()));
    j["steps"] = arr;
    return j.dump();
}

ValuePath ValuePath::from_json(const std::string& text) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw InvalidInput("value checkpoint: malformed JSON");
    if (!j.contains("kind") || j["kind"].get<std::string>() != "value_path")
        throw InvalidInput("value checkpoint: wrong kind");
    if (j["schema_version"].get<int>() != 1)
        throw InvalidInput("value checkpoint: unsupported schema version");
    ValuePath vp(j["d"].get<int>(), j["N"].get<int>(), j["sigma"].get<double>(),
                 j["hidden"].get<int>(), j["z_cap"].get<double>(), CounterRng(0));
    vp.u0_.params() = vec_from_json(j["u0"]);
    const Json& arr = j["steps"];
    require(static_cast<int>(arr.size()) == vp.N_, "value checkpoint: step count mismatch");
    for (int n = 0; n < vp.N_; ++n) vp.steps_[n].params() = vec_from_json(arr[n]);
    return vp;
}

void ValuePath::save(const std::string& path) const { atomic_write_text(path, to_json()); }
ValuePath ValuePath::load(const std::string& path) { return from_json(read_text(path)); }

// --- simulation ---

PathBatch simulate_paths(const MFGProblem& problem, const DensityFlow& flow, const ValuePath& vp,
                         int M, std::uint64_t seed) {
    require(flow.dim() == problem.d && vp.dim() == problem.d,
            "simulate_paths: dimension mismatch");
    require(flow.steps() == problem.N && vp.steps() == problem.N,
            "simulate_paths: step-count mismatch");
    const int N = problem.N;
    const int d = problem.d;
    const double dt = problem.dt();
    const double sq_dt = std::sqrt(dt);
    const double sigma = problem.sigma;

    PathBatch batch;
    batch.seed = seed;
    batch.X.resize(N + 1);
    batch.Y.resize(N + 1);
    batch.dW.resize(N);

    const CounterRng rng(seed);
    batch.X[0] = flow.push_samples(0, M, seed);
    batch.Y[0] = vp.u_batch(batch.X[0], 0);

    // population samples for the cost coupling, one batch per level
    const int m_mu = std::min(M, 256);
    const std::vector<Mat> mu_levels = flow.push_all(flow.sample_base(m_mu, rng.stream(0xabcdULL).bits(0)));

    for (int n = 0; n < N; ++n) {
        batch.dW[n] = sq_dt * rng.stream(1000 + n).normal_matrix(d, M, 0);
        const Mat Z = vp.z_batch(batch.X[n], n);
        const Mat alpha = -Z / sigma;
        Vec drv(M);
        for (int j = 0; j < M; ++j) {
            const double f_state =
                problem.running_cost(batch.X[n].col(j), mu_levels[n], problem.t(n));
            drv[j] = f_state + 0.5 * alpha.col(j).squaredNorm();
        }
        batch.X[n + 1] = batch.X[n] + dt * alpha + sigma * batch.dW[n];
        batch.Y[n + 1] = batch.Y[n] - dt * drv +
                         (Z.array() * batch.dW[n].array()).colwise().sum().matrix().transpose();
        if (!batch.X[n + 1].allFinite() || !batch.Y[n + 1].allFinite()) {
            throw RuntimeFailure(
                "simulate_paths: non-finite state at step " + std::to_string(n + 1) +
                " (|u0 params| = " + std::to_string(norm_of(vp.u0_net().params())) +
                ", |step params| = " + std::to_string(norm_of(vp.step_nets()[n].params())) + ")");
        }
    }
    return batch;
}

double loss_mkv(const PathBatch& batch, const DensityFlow& flow, const MFGProblem& problem) {
    const int M = batch.paths();
    const int N = batch.steps();
    const Mat muT = flow.push_samples(flow.steps(), std::min(M, 256), batch.seed ^ 0x7777ULL);
    KahanSum acc;
    for (int j = 0; j < M; ++j) {
        const double g = problem.terminal_cost(batch.X[N].col(j), muT);
        const double e = g - batch.Y[N][j];
        acc.add(e * e);
    }
    return acc.value() / M;
}

// --- residual and losses ---

PathValueView::PathValueView(const ValuePath& vp, const MFGProblem& problem, Mat muT_samples)
    : vp_(vp), problem_(problem), muT_(std::move(muT_samples)) {}

double PathValueView::u(const Vec& x, int n) const {
    if (n >= problem_.N) return problem_.terminal_cost(x, muT_);
    return vp_.u(x, n);
}

Vec PathValueView::grad_u(const Vec& x, int n) const {
    if (n >= problem_.N) {
        if (problem_.grad_terminal) return problem_.grad_terminal(x, muT_);
        // central differences as a fallback
        Vec g(x.size());
        const double h = 1e-5;
        for (int a = 0; a < x.size(); ++a) {
            Vec xp = x, xm = x;
            xp[a] += h;
            xm[a] -= h;
            g[a] = (problem_.terminal_cost(xp, muT_) - problem_.terminal_cost(xm, muT_)) / (2 * h);
        }
        return g;
    }
    return vp_.grad_u(x, n);
}

double PathValueView::lap_u(const Vec& x, int n) const {
    if (n >= problem_.N) {
        if (problem_.lap_terminal) return problem_.lap_terminal(x, muT_);
        double acc = 0.0;
        const double h = 1e-4;
        const double u0 = problem_.terminal_cost(x, muT_);
        for (int a = 0; a < x.size(); ++a) {
            Vec xp = x, xm = x;
            xp[a] += h;
            xm[a] -= h;
            acc += (problem_.terminal_cost(xp, muT_) + problem_.terminal_cost(xm, muT_) - 2 * u0) /
                   (h * h);
        }
        return acc;
    }
    return vp_.lap_u(x, n);
}

double hjb_residual(const ValueView& view, const MFGProblem& problem, const Mat& mu_samples,
                    const Vec& x, int n) {
    require(n >= 1 && n <= problem.N, "hjb_residual: n must be in 1..N");
    const double dt = problem.dt();
    double dtu;
    if (n < problem.N)
        dtu = (view.u(x, n + 1) - view.u(x, n)) / dt;
    else
        dtu = (view.u(x, n) - view.u(x, n - 1)) / dt;
    const double lap = view.lap_u(x, n);
    const Vec grad = view.grad_u(x, n);
    const double f = problem.running_cost(x, mu_samples, problem.t(n));
    return dtu + problem.nu() * lap - problem.hamiltonian(x, grad) + f;
}

double loss_hjb(const ValueView& view, const DensityFlow& flow, const MFGProblem& problem, int M,
                std::uint64_t seed) {
    KahanSum acc;
    for (int n = 1; n <= problem.N; ++n) {
        const Mat X = flow.push_samples(n, M, CounterRng(seed).stream(n).bits(0));
        for (int j = 0; j < M; ++j) {
            const double r = hjb_residual(view, problem, X, X.col(j), n);
            acc.add(r * r);
        }
    }
    return acc.value() / (static_cast<double>(problem.N) * M);
}

double loss_hjb(const ValuePath& vp, const DensityFlow& flow, const MFGProblem& problem, int M,
                std::uint64_t seed) {
    const Mat muT = flow.push_samples(flow.steps(), std::min(M, 256), seed ^ 0x7777ULL);
    PathValueView view(vp, problem, muT);
    return loss_hjb(view, flow, problem, M, seed);
}

double loss_terminal(const DensityFlow& flow, const MFGProblem& problem, int M,
                     std::uint64_t seed) {
    const Mat X = flow.push_samples(flow.steps(), M, seed);
    KahanSum acc;
    for (int j = 0; j < M; ++j) acc.add(problem.terminal_cost(X.col(j), X));
    return acc.value() / M;
}

// --- training ---

namespace detail {

/// Objective and gradient of one value-network update: terminal matching plus
/// a regression of the per-step scalar heads onto the running value process.
double theta_objective_grad(const MFGProblem& problem, const DensityFlow& flow,
                            const ValuePath& vp, const FixedTrainOptions& opts,
                            std::uint64_t seed, Vec& out_grad, double& l_mkv_out) {
    const int N = problem.N;
    const int d = problem.d;
    const int M = opts.m_theta;
    const double dt = problem.dt();
    const double sigma = problem.sigma;
    const double inv_sig2 = 1.0 / (sigma * sigma);

    // forward simulation with cached activations
    const CounterRng rng(seed);
    Mat X = flow.push_samples(0, M, seed);
    const int m_mu = std::min(M, opts.mu_batch);
    const std::vector<Mat> mu_levels =
        flow.push_all(flow.sample_base(m_mu, rng.stream(0xabcdULL).bits(0)));

    Mlp1h::Cache u0_cache;
    const Vec Y0 = vp.u0_net().forward_cached(X, u0_cache).row(0).transpose();

    std::vector<Mlp1h::Cache> caches(N);
    std::vector<Mat> Zs(N), dWs(N), Xs(N);
    std::vector<Vec> Ys(N + 1);
    Ys[0] = Y0;
    for (int n = 0; n < N; ++n) {
        Xs[n] = X;
        const Mat out = vp.step_nets()[n].forward_cached(X, caches[n]);
        const Mat Z = (vp.z_cap() * (out.bottomRows(d) / vp.z_cap()).array().tanh()).matrix();
        Zs[n] = Z;
        dWs[n] = std::sqrt(dt) * rng.stream(1000 + n).normal_matrix(d, M, 0);
        Vec drv(M);
        for (int j = 0; j < M; ++j) {
            const double f_state = problem.running_cost(X.col(j), mu_levels[n], problem.t(n));
            drv[j] = f_state + 0.5 * Z.col(j).squaredNorm() * inv_sig2;
        }
        Ys[n + 1] = Ys[n] - dt * drv +
                    (Z.array() * dWs[n].array()).colwise().sum().matrix().transpose();
        X = X - dt * (Z / sigma) + sigma * dWs[n];
        if (!X.allFinite() || !Ys[n + 1].allFinite())
            throw RuntimeFailure("train_fixed: non-finite path state at step " +
                                 std::to_string(n + 1));
    }

    const Mat muT = mu_levels[N];
    Vec e(M);
    KahanSum mkv;
    for (int j = 0; j < M; ++j) {
        const double g = problem.terminal_cost(X.col(j), muT);
        const double diff = Ys[N][j] - g;
        e[j] = 2.0 * diff / M;
        mkv.add(diff * diff);
    }
    l_mkv_out = mkv.value() / M;

    // head regression onto the simulated value process (interior steps)
    double l_reg = 0.0;
    std::vector<Vec> head_err(N);
    if (opts.w_value_reg > 0 && N > 1) {
        KahanSum reg;
        for (int n = 1; n < N; ++n) {
            const Vec U = (vp.step_nets()[n].forward(Xs[n])).row(0).transpose();
            head_err[n] = U - Ys[n];
            reg.add(head_err[n].squaredNorm());
        }
        l_reg = reg.value() / (static_cast<double>(M) * (N - 1));
    }

    // backward pass
    Vec grad = Vec::Zero(vp.n_params());
    {
        Vec g0 = Vec::Zero(vp.u0_net().n_params());
        Mat dY0(1, M);
        dY0.row(0) = e.transpose();  // dY_T/dY_0 = 1
        vp.u0_net().backward(u0_cache, dY0, g0);
        grad.head(vp.u0_net().n_params()) = g0;
    }
    const double reg_scale =
        (opts.w_value_reg > 0 && N > 1) ? 2.0 * opts.w_value_reg / (static_cast<double>(M) * (N - 1))
                                        : 0.0;
    for (int n = 0; n < N; ++n) {
        Mat dOut = Mat::Zero(1 + d, M);
        // terminal loss through the Y increments
        Mat dZ = dWs[n];
        dZ -= (dt * inv_sig2) * Zs[n];
        dZ.array().rowwise() *= e.transpose().array();
        dZ.array() *= (1.0 - (Zs[n].array() / vp.z_cap()).square());
        dOut.bottomRows(d) = dZ;
        if (n >= 1 && reg_scale > 0) dOut.row(0) = (reg_scale * head_err[n]).transpose();
        Vec gstep = Vec::Zero(vp.step_nets()[n].n_params());
        vp.step_nets()[n].backward(caches[n], dOut, gstep);
        grad.segment(vp.step_offset(n), gstep.size()) = gstep;
    }

    out_grad = std::move(grad);
    return l_mkv_out + opts.w_value_reg * l_reg;
}

/// Objective parts and gradient of one flow update: path-law fit, residual
/// and terminal-cost terms (plus the warm-start pull when present).
FlowLossParts phi_objective_grad(const MFGProblem& problem, const DensityFlow& flow,
                                 const ValuePath& vp, const FixedTrainOptions& opts,
                                 std::uint64_t seed, double warm_weight,
                                 const std::optional<WarmStart>& warm, Vec& out_grad) {
    const int N = problem.N;
    const int d = problem.d;
    const int M = opts.m_phi;
    FlowLossParts out;

    Vec grad = Vec::Zero(flow.n_params());

    // (1) path-law fit: marginals track the controlled dynamics
    if (opts.w_fit > 0) {
        const PathBatch batch = simulate_paths(problem, flow, vp, M, seed ^ 0x515151ULL);
        const Vec w = Vec::Constant(M, -opts.w_fit / (static_cast<double>(N) * M));
        KahanSum fit;
        for (int n = 1; n <= N; ++n) {
            const Vec logd = flow.log_density_grad(n, batch.X[n], w, grad);
            fit.add(-logd.sum());
        }
        out.fit = fit.value() / (static_cast<double>(N) * M);
    }

    // (2) residual + terminal cost through the transported samples
    const Mat X0 = flow.sample_base(M, seed ^ 0x626262ULL);
    const DensityFlow::ForwardTrace trace = flow.push_all_traced(X0);
    std::vector<Mat> level_grads(N + 1);

    {
        const Mat& XT = trace.levels[N];
        KahanSum lt;
        Mat gT = Mat::Zero(d, M);
        for (int j = 0; j < M; ++j) {
            lt.add(problem.terminal_cost(XT.col(j), XT));
            gT.col(j) = problem.grad_terminal
                            ? problem.grad_terminal(XT.col(j), XT)
                            : Vec(Vec::Zero(d));
        }
        out.terminal = lt.value() / M;
        level_grads[N] = (opts.w_terminal / M) * gT;
    }

    if (opts.w_hjb > 0) {
        const Mat muT = trace.levels[N];
        PathValueView view(vp, problem, muT);
        const double h = 1e-3;
        const double scale = 2.0 * opts.w_hjb / (static_cast<double>(N) * M);
        KahanSum hjb;
        for (int n = 1; n <= N; ++n) {
            const Mat& Xn = trace.levels[n];
            Mat gn = Mat::Zero(d, M);
            for (int j = 0; j < M; ++j) {
                const Vec x = Xn.col(j);
                const double r = hjb_residual(view, problem, Xn, x, n);
                hjb.add(r * r);
                for (int a = 0; a < d; ++a) {
                    Vec xp = x, xm = x;
                    xp[a] += h;
                    xm[a] -= h;
                    const double rp = hjb_residual(view, problem, Xn, xp, n);
                    const double rm = hjb_residual(view, problem, Xn, xm, n);
                    gn(a, j) = scale * r * (rp - rm) / (2 * h);
                }
            }
            if (level_grads[n].size() == 0)
                level_grads[n] = gn;
            else
                level_grads[n] += gn;
        }
        out.hjb = hjb.value() / (static_cast<double>(N) * M);
    }

    flow.backward_pushforward(trace, level_grads, grad);

    // (3) warm-start pull toward supplied density targets (log-space regression)
    if (warm && warm_weight > 0) {
        KahanSum wacc;
        for (int n = 1; n <= N; ++n) {
            const Mat& Q = trace.levels[n];
            const Vec target = warm->density_at(Q, n).cwiseMax(1e-12).array().log();
            const Vec logd = flow.log_density(n, Q);
            const Vec diff = logd - target;
            wacc.add(diff.squaredNorm());
            const Vec w = (2.0 * warm_weight / (static_cast<double>(N) * M)) * diff;
            flow.log_density_grad(n, Q, w, grad);
        }
        out.warm = wacc.value() / (static_cast<double>(N) * M);
    }

    out_grad = std::move(grad);
    return out;
}

}  // namespace detail

namespace {

double theta_step(const MFGProblem& problem, const DensityFlow& flow, ValuePath& vp,
                  const FixedTrainOptions& opts, Adam& opt, std::uint64_t seed,
                  double& l_mkv_out) {
    Vec grad;
    const double loss = detail::theta_objective_grad(problem, flow, vp, opts, seed, grad, l_mkv_out);
    Vec params = vp.get_params();
    opt.step(params, grad);
    vp.set_params(params);
    return loss;
}

detail::FlowLossParts phi_step(const MFGProblem& problem, DensityFlow& flow, const ValuePath& vp,
                               const FixedTrainOptions& opts, Adam& opt, std::uint64_t seed,
                               double warm_weight, const std::optional<WarmStart>& warm) {
    Vec grad;
    const detail::FlowLossParts out =
        detail::phi_objective_grad(problem, flow, vp, opts, seed, warm_weight, warm, grad);
    Vec params = flow.get_params();
    opt.step(params, grad);
    flow.set_params(params);
    return out;
}

}  // namespace

FixedTrainResult train_fixed(const MFGProblem& problem, const FixedTrainOptions& opts,
                             const std::optional<WarmStart>& warm) {
    const CounterRng rng(opts.seed);
    const Box box = working_box(problem.scenario);

    FixedTrainResult res;
    res.flow = DensityFlow(problem.d, problem.N, problem.mu0_mean, problem.mu0_std, box,
                           opts.blocks_per_step, opts.coupling_hidden, rng.stream(11));
    res.value = ValuePath(problem.d, problem.N, problem.sigma, opts.value_hidden, opts.z_cap,
                          rng.stream(22));

    Adam opt_theta(res.value.n_params(), opts.lr_theta);
    Adam opt_phi(res.flow.n_params(), opts.lr_phi);

    const int burnin = static_cast<int>(opts.warm_burnin_frac * opts.max_rounds);
    Vec best_flow = res.flow.get_params();
    Vec best_value = res.value.get_params();
    double best = std::numeric_limits<double>::infinity();
    std::vector<double> monitored_hist;

    const auto t_start = std::chrono::steady_clock::now();
    int round = 0;
    for (; round < opts.max_rounds; ++round) {
        const CounterRng rr = rng.stream(1000 + round);
        double l_mkv = 0;
        for (int k = 0; k < opts.k_theta; ++k)
            theta_step(problem, res.flow, res.value, opts, opt_theta, rr.bits(2 * k), l_mkv);

        // warm pull fades linearly to zero across the burn-in window
        double w_warm = 0.0;
        if (warm && burnin > 0 && round < burnin)
            w_warm = warm->weight * (1.0 - static_cast<double>(round) / burnin);

        detail::FlowLossParts pl;
        for (int k = 0; k < opts.k_phi; ++k)
            pl = phi_step(problem, res.flow, res.value, opts, opt_phi, rr.bits(1001 + 2 * k),
                          w_warm, warm);

        TraceRow row;
        row.round = round;
        row.l_mkv = l_mkv;
        row.l_hjb = pl.hjb;
        row.l_terminal = pl.terminal;
        row.l_fit = pl.fit;
        row.monitored =
            l_mkv + opts.w_hjb * pl.hjb + opts.w_terminal * pl.terminal + opts.w_fit * pl.fit;
        row.seconds =
            std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
        res.trace.push_back(row);
        monitored_hist.push_back(row.monitored);

        if (row.monitored < best && std::isfinite(row.monitored)) {
            best = row.monitored;
            best_flow = res.flow.get_params();
            best_value = res.value.get_params();
        }

        // plateau detection on the monitored total
        const int P = opts.patience;
        if (static_cast<int>(monitored_hist.size()) >= 2 * P) {
            double recent = 0, prev = 0;
            for (int i = 0; i < P; ++i) {
                recent += monitored_hist[monitored_hist.size() - 1 - i];
                prev += monitored_hist[monitored_hist.size() - 1 - P - i];
            }
            recent /= P;
            prev /= P;
            if (std::abs(prev - recent) < opts.tol_rel * std::max(std::abs(prev), 1e-12)) {
                res.converged = true;
                ++round;
                break;
            }
        }
    }
    res.rounds = round;
    res.best_monitored = best;
    res.flow.set_params(best_flow);
    res.value.set_params(best_value);
    return res;
}

void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path) {
    CsvWriter csv({"round", "l_mkv", "l_hjb", "l_t", "seconds"});
    for (const auto& r : trace)
        csv.add_row({std::to_string(r.round), CsvWriter::format(r.l_mkv),
                     CsvWriter::format(r.l_hjb), CsvWriter::format(r.l_terminal),
                     CsvWriter::format(r.seconds)});
    csv.write_atomic(path);
}

}  // namespace mfgflow
