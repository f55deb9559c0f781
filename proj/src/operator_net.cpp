#include "mfgflow/operator_net.hpp"

#include "mfgflow/json_io.hpp"

#include <chrono>
#include <cmath>

namespace mfgflow {

OperatorModel::OperatorModel(const BoundaryLayout& layout, const OperatorArch& arch,
                             std::uint64_t seed)
    : layout_(layout), arch_(arch) {
    require(arch.box.dim() == layout.d, "operator: box/layout dimension mismatch");
    require(arch.N >= 1 && arch.lift >= 1 && arch.layers >= 1 && arch.modes >= 1,
            "operator: invalid architecture");
    std::vector<int> dims;
    dims.push_back(feature_dim());
    for (int l = 0; l < arch.layers; ++l) dims.push_back(arch.lift);
    dims.push_back(arch.N);
    net_ = MlpDeep(dims);
    net_.init_random(CounterRng(seed), 0x0e0e0eULL);
}

int OperatorModel::feature_dim() const {
    return layout_.flat_size() + layout_.d + 2 * arch_.modes * layout_.d;
}

Mat OperatorModel::features(const BoundaryCode& code, const Mat& queries) const {
    const int d = layout_.d;
    const int M = static_cast<int>(queries.cols());
    Mat F(feature_dim(), M);
    // code slots are O(10) in world units; bring them to the unit scale of
    // the spectral features
    for (int j = 0; j < M; ++j) F.col(j).head(code.flat.size()) = 0.1 * code.flat;
    int row = static_cast<int>(code.flat.size());
    for (int a = 0; a < d; ++a) {
        // query coordinates scaled to [-1, 1] over the reference box
        const double lo = arch_.box.lo[a], hi = arch_.box.hi[a];
        F.row(row + a) = (2.0 * (queries.row(a).array() - lo) / (hi - lo) - 1.0).matrix();
    }
    int r = row + d;
    for (int a = 0; a < d; ++a) {
        for (int k = 1; k <= arch_.modes; ++k) {
            const auto phase = (M_PI * k) * F.row(row + a).array();
            F.row(r++) = phase.sin().matrix();
            F.row(r++) = phase.cos().matrix();
        }
    }
    return F;
}

Mat operator_eval(const OperatorModel& model, const BoundaryCode& code, const Mat& queries) {
    require(code.layout == model.layout(), "operator_eval: boundary-code layout mismatch");
    require(queries.rows() == model.layout().d, "operator_eval: query dimension mismatch");
    if (queries.cols() == 0) return Mat(0, model.arch().N);
    require(queries.allFinite(), "operator_eval: non-finite query");
    const Mat raw = model.net().forward(model.features(code, queries));  // N x M
    return raw.array().exp().matrix().transpose();                      // M x N
}

double loss_pino(const OperatorModel& model, const TrainSample& sample) {
    const Mat out = operator_eval(model, sample.code, sample.queries);
    require(out.rows() == sample.targets.rows() && out.cols() == sample.targets.cols(),
            "loss_pino: target shape mismatch");
    KahanSum acc;
    for (int j = 0; j < out.rows(); ++j)
        for (int n = 0; n < out.cols(); ++n) {
            const double e = out(j, n) - sample.targets(j, n);
            acc.add(e * e);
        }
    return acc.value() / (static_cast<double>(out.rows()) * out.cols());
}

TrainSample make_train_sample(const DensityFlow& flow, const BoundaryCode& code, int M,
                              std::uint64_t seed) {
    const int N = flow.steps();
    TrainSample s;
    s.code = code;
    // queries from the mixture of all step marginals
    Mat Q(flow.dim(), M);
    int col = 0;
    const int per = (M + N - 1) / N;
    for (int n = 1; n <= N && col < M; ++n) {
        const Mat X = flow.push_samples(n, per, CounterRng(seed).stream(n).bits(1));
        for (int j = 0; j < per && col < M; ++j) Q.col(col++) = X.col(j);
    }
    s.queries = Q;
    s.targets = Mat(M, N);
    for (int n = 1; n <= N; ++n)
        s.targets.col(n - 1) = flow.log_density(n, Q).array().exp();
    return s;
}

void fit_operator(OperatorModel& model, const std::vector<TrainSample>& samples, int epochs,
                  double lr, std::uint64_t seed, int minibatch) {
    if (samples.empty() || epochs <= 0) return;
    Adam opt(model.n_params(), lr);
    const CounterRng rng(seed);
    const int S = static_cast<int>(samples.size());
    for (int e = 0; e < epochs; ++e) {
        // deterministic shuffled order
        std::vector<int> order(S);
        for (int i = 0; i < S; ++i) order[i] = i;
        for (int i = S - 1; i > 0; --i) {
            const int j = static_cast<int>(rng.stream(e).bits(i) % static_cast<std::uint64_t>(i + 1));
            std::swap(order[i], order[j]);
        }
        for (int start = 0; start < S; start += minibatch) {
            const int stop = std::min(S, start + minibatch);
            Vec grad = Vec::Zero(model.n_params());
            for (int s = start; s < stop; ++s) {
                const TrainSample& ts = samples[order[s]];
                const int M = static_cast<int>(ts.queries.cols());
                MlpDeep::Cache cache;
                const Mat raw = model.net().forward_cached(model.features(ts.code, ts.queries), cache);
                const Mat out = raw.array().exp();
                // d/d raw of mean squared density error (out = exp(raw))
                Mat dRaw = 2.0 * (out - ts.targets.transpose()).array() * out.array() /
                           (static_cast<double>(M) * model.arch().N * (stop - start));
                model.net().backward(cache, dRaw, grad);
            }
            opt.step(model.params(), grad);
        }
    }
}

WarmStart operator_warm_start(const OperatorModel& model, const BoundaryCode& code,
                              double weight) {
    WarmStart ws;
    ws.weight = weight;
    ws.density_at = [model, code](const Mat& pts, int n) -> Vec {
        const Mat out = operator_eval(model, code, pts);
        require(n >= 1 && n <= out.cols(), "warm start: step index out of range");
        return out.col(n - 1);
    };
    return ws;
}

OperatorTrainResult train_pionm(const ScenarioSampler& sampler, const ProblemBuilder& builder,
                                int budget, const BoundaryLayout& layout,
                                const OperatorArch& arch, const OperatorTrainOptions& opts) {
    OperatorTrainResult res;
    res.model = OperatorModel(layout, arch, opts.seed);
    Adam opt(res.model.n_params(), opts.lr);

    for (int it = 0; it < budget; ++it) {
        const BoundaryCode code = sampler(it);
        require(code.layout == layout, "train_pionm: sampler produced mismatched layout");
        const MFGProblem problem = builder(code);

        FixedTrainOptions inner = opts.inner;
        inner.seed = CounterRng(opts.seed).stream(500 + it).bits(0);

        std::optional<WarmStart> warm;
        if (opts.warm_weight > 0) {
            // ramp the pull up over early outer iterations: the untrained
            // operator should barely steer the first solves
            const double ramp = opts.warm_ramp_iters > 0
                                    ? std::min(1.0, static_cast<double>(it) / opts.warm_ramp_iters)
                                    : 1.0;
            if (ramp > 0) warm = operator_warm_start(res.model, code, opts.warm_weight * ramp);
        }

        const FixedTrainResult inner_res = train_fixed(problem, inner, warm);

        SessionRow row;
        row.iteration = it;
        row.code_digest = code_digest(code);
        row.inner_rounds = inner_res.rounds;
        if (!inner_res.converged) {
            row.skipped = true;
            res.report.push_back(row);
            continue;
        }

        const TrainSample sample = make_train_sample(inner_res.flow, code, opts.queries_per_sample,
                                                     CounterRng(opts.seed).stream(900 + it).bits(0));
        const int M = static_cast<int>(sample.queries.cols());
        for (int e = 0; e < opts.epochs_per_sample; ++e) {
            MlpDeep::Cache cache;
            const Mat raw = res.model.net().forward_cached(
                res.model.features(sample.code, sample.queries), cache);
            const Mat out = raw.array().exp();
            Mat dRaw = 2.0 * (out - sample.targets.transpose()).array() * out.array() /
                       (static_cast<double>(M) * arch.N);
            Vec grad = Vec::Zero(res.model.n_params());
            res.model.net().backward(cache, dRaw, grad);
            opt.step(res.model.params(), grad);
        }
        row.l_pino = loss_pino(res.model, sample);
        res.report.push_back(row);
    }
    return res;
}

InferenceResult infer_equilibrium(const OperatorModel& model, const BoundaryCode& code,
                                  const std::vector<int>& lattice_pts, double T) {
    require(static_cast<int>(lattice_pts.size()) == model.layout().d,
            "infer_equilibrium: lattice dimension mismatch");
    Scenario s = decode(code);
    s.T = T;
    const Box box = working_box(s);

    InferenceResult out;
    out.lattice_pts = lattice_pts;
    int cells = 1;
    for (int p : lattice_pts) {
        require(p >= 2, "infer_equilibrium: lattice too coarse");
        cells *= p;
    }
    const int d = model.layout().d;
    Mat lattice(d, cells);
    double vol = 1.0;
    std::vector<double> dx(d);
    for (int a = 0; a < d; ++a) {
        dx[a] = box.side(a) / lattice_pts[a];
        vol *= dx[a];
    }
    for (int i = 0; i < cells; ++i) {
        int rem = i;
        for (int a = 0; a < d; ++a) {
            const int ia = rem % lattice_pts[a];
            rem /= lattice_pts[a];
            lattice(a, i) = box.lo[a] + (ia + 0.5) * dx[a];
        }
    }
    out.lattice = lattice;

    const auto t0 = std::chrono::steady_clock::now();
    const Mat dens = operator_eval(model, code, lattice);  // cells x N
    out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    const int N = model.arch().N;
    out.fields.resize(N);
    out.masses.resize(N);
    for (int n = 0; n < N; ++n) {
        out.fields[n] = dens.col(n);
        out.masses[n] = dens.col(n).sum() * vol;
    }
    return out;
}

std::string code_digest(const BoundaryCode& code) {
    std::uint64_t h = 1469598103934665603ULL;
    const auto* bytes = reinterpret_cast<const unsigned char*>(code.flat.data());
    for (std::size_t i = 0; i < sizeof(double) * code.flat.size(); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ULL;
    }
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
    return buf;
}

void write_session_csv(const std::vector<SessionRow>& report, const std::string& path) {
    CsvWriter csv({"iteration", "code_digest", "inner_rounds", "l_pino"});
    for (const auto& r : report)
        csv.add_row({std::to_string(r.iteration), r.code_digest, std::to_string(r.inner_rounds),
                     r.skipped ? "nan" : CsvWriter::format(r.l_pino)});
    csv.write_atomic(path);
}

// --- checkpointing ---

std::string OperatorModel::to_json() const {
    Json j;
    j["schema_version"] = 1;
    j["kind"] = "density_operator";
    j["layout"] = {{"d", layout_.d},
                   {"max_obstacles", layout_.max_obstacles},
                   {"obstacle_kind", layout_.obstacle_kind == Obstacle::Kind::Circle ? "circle" : "ellipse"},
                   {"canonical_sort", layout_.canonical_sort}};
    j["arch"] = {{"N", arch_.N},
                 {"lift", arch_.lift},
                 {"layers", arch_.layers},
                 {"modes", arch_.modes},
                 {"box_lo", vec_to_json(arch_.box.lo)},
                 {"box_hi", vec_to_json(arch_.box.hi)}};
    j["params"] = vec_to_json(net_.params());
    return j.dump();
}

OperatorModel OperatorModel::from_json(const std::string& text) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw InvalidInput("operator checkpoint: malformed JSON");
    if (!j.contains("kind") || j["kind"].get<std::string>() != "density_operator")
        throw InvalidInput("operator checkpoint: wrong kind");
    if (j["schema_version"].get<int>() != 1)
        throw InvalidInput("operator checkpoint: unsupported schema version");
    BoundaryLayout layout;
    layout.d = j["layout"]["d"].get<int>();
    layout.max_obstacles = j["layout"]["max_obstacles"].get<int>();
    layout.obstacle_kind = j["layout"]["obstacle_kind"].get<std::string>() == "circle"
                               ? Obstacle::Kind::Circle
                               : Obstacle::Kind::Ellipse;
    layout.canonical_sort = j["layout"]["canonical_sort"].get<bool>();
    OperatorArch arch;
    arch.N = j["arch"]["N"].get<int>();
    arch.lift = j["arch"]["lift"].get<int>();
    arch.layers = j["arch"]["layers"].get<int>();
    arch.modes = j["arch"]["modes"].get<int>();
    arch.box.lo = vec_from_json(j["arch"]["box_lo"]);
    arch.box.hi = vec_from_json(j["arch"]["box_hi"]);
    OperatorModel m(layout, arch, 0);
    const Vec p = vec_from_json(j["params"]);
    require(static_cast<int>(p.size()) == m.n_params(),
            "operator checkpoint: parameter size mismatch");
    m.params() = p;
    return m;
}

void OperatorModel::save(const std::string& path) const { atomic_write_text(path, to_json()); }

OperatorModel OperatorModel::load(const std::string& path) { return from_json(read_text(path)); }

OperatorModel OperatorModel::load(const std::string& path, const BoundaryLayout& expect) {
    OperatorModel m = from_json(read_text(path));
    if (!(m.layout() == expect))
        throw InvalidInput("operator checkpoint: boundary-code layout mismatch");
    return m;
}

}  // namespace mfgflow
