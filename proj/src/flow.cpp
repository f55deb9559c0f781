#include "mfgflow/flow.hpp"

#include "mfgflow/json_io.hpp"

#include <cmath>

namespace mfgflow {

namespace {
constexpr double kLog2Pi = 1.8378770664093454836;
}

// --- FlowBlock ---

FlowBlock FlowBlock::affine(int d, double cap) {
    FlowBlock b;
    b.type_ = Type::AffineDiag;
    b.d_ = d;
    b.cap_ = cap;
    b.params_ = Vec::Zero(2 * d);
    return b;
}

FlowBlock FlowBlock::coupling(int d, bool odd_active, int hidden, double s_cap) {
    require(d >= 2, "coupling blocks need d >= 2");
    FlowBlock b;
    b.type_ = Type::Coupling;
    b.d_ = d;
    b.cap_ = s_cap;
    for (int i = 0; i < d; ++i)
        ((i % 2 == 1) == odd_active ? b.active_ : b.passive_).push_back(i);
    const int na = static_cast<int>(b.active_.size());
    const int np = static_cast<int>(b.passive_.size());
    b.net_ = Mlp1h(np, hidden, 2 * na);
    return b;
}

int FlowBlock::n_params() const {
    return type_ == Type::AffineDiag ? static_cast<int>(params_.size()) : net_.n_params();
}

void FlowBlock::get_params(Vec& out, int offset) const {
    if (type_ == Type::AffineDiag)
        out.segment(offset, params_.size()) = params_;
    else
        out.segment(offset, net_.n_params()) = net_.params();
}

void FlowBlock::set_params(const Vec& in, int offset) {
    if (type_ == Type::AffineDiag)
        params_ = in.segment(offset, params_.size());
    else
        net_.params() = in.segment(offset, net_.n_params());
}

void FlowBlock::init_random(const CounterRng& rng, std::uint64_t stream) {
    if (type_ == Type::Coupling) {
        // random conditioner trunk, zero output layer: the block starts as the
        // identity map while gradients can still flow through the trunk
        net_.init_random(rng, stream, 1.0);
        const int h = net_.hidden_dim(), in = net_.in_dim(), out = net_.out_dim();
        net_.params().segment(h * in + h, out * h + out).setZero();
    }
}

Mat FlowBlock::select(const Mat& X, const std::vector<int>& idx) const {
    Mat out(idx.size(), X.cols());
    for (std::size_t i = 0; i < idx.size(); ++i) out.row(i) = X.row(idx[i]);
    return out;
}

void FlowBlock::scatter_add(Mat& X, const Mat& rows, const std::vector<int>& idx) const {
    for (std::size_t i = 0; i < idx.size(); ++i) X.row(idx[i]) += rows.row(i);
}

Mat FlowBlock::forward(const Mat& X, Vec* logdet, FwdCache* cache) const {
    const int m = static_cast<int>(X.cols());
    if (type_ == Type::AffineDiag) {
        const Vec s = (cap_ * (params_.head(d_) / cap_).array().tanh()).matrix();
        const Vec t = params_.tail(d_);
        Mat Y = (X.array().colwise() * s.array().exp()).colwise() + t.array();
        if (logdet) logdet->array() += s.sum();
        if (cache) {
            cache->X = X;
            cache->S = s;
        }
        return Y;
    }
    const Mat XA = select(X, passive_);
    Mlp1h::Cache ncache;
    const Mat R = net_.forward_cached(XA, ncache);
    const int na = static_cast<int>(active_.size());
    const Mat S = cap_ * (R.topRows(na) / cap_).array().tanh();
    const Mat T = R.bottomRows(na);
    Mat Y = X;
    const Mat XB = select(X, active_);
    const Mat YB = XB.array() * S.array().exp() + T.array();
    for (int i = 0; i < na; ++i) Y.row(active_[i]) = YB.row(i);
    if (logdet) logdet->noalias() += S.colwise().sum().transpose();
    if (cache) {
        cache->X = X;
        cache->S = S;
        cache->net = std::move(ncache);
    }
    (void)m;
    return Y;
}

Mat FlowBlock::inverse(const Mat& Y, Vec* logdet, FwdCache* cache) const {
    if (type_ == Type::AffineDiag) {
        const Vec s = (cap_ * (params_.head(d_) / cap_).array().tanh()).matrix();
        const Vec t = params_.tail(d_);
        Mat X = ((Y.array().colwise() - t.array()).colwise() * (-s).array().exp()).matrix();
        if (logdet) logdet->array() -= s.sum();
        if (cache) {
            cache->X = X;
            cache->S = s;
        }
        return X;
    }
    const Mat YA = select(Y, passive_);
    Mlp1h::Cache ncache;
    const Mat R = net_.forward_cached(YA, ncache);
    const int na = static_cast<int>(active_.size());
    const Mat S = cap_ * (R.topRows(na) / cap_).array().tanh();
    const Mat T = R.bottomRows(na);
    Mat X = Y;
    const Mat YB = select(Y, active_);
    const Mat XB = (YB.array() - T.array()) * (-S).array().exp();
    for (int i = 0; i < na; ++i) X.row(active_[i]) = XB.row(i);
    if (logdet) logdet->noalias() -= S.colwise().sum().transpose();
    if (cache) {
        cache->X = X;
        cache->S = S;
        cache->net = std::move(ncache);
    }
    return X;
}

void FlowBlock::forward_vjp(const FwdCache& cache, const Mat& dY, Mat& dX, Vec& grad,
                            int offset) const {
    if (type_ == Type::AffineDiag) {
        const Vec& s = cache.S;
        const Vec es = s.array().exp();
        dX = dY.array().colwise() * es.array();
        // d s_applied / d s_raw for the bounded reparameterisation
        const Vec dsdraw = (1.0 - (s.array() / cap_).square()).matrix();
        for (int i = 0; i < d_; ++i) {
            grad[offset + i] +=
                (dY.row(i).array() * cache.X.row(i).array()).sum() * es[i] * dsdraw[i];
            grad[offset + d_ + i] += dY.row(i).sum();
        }
        return;
    }
    const int na = static_cast<int>(active_.size());
    const Mat dYB = select(dY, active_);
    const Mat ES = cache.S.array().exp();
    const Mat XB = select(cache.X, active_);
    Mat dS = dYB.array() * XB.array() * ES.array();
    dS.array() *= (1.0 - (cache.S.array() / cap_).square());
    Mat dR(2 * na, dY.cols());
    dR.topRows(na) = dS;
    dR.bottomRows(na) = dYB;
    Vec ngrad = Vec::Zero(net_.n_params());
    Mat dXA;
    net_.backward(cache.net, dR, ngrad, &dXA);
    grad.segment(offset, net_.n_params()) += ngrad;

    dX = Mat::Zero(d_, dY.cols());
    for (int i = 0; i < na; ++i) dX.row(active_[i]) = dYB.row(i).array() * ES.row(i).array();
    for (std::size_t i = 0; i < passive_.size(); ++i)
        dX.row(passive_[i]) = dY.row(passive_[i]) + dXA.row(i);
}

void FlowBlock::inverse_vjp(const FwdCache& cache, const Mat& dX, const Vec& dlogdet,
                            Mat& dY, Vec& grad, int offset) const {
    // cache values come from inverse(): cache.X is the pre-image, cache.S the
    // applied log-scales; the conditioner (if any) was evaluated on passive
    // coordinates which the block leaves unchanged.
    if (type_ == Type::AffineDiag) {
        const Vec& s = cache.S;
        const Vec ems = (-s).array().exp();
        dY = dX.array().colwise() * ems.array();
        const Vec dsdraw = (1.0 - (s.array() / cap_).square()).matrix();
        const double wsum = dlogdet.sum();
        for (int i = 0; i < d_; ++i) {
            double gs = -(dX.row(i).array() * cache.X.row(i).array()).sum();  // via X = (Y-t)e^{-s}
            gs -= wsum;                                                       // via logdet_inv = -sum(s)
            grad[offset + i] += gs * dsdraw[i];
            grad[offset + d_ + i] += -(dX.row(i).array() * ems[i]).sum();
        }
        return;
    }
    const int na = static_cast<int>(active_.size());
    const Mat dXB = select(dX, active_);
    const Mat EMS = (-cache.S).array().exp();
    const Mat XB = select(cache.X, active_);
    const Mat dYB = dXB.array() * EMS.array();
    Mat dS = -(dXB.array() * XB.array());
    dS.array() -= dlogdet.transpose().replicate(na, 1).array();
    dS.array() *= (1.0 - (cache.S.array() / cap_).square());
    Mat dR(2 * na, dX.cols());
    dR.topRows(na) = dS;
    dR.bottomRows(na) = -dYB;
    Vec ngrad = Vec::Zero(net_.n_params());
    Mat dYA;
    net_.backward(cache.net, dR, ngrad, &dYA);
    grad.segment(offset, net_.n_params()) += ngrad;

    dY = Mat::Zero(d_, dX.cols());
    for (int i = 0; i < na; ++i) dY.row(active_[i]) = dYB.row(i);
    for (std::size_t i = 0; i < passive_.size(); ++i)
        dY.row(passive_[i]) = dX.row(passive_[i]) + dYA.row(i);
}

std::string FlowBlock::type_name() const {
    return type_ == Type::AffineDiag ? "affine_diag" : "coupling";
}

// --- TransitionMap ---

Mat TransitionMap::forward(const Mat& X, Vec* logdet,
                           std::vector<FlowBlock::FwdCache>* caches) const {
    if (caches) caches->resize(blocks.size());
    Mat h = X;
    for (std::size_t i = 0; i < blocks.size(); ++i)
        h = blocks[i].forward(h, logdet, caches ? &(*caches)[i] : nullptr);
    return h;
}

Mat TransitionMap::inverse(const Mat& Y, Vec* logdet,
                           std::vector<FlowBlock::FwdCache>* caches) const {
    if (caches) caches->resize(blocks.size());
    Mat h = Y;
    for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i)
        h = blocks[i].inverse(h, logdet, caches ? &(*caches)[i] : nullptr);
    return h;
}

int TransitionMap::n_params() const {
    int n = 0;
    for (const auto& b : blocks) n += b.n_params();
    return n;
}

// --- DensityFlow ---

DensityFlow::DensityFlow(int d, int N, const Vec& mu0_mean, double mu0_std, const Box& box,
                         int blocks_per_step, int coupling_hidden, const CounterRng& rng)
    : d_(d), N_(N), mu0_mean_(mu0_mean), mu0_std_(mu0_std), box_(box) {
    require(d >= 1, "DensityFlow: d must be >= 1");
    require(N >= 1, "DensityFlow: N must be >= 1");
    require(mu0_std > 0.0, "DensityFlow: base std must be > 0");
    require(static_cast<int>(mu0_mean.size()) == d, "DensityFlow: base mean dimension mismatch");
    maps_.resize(N);
    std::uint64_t stream = 1;
    for (int n = 0; n < N; ++n) {
        for (int u = 0; u < blocks_per_step; ++u) {
            maps_[n].blocks.push_back(FlowBlock::affine(d));
            if (d >= 2) {
                FlowBlock c = FlowBlock::coupling(d, u % 2 == 1, coupling_hidden);
                c.init_random(rng, stream++);
                maps_[n].blocks.push_back(std::move(c));
            }
        }
    }
    index_params();
}

void DensityFlow::index_params() {
    map_offsets_.clear();
    int off = 0;
    for (const auto& m : maps_) {
        map_offsets_.push_back(off);
        off += m.n_params();
    }
    n_params_ = off;
}

Mat DensityFlow::sample_base(int M, std::uint64_t seed) const {
    const CounterRng rng = CounterRng(seed).stream(0x62617365ULL);  // base-sample stream
    Mat Z = rng.normal_matrix(d_, M, 0);
    return (mu0_std_ * Z).colwise() + mu0_mean_;
}

Mat DensityFlow::push_to(int n, const Mat& X0) const {
    require(n >= 0 && n <= N_, "push_to: step index out of range [0, N]");
    Mat h = X0;
    for (int m = 0; m < n; ++m) h = maps_[m].forward(h);
    return h;
}

Mat DensityFlow::push_samples(int n, int M, std::uint64_t seed) const {
    require(n >= 0 && n <= N_, "push_samples: step index out of range [0, N]");
    return push_to(n, sample_base(M, seed));
}

std::vector<Mat> DensityFlow::push_all(const Mat& X0) const {
    std::vector<Mat> levels(N_ + 1);
    levels[0] = X0;
    for (int m = 0; m < N_; ++m) levels[m + 1] = maps_[m].forward(levels[m]);
    return levels;
}

Vec DensityFlow::log_base(const Mat& X) const {
    const Mat centered = X.colwise() - mu0_mean_;
    const double c = -0.5 * d_ * kLog2Pi - d_ * std::log(mu0_std_);
    return (c - centered.colwise().squaredNorm().array() / (2.0 * mu0_std_ * mu0_std_))
        .matrix()
        .transpose();
}

Vec DensityFlow::log_density(int n, const Mat& X) const {
    require(n >= 0 && n <= N_, "log_density: step index out of range [0, N]");
    Vec logdet = Vec::Zero(X.cols());
    Mat h = X;
    for (int m = n - 1; m >= 0; --m) h = maps_[m].inverse(h, &logdet);
    return log_base(h) + logdet;
}

Vec DensityFlow::get_params() const {
    Vec out(n_params_);
    for (std::size_t m = 0; m < maps_.size(); ++m) {
        int off = map_offsets_[m];
        for (const auto& b : maps_[m].blocks) {
            b.get_params(out, off);
            off += b.n_params();
        }
    }
    return out;
}

void DensityFlow::set_params(const Vec& p) {
    require(static_cast<int>(p.size()) == n_params_, "set_params: size mismatch");
    for (std::size_t m = 0; m < maps_.size(); ++m) {
        int off = map_offsets_[m];
        for (auto& b : maps_[m].blocks) {
            b.set_params(p, off);
            off += b.n_params();
        }
    }
}

DensityFlow::ForwardTrace DensityFlow::push_all_traced(const Mat& X0) const {
    ForwardTrace tr;
    tr.levels.resize(N_ + 1);
    tr.map_caches.resize(N_);
    tr.logdets.assign(N_, Vec::Zero(X0.cols()));
    tr.levels[0] = X0;
    for (int m = 0; m < N_; ++m)
        tr.levels[m + 1] = maps_[m].forward(tr.levels[m], &tr.logdets[m], &tr.map_caches[m]);
    return tr;
}

void DensityFlow::backward_pushforward(const ForwardTrace& trace,
                                       const std::vector<Mat>& per_level_grads,
                                       Vec& grad) const {
    const int M = static_cast<int>(trace.levels[0].cols());
    Mat lambda = Mat::Zero(d_, M);
    if (static_cast<int>(per_level_grads.size()) > N_ && per_level_grads[N_].size() > 0)
        lambda = per_level_grads[N_];
    for (int m = N_ - 1; m >= 0; --m) {
        // walk blocks of map m in reverse application order
        const auto& blocks = maps_[m].blocks;
        int off = map_offsets_[m] + maps_[m].n_params();
        for (int i = static_cast<int>(blocks.size()) - 1; i >= 0; --i) {
            off -= blocks[i].n_params();
            Mat dX;
            blocks[i].forward_vjp(trace.map_caches[m][i], lambda, dX, grad, off);
            lambda = std::move(dX);
        }
        if (m < static_cast<int>(per_level_grads.size()) && per_level_grads[m].size() > 0)
            lambda += per_level_grads[m];
    }
}

Vec DensityFlow::log_density_grad(int n, const Mat& X, const Vec& weights, Vec& grad) const {
    require(n >= 0 && n <= N_, "log_density_grad: step index out of range");
    // inverse chain with caches, query level n down to the base
    std::vector<std::vector<FlowBlock::FwdCache>> caches(n);
    Vec logdet = Vec::Zero(X.cols());
    Mat h = X;
    for (int m = n - 1; m >= 0; --m) h = maps_[m].inverse(h, &logdet, &caches[m]);
    const Vec value = log_base(h) + logdet;

    // adjoint: start at the base point, ascend to the query level
    const Mat centered = h.colwise() - mu0_mean_;
    Mat lambda =
        (-centered / (mu0_std_ * mu0_std_)).array().rowwise() * weights.transpose().array();
    for (int m = 0; m < n; ++m) {
        const auto& blocks = maps_[m].blocks;
        int off = map_offsets_[m];
        for (std::size_t i = 0; i < blocks.size(); ++i) {
            Mat dY;
            blocks[i].inverse_vjp(caches[m][i], lambda, weights, dY, grad, off);
            off += blocks[i].n_params();
            lambda = std::move(dY);
        }
    }
    return value;
}

// --- serialization ---

std::string DensityFlow::to_json() const {
    Json j;
    j["schema_version"] = 1;
    j["kind"] = "density_flow";
    j["d"] = d_;
    j["N"] = N_;
    j["base"] = {{"mean", vec_to_json(mu0_mean_)}, {"std", mu0_std_}};
    j["box"] = {{"lo", vec_to_json(box_.lo)}, {"hi", vec_to_json(box_.hi)}};
    Json maps = Json::array();
    for (const auto& m : maps_) {
        Json blocks = Json::array();
        for (const auto& b : m.blocks) {
            Json jb;
            jb["type"] = b.type_name();
            jb["cap"] = b.cap();
            if (b.type() == FlowBlock::Type::AffineDiag) {
                jb["params"] = vec_to_json(b.affine_params());
            } else {
                jb["active_odd"] = (b.active()[0] % 2 == 1);
                jb["hidden"] = b.hidden();
                jb["params"] = vec_to_json(b.net().params());
            }
            blocks.push_back(jb);
        }
        maps.push_back(blocks);
    }
    j["maps"] = maps;
    return j.dump();
}

DensityFlow DensityFlow::from_json(const std::string& text) {
    Json j = Json::parse(text, nullptr, false);
    if (j.is_discarded()) throw InvalidInput("flow checkpoint: malformed JSON");
    if (!j.contains("schema_version") || j["schema_version"].get<int>() != 1)
        throw InvalidInput("flow checkpoint: unsupported schema version");
    if (!j.contains("kind") || j["kind"].get<std::string>() != "density_flow")
        throw InvalidInput("flow checkpoint: wrong kind");

    DensityFlow f;
    f.d_ = j["d"].get<int>();
    f.N_ = j["N"].get<int>();
    f.mu0_mean_ = vec_from_json(j["base"]["mean"]);
    f.mu0_std_ = j["base"]["std"].get<double>();
    f.box_.lo = vec_from_json(j["box"]["lo"]);
    f.box_.hi = vec_from_json(j["box"]["hi"]);
    for (const Json& jm : j["maps"]) {
        TransitionMap tm;
        for (const Json& jb : jm) {
            const std::string type = jb["type"].get<std::string>();
            if (type == "affine_diag") {
                FlowBlock b = FlowBlock::affine(f.d_, jb["cap"].get<double>());
                b.affine_params() = vec_from_json(jb["params"]);
                tm.blocks.push_back(std::move(b));
            } else if (type == "coupling") {
                FlowBlock b = FlowBlock::coupling(f.d_, jb["active_odd"].get<bool>(),
                                                  jb["hidden"].get<int>(), jb["cap"].get<double>());
                const Vec p = vec_from_json(jb["params"]);
                require(static_cast<int>(p.size()) == b.net().n_params(),
                        "flow checkpoint: coupling parameter size mismatch");
                b.net().params() = p;
                tm.blocks.push_back(std::move(b));
            } else {
                throw InvalidInput("flow checkpoint: unknown block type " + type);
            }
        }
        f.maps_.push_back(std::move(tm));
    }
    require(static_cast<int>(f.maps_.size()) == f.N_, "flow checkpoint: map count mismatch");
    f.index_params();
    return f;
}

void DensityFlow::save(const std::string& path) const { atomic_write_text(path, to_json()); }

DensityFlow DensityFlow::load(const std::string& path) { return from_json(read_text(path)); }

}  // namespace mfgflow
