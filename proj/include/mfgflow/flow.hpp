#pragma once

#include "mfgflow/common.hpp"
#include "mfgflow/net.hpp"
#include "mfgflow/rng.hpp"

#include <string>
#include <vector>

namespace mfgflow {

/// One invertible unit of a transition map. Affine units rescale and shift
/// every coordinate; coupling units (d >= 2 only) transform one half of the
/// coordinates conditioned on the other half. Both have closed-form inverses
/// and triangular Jacobians, so log-determinants are exact.
class FlowBlock {
public:
    enum class Type { AffineDiag, Coupling };

    static FlowBlock affine(int d, double cap = 3.0);
    static FlowBlock coupling(int d, bool odd_active, int hidden, double s_cap = 1.5);

    Type type() const { return type_; }
    int dim() const { return d_; }
    int n_params() const;
    void get_params(Vec& out, int offset) const;
    void set_params(const Vec& in, int offset);
    void init_random(const CounterRng& rng, std::uint64_t stream);

    struct FwdCache {
        Mat X;            // block input
        Mat S;            // applied log-scales per coordinate (affine: column-constant)
        Mlp1h::Cache net; // coupling conditioner activations
        Mat raw;          // coupling conditioner raw output
    };
    /// Y = f(X); adds per-column log|det df/dx| into logdet (may be null).
    Mat forward(const Mat& X, Vec* logdet, FwdCache* cache) const;
    /// X = f^{-1}(Y); adds per-column log|det df^{-1}/dy| into logdet.
    Mat inverse(const Mat& Y, Vec* logdet, FwdCache* cache) const;

    /// Reverse-mode through forward(): consumes dY, emits dX, accumulates
    /// parameter gradients at `offset` in `grad`.
    void forward_vjp(const FwdCache& cache, const Mat& dY, Mat& dX, Vec& grad, int offset) const;
    /// Reverse-mode through inverse() and its log-det: consumes the gradient
    /// dX at the block output and per-column weights on the log-det term.
    void inverse_vjp(const FwdCache& cache, const Mat& dX, const Vec& dlogdet,
                     Mat& dY, Vec& grad, int offset) const;

    // serialization
    std::string type_name() const;
    const std::vector<int>& active() const { return active_; }
    int hidden() const { return net_.hidden_dim(); }
    double cap() const { return cap_; }
    const Vec& affine_params() const { return params_; }
    const Mlp1h& net() const { return net_; }
    Vec& affine_params() { return params_; }
    Mlp1h& net() { return net_; }

private:
    Type type_ = Type::AffineDiag;
    int d_ = 0;
    double cap_ = 3.0;                // bound on per-coordinate log-scales
    Vec params_;                      // affine: [s_raw(d), t(d)]
    Mlp1h net_;                       // coupling: |passive| -> 2|active|
    std::vector<int> active_, passive_;

    Mat select(const Mat& X, const std::vector<int>& idx) const;
    void scatter_add(Mat& X, const Mat& rows, const std::vector<int>& idx) const;
};

/// One step of the flow: a short stack of blocks.
struct TransitionMap {
    std::vector<FlowBlock> blocks;

    Mat forward(const Mat& X, Vec* logdet = nullptr,
                std::vector<FlowBlock::FwdCache>* caches = nullptr) const;
    Mat inverse(const Mat& Y, Vec* logdet = nullptr,
                std::vector<FlowBlock::FwdCache>* caches = nullptr) const;
    int n_params() const;
};

/// Discrete-time normalizing flow: a Gaussian base density carried through N
/// invertible transition maps. Sampling and exact log-densities are available
/// at every step; every marginal integrates to one by construction.
class DensityFlow {
public:
    DensityFlow() = default;
    /// Identity-initialised flow (every marginal equals the base density).
    DensityFlow(int d, int N, const Vec& mu0_mean, double mu0_std, const Box& box,
                int blocks_per_step = 2, int coupling_hidden = 16,
                const CounterRng& rng = CounterRng(0));

    int dim() const { return d_; }
    int steps() const { return N_; }
    const Box& box() const { return box_; }
    const Vec& base_mean() const { return mu0_mean_; }
    double base_std() const { return mu0_std_; }

    /// M samples of the marginal at step n (n = 0 returns base samples).
    /// Deterministic in (seed, M); sample j never depends on M.
    Mat push_samples(int n, int M, std::uint64_t seed) const;
    Mat sample_base(int M, std::uint64_t seed) const;

    /// Forward transport of given base points through maps 1..n.
    Mat push_to(int n, const Mat& X0) const;
    /// All levels 0..N for a base batch (levels[n] is the step-n position).
    std::vector<Mat> push_all(const Mat& X0) const;

    /// Exact log-density of the step-n marginal at the given points.
    Vec log_density(int n, const Mat& X) const;
    Vec log_base(const Mat& X) const;
    /// Marginal at the final step (the flow's terminal density).
    Vec log_terminal_density(const Mat& X) const { return log_density(N_, X); }

    // --- parameter plumbing for training ---
    int n_params() const { return n_params_; }
    Vec get_params() const;
    void set_params(const Vec& p);

    struct ForwardTrace {
        std::vector<Mat> levels;                                   // 0..N
        std::vector<std::vector<FlowBlock::FwdCache>> map_caches;  // per map
        std::vector<Vec> logdets;                                  // per map, per column
    };
    ForwardTrace push_all_traced(const Mat& X0) const;

    /// Adjoint through the forward transport: per_level_grads[n] (may be
    /// empty) is dLoss/dx at level n; parameter gradients go into grad.
    void backward_pushforward(const ForwardTrace& trace,
                              const std::vector<Mat>& per_level_grads, Vec& grad) const;

    /// log-density values at level n plus parameter gradients of
    /// sum_j weights[j] * log mu_n(X_j).
    Vec log_density_grad(int n, const Mat& X, const Vec& weights, Vec& grad) const;

    const std::vector<TransitionMap>& maps() const { return maps_; }
    std::vector<TransitionMap>& maps() { return maps_; }
    /// Parameter offset of map `m` (blocks laid out consecutively).
    int map_offset(int m) const { return map_offsets_[m]; }

    // --- checkpointing ---
    void save(const std::string& path) const;
    static DensityFlow load(const std::string& path);
    std::string to_json() const;
    static DensityFlow from_json(const std::string& text);

private:
    void index_params();

    int d_ = 0, N_ = 0;
    Vec mu0_mean_;
    double mu0_std_ = 1.0;
    Box box_;
    std::vector<TransitionMap> maps_;
    std::vector<int> map_offsets_;
    int n_params_ = 0;
};

}  // namespace mfgflow
