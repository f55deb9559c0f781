#pragma once

#include "mfgflow/core.hpp"
#include "mfgflow/flow.hpp"
#include "mfgflow/net.hpp"

#include <functional>
#include <optional>
#include <vector>

namespace mfgflow {

/// Value-function side of the solver: a dedicated network for u(0, x) plus
/// one network per time step whose vector head represents Z_{t_n} = [du/dx] sigma
/// and whose scalar head carries u(x, t_n) for the interior-time residual.
class ValuePath {
public:
    ValuePath() = default;
    ValuePath(int d, int N, double sigma, int hidden, double z_cap, const CounterRng& rng);

    int dim() const { return d_; }
    int steps() const { return N_; }
    double sigma() const { return sigma_; }
    double z_cap() const { return z_cap_; }

    /// Z at step n (0..N-1) for a batch of states; soft-bounded by z_cap.
    Mat z_batch(const Mat& X, int n) const;
    /// Feedback control: alpha(x, t_n) = -z(x, t_n) / sigma.
    Mat control(const Mat& X, int n) const;
    /// Scalar value head: n = 0 uses the dedicated initial net, 1..N-1 the
    /// per-step heads. (The terminal value is the problem's g, not a net.)
    double u(const Vec& x, int n) const;
    Vec u_batch(const Mat& X, int n) const;
    Vec grad_u(const Vec& x, int n) const;
    double lap_u(const Vec& x, int n) const;

    // parameter plumbing
    int n_params() const { return n_params_; }
    Vec get_params() const;
    void set_params(const Vec& p);

    const Mlp1h& u0_net() const { return u0_; }
    Mlp1h& u0_net() { return u0_; }
    const std::vector<Mlp1h>& step_nets() const { return steps_; }
    std::vector<Mlp1h>& step_nets() { return steps_; }
    int u0_offset() const { return 0; }
    int step_offset(int n) const { return step_offsets_[n]; }

    std::string to_json() const;
    static ValuePath from_json(const std::string& text);
    void save(const std::string& path) const;
    static ValuePath load(const std::string& path);

private:
    int d_ = 0, N_ = 0;
    double sigma_ = 1.0, z_cap_ = 50.0;
    Mlp1h u0_;
    std::vector<Mlp1h> steps_;
    std::vector<int> step_offsets_;
    int n_params_ = 0;
};

/// Simulated forward/backward paths: states X, values Y and the Wiener
/// increments that drove them (variance T/N per coordinate).
struct PathBatch {
    std::vector<Mat> X;   // N+1 entries, d x M
    std::vector<Vec> Y;   // N+1 entries, length M
    std::vector<Mat> dW;  // N entries, d x M
    std::uint64_t seed = 0;

    int steps() const { return static_cast<int>(dW.size()); }
    int paths() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }
};

/// Euler scheme for the forward/backward pair under the current control:
///   dX = alpha dt + sigma dW,   dY = -(f + |alpha|^2/2) dt + Z . dW
/// with Y_0 = u(0, X_0). Population samples for the cost coupling are drawn
/// from the flow's marginals. Throws on non-finite states, reporting the step
/// index and parameter norms.
PathBatch simulate_paths(const MFGProblem& problem, const DensityFlow& flow,
                         const ValuePath& vp, int M, std::uint64_t seed);

/// Terminal matching loss: mean over paths of (g(X_T, muT) - Y_T)^2.
double loss_mkv(const PathBatch& batch, const DensityFlow& flow, const MFGProblem& problem);

/// Interface for evaluating a value function at grid steps; lets tests plug
/// closed-form solutions into the residual below.
struct ValueView {
    virtual ~ValueView() = default;
    virtual double u(const Vec& x, int n) const = 0;    // n = 1..N (N = terminal)
    virtual Vec grad_u(const Vec& x, int n) const = 0;
    virtual double lap_u(const Vec& x, int n) const = 0;
};

/// View of a trained ValuePath with the problem's terminal cost at n = N.
class PathValueView : public ValueView {
public:
    PathValueView(const ValuePath& vp, const MFGProblem& problem, Mat muT_samples);
    double u(const Vec& x, int n) const override;
    Vec grad_u(const Vec& x, int n) const override;
    double lap_u(const Vec& x, int n) const override;

private:
    const ValuePath& vp_;
    const MFGProblem& problem_;
    Mat muT_;
};

/// Pointwise equation residual at (x, t_n):
///   du/dt + nu * lap(u) - H(grad u) + f,
/// with du/dt a forward difference across step heads (backward at n = N).
double hjb_residual(const ValueView& view, const MFGProblem& problem, const Mat& mu_samples,
                    const Vec& x, int n);

/// Mean squared residual over samples of every marginal (n = 1..N).
double loss_hjb(const ValueView& view, const DensityFlow& flow, const MFGProblem& problem,
                int M, std::uint64_t seed);
double loss_hjb(const ValuePath& vp, const DensityFlow& flow, const MFGProblem& problem,
                int M, std::uint64_t seed);

/// Terminal-cost expectation under the flow's final marginal.
double loss_terminal(const DensityFlow& flow, const MFGProblem& problem, int M,
                     std::uint64_t seed);

/// Density targets used to pull the flow toward externally supplied marginals
/// during the early rounds of a solve.
struct WarmStart {
    std::function<Vec(const Mat& points, int n)> density_at;  // n = 1..N
    double weight = 1.0;
};

struct FixedTrainOptions {
    int max_rounds = 2000;
    int patience = 20;
    double tol_rel = 1e-4;
    int k_theta = 5;
    int k_phi = 5;
    int m_theta = 1024;
    int m_phi = 256;
    int mu_batch = 256;
    double lr_theta = 1e-3;
    double lr_phi = 1e-3;
    double w_fit = 1.0;
    double w_hjb = 0.05;
    double w_terminal = 0.05;
    double w_value_reg = 1.0;
    double warm_burnin_frac = 0.4;
    int value_hidden = 24;
    int coupling_hidden = 16;
    int blocks_per_step = 2;
    double z_cap = 50.0;
    std::uint64_t seed = 1;
};

struct TraceRow {
    int round = 0;
    double l_mkv = 0, l_hjb = 0, l_terminal = 0;
    double l_fit = 0, monitored = 0;
    double seconds = 0;
};

struct FixedTrainResult {
    DensityFlow flow;
    ValuePath value;
    std::vector<TraceRow> trace;
    bool converged = false;
    int rounds = 0;
    double best_monitored = 0;
};

/// Alternating solve of one fixed-coefficient instance: value-network updates
/// on the terminal-matching loss, then flow updates on the equation residual,
/// terminal cost and a path-law fit, until the monitored total plateaus.
/// Returns best-so-far parameters; `converged` is false if the round budget
/// ran out first.
FixedTrainResult train_fixed(const MFGProblem& problem, const FixedTrainOptions& opts,
                             const std::optional<WarmStart>& warm = std::nullopt);

namespace detail {

struct FlowLossParts {
    double fit = 0, hjb = 0, terminal = 0, warm = 0;
};

/// Objective and parameter gradient of one value-network update
/// (terminal matching plus the per-step head regression). Exposed for
/// gradient verification.
double theta_objective_grad(const MFGProblem& problem, const DensityFlow& flow,
                            const ValuePath& vp, const FixedTrainOptions& opts,
                            std::uint64_t seed, Vec& grad, double& l_mkv_out);

/// Objective parts and parameter gradient of one flow update.
FlowLossParts phi_objective_grad(const MFGProblem& problem, const DensityFlow& flow,
                                 const ValuePath& vp, const FixedTrainOptions& opts,
                                 std::uint64_t seed, double warm_weight,
                                 const std::optional<WarmStart>& warm, Vec& grad);

}  // namespace detail

/// Append-only training log: round, l_MKV, l_HJB, l_T, seconds.
void write_trace_csv(const std::vector<TraceRow>& trace, const std::string& path);

}  // namespace mfgflow
