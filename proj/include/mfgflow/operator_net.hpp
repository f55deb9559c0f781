#pragma once

#include "mfgflow/core.hpp"
#include "mfgflow/fbsde.hpp"
#include "mfgflow/flow.hpp"
#include "mfgflow/net.hpp"

#include <functional>
#include <string>
#include <vector>

namespace mfgflow {

/// Architecture of the density operator: a frequency-truncated sinusoidal
/// encoding of the query point over a fixed reference box, concatenated with
/// the boundary-code vector, lifted and mixed through dense layers. The
/// exponential output head keeps every density value non-negative.
struct OperatorArch {
    int N = 16;        // output length: one density value per time step
    int lift = 32;     // lifting width
    int layers = 4;    // mixing layers
    int modes = 12;    // retained frequencies per axis
    Box box;           // reference box for the spectral encoding

    bool operator==(const OperatorArch& o) const {
        return N == o.N && lift == o.lift && layers == o.layers && modes == o.modes &&
               box.lo == o.box.lo && box.hi == o.box.hi;
    }
};

/// Neural operator G: (boundary code, state) -> density values at all N steps.
class OperatorModel {
public:
    OperatorModel() = default;
    OperatorModel(const BoundaryLayout& layout, const OperatorArch& arch, std::uint64_t seed);

    const BoundaryLayout& layout() const { return layout_; }
    const OperatorArch& arch() const { return arch_; }
    int n_params() const { return net_.n_params(); }
    const Vec& params() const { return net_.params(); }
    Vec& params() { return net_.params(); }
    const MlpDeep& net() const { return net_; }
    MlpDeep& net() { return net_; }

    /// Feature vector per query column: [code, scaled x, sin/cos harmonics].
    Mat features(const BoundaryCode& code, const Mat& queries) const;
    int feature_dim() const;

    void save(const std::string& path) const;
    static OperatorModel load(const std::string& path);
    /// Load and reject checkpoints whose code layout differs from `expect`.
    static OperatorModel load(const std::string& path, const BoundaryLayout& expect);
    std::string to_json() const;
    static OperatorModel from_json(const std::string& text);

private:
    BoundaryLayout layout_;
    OperatorArch arch_;
    MlpDeep net_;
};

/// Density values for M query points at all N steps (rows = queries).
/// Deterministic; rejects layout mismatches and non-finite queries.
Mat operator_eval(const OperatorModel& model, const BoundaryCode& code, const Mat& queries);

/// One operator training sample: a boundary code, query points and the
/// converged flow's density values at those points for every step.
struct TrainSample {
    BoundaryCode code;
    Mat queries;  // d x M
    Mat targets;  // M x N, non-negative
};

/// Squared-error operator loss: mean over steps and queries.
double loss_pino(const OperatorModel& model, const TrainSample& sample);

/// Queries drawn from the flow's marginals (step mixture), targets from its
/// exact densities.
TrainSample make_train_sample(const DensityFlow& flow, const BoundaryCode& code, int M,
                              std::uint64_t seed);

/// Plain regression fit of the operator to a set of samples; used by the
/// outer loop and by evaluation harnesses.
void fit_operator(OperatorModel& model, const std::vector<TrainSample>& samples, int epochs,
                  double lr, std::uint64_t seed, int minibatch = 4);

struct OperatorTrainOptions {
    FixedTrainOptions inner;
    int queries_per_sample = 256;
    int epochs_per_sample = 40;
    double lr = 1e-3;
    int warm_ramp_iters = 4;     // outer iterations before the warm pull reaches full weight
    double warm_weight = 1.0;
    std::uint64_t seed = 1;
};

struct SessionRow {
    int iteration = 0;
    std::string code_digest;
    int inner_rounds = 0;
    double l_pino = std::numeric_limits<double>::quiet_NaN();
    bool skipped = false;
};

struct OperatorTrainResult {
    OperatorModel model;
    std::vector<SessionRow> report;
};

using ScenarioSampler = std::function<BoundaryCode(int)>;
using ProblemBuilder = std::function<MFGProblem(const BoundaryCode&)>;

/// Outer training loop: draw a boundary code, warm-start an inner fixed-
/// coefficient solve from the current operator, then regress the operator on
/// the converged flow's densities. Non-converged inner solves are logged and
/// skipped, never used as targets.
OperatorTrainResult train_pionm(const ScenarioSampler& sampler, const ProblemBuilder& builder,
                                int budget, const BoundaryLayout& layout,
                                const OperatorArch& arch, const OperatorTrainOptions& opts);

/// Warm-start hook backed by a trained operator.
WarmStart operator_warm_start(const OperatorModel& model, const BoundaryCode& code, double weight);

struct InferenceResult {
    std::vector<int> lattice_pts;     // per axis
    Mat lattice;                      // d x (prod pts) cell centers
    std::vector<Vec> fields;          // N fields over the lattice
    std::vector<double> masses;       // quadrature mass per field
    double seconds = 0;
};

/// Densities at every step on a lattice over the code's working box, with
/// per-field quadrature masses and the wall-clock time of the evaluation.
InferenceResult infer_equilibrium(const OperatorModel& model, const BoundaryCode& code,
                                  const std::vector<int>& lattice_pts, double T);

/// FNV-1a digest of the flat code vector (session report key).
std::string code_digest(const BoundaryCode& code);

void write_session_csv(const std::vector<SessionRow>& report, const std::string& path);

}  // namespace mfgflow
