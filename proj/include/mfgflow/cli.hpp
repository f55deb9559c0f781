#pragma once

#include "mfgflow/common.hpp"
#include "mfgflow/fbsde.hpp"
#include "mfgflow/json_io.hpp"
#include "mfgflow/operator_net.hpp"

#include <optional>
#include <string>

namespace mfgflow {

/// Exit codes of the experiment runner.
enum ExitCode : int {
    kOk = 0,
    kSchemaViolation = 2,
    kNonConvergence = 3,
    kIoFailure = 4,
};

enum class Command { TrainFixed, TrainOperator, Infer, Oracle, Eval, Plot };

/// Validated run configuration; constructed from a JSON file plus flag
/// overrides. Unknown keys anywhere are rejected before any compute starts.
struct RunConfig {
    Command command = Command::TrainFixed;
    std::uint64_t seed = 1;
    std::string out;
    std::string scenario_path;
    std::string family;
    std::string ckpt_flow, ckpt_value, ckpt_operator;
    std::string device = "cpu";

    FixedTrainOptions train;
    OperatorTrainOptions op_train;
    int op_budget = 8;
    int op_N = 16;
    double op_T = 1.0;
    int op_lift = 32;
    int op_layers = 4;
    int op_modes = 12;
    struct {
        std::vector<int> points;
        int n_t = 0;
        double damping = 0.5;
        int max_iter = 50;
    } grid;
    struct {
        int agents = 1000;
        double pair_radius = 0.1;
        int resolution = 200;
        std::vector<std::string> flows;
    } eval;
    struct {
        int agents = 1000;
        int panel_px = 300;
    } plot;
    struct {
        int resolution = 100;
    } infer;
};

/// Parse and validate; throws InvalidInput on any schema violation.
RunConfig parse_run_config(const Json& j);
RunConfig load_run_config(const std::string& path);

/// Flag overrides applied after the file is parsed.
struct CliOverrides {
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out;
    std::optional<std::string> checkpoint;
    std::optional<std::string> family;
    std::optional<std::string> device;
};
void apply_overrides(RunConfig& cfg, const CliOverrides& ov);

/// Execute one command; writes artifacts under cfg.out and returns an exit code.
int run(const RunConfig& cfg);

/// Default output root: MFGFLOW_OUT_ROOT or "./out".
std::string default_out_root();

}  // namespace mfgflow
