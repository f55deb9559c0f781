#include "mfgflow/cli.hpp"

#include "mfgflow/grid_oracle.hpp"
#include "mfgflow/metrics.hpp"
#include "mfgflow/plot.hpp"
#include "mfgflow/scenarios.hpp"

#include <cstdlib>
#include <filesystem>
#include <iostream>

namespace mfgflow {

namespace {

Command command_from_string(const std::string& s) {
    if (s == "train-fixed") return Command::TrainFixed;
    if (s == "train-operator") return Command::TrainOperator;
    if (s == "infer") return Command::Infer;
    if (s == "oracle") return Command::Oracle;
    if (s == "eval") return Command::Eval;
    if (s == "plot") return Command::Plot;
    throw InvalidInput("config: unknown command \"" + s + "\"");
}

void parse_train(const Json& j, FixedTrainOptions& t) {
    reject_unknown_keys(j, {"max_rounds", "patience", "tol_rel", "k_theta", "k_phi", "m_theta",
                            "m_phi", "mu_batch", "lr_theta", "lr_phi", "w_fit", "w_hjb", "w_t",
                            "w_value_reg", "warm_burnin_frac", "value_hidden", "coupling_hidden",
                            "blocks_per_step", "z_cap"},
                        "config.train");
    if (j.contains("max_rounds")) t.max_rounds = json_int(j, "max_rounds", "config.train");
    if (j.contains("patience")) t.patience = json_int(j, "patience", "config.train");
    if (j.contains("tol_rel")) t.tol_rel = json_number(j, "tol_rel", "config.train");
    if (j.contains("k_theta")) t.k_theta = json_int(j, "k_theta", "config.train");
    if (j.contains("k_phi")) t.k_phi = json_int(j, "k_phi", "config.train");
    if (j.contains("m_theta")) t.m_theta = json_int(j, "m_theta", "config.train");
    if (j.contains("m_phi")) t.m_phi = json_int(j, "m_phi", "config.train");
    if (j.contains("mu_batch")) t.mu_batch = json_int(j, "mu_batch", "config.train");
    if (j.contains("lr_theta")) t.lr_theta = json_number(j, "lr_theta", "config.train");
    if (j.contains("lr_phi")) t.lr_phi = json_number(j, "lr_phi", "config.train");
    if (j.contains("w_fit")) t.w_fit = json_number(j, "w_fit", "config.train");
    if (j.contains("w_hjb")) t.w_hjb = json_number(j, "w_hjb", "config.train");
    if (j.contains("w_t")) t.w_terminal = json_number(j, "w_t", "config.train");
    if (j.contains("w_value_reg")) t.w_value_reg = json_number(j, "w_value_reg", "config.train");
    if (j.contains("warm_burnin_frac"))
        t.warm_burnin_frac = json_number(j, "warm_burnin_frac", "config.train");
    if (j.contains("value_hidden")) t.value_hidden = json_int(j, "value_hidden", "config.train");
    if (j.contains("coupling_hidden"))
        t.coupling_hidden = json_int(j, "coupling_hidden", "config.train");
    if (j.contains("blocks_per_step"))
        t.blocks_per_step = json_int(j, "blocks_per_step", "config.train");
    if (j.contains("z_cap")) t.z_cap = json_number(j, "z_cap", "config.train");
}

std::string join_path(const std::string& dir, const std::string& name) {
    return (std::filesystem::path(dir) / name).string();
}

}  // namespace

std::string default_out_root() {
    const char* env = std::getenv("MFGFLOW_OUT_ROOT");
    return env && *env ? env : "out";
}

RunConfig parse_run_config(const Json& j) {
    reject_unknown_keys(j, {"command", "seed", "out", "scenario", "family", "checkpoint", "train",
                            "operator_train", "grid", "eval", "plot", "infer", "device"},
                        "config");
    RunConfig cfg;
    if (!j.contains("command")) throw InvalidInput("config: missing key \"command\"");
    cfg.command = command_from_string(j["command"].get<std::string>());
    if (j.contains("seed")) {
        const long long s = j["seed"].get<long long>();
        if (s < 0) throw InvalidInput("config: seed must be non-negative");
        cfg.seed = static_cast<std::uint64_t>(s);
    }
    cfg.out = j.contains("out") ? j["out"].get<std::string>() : default_out_root();
    if (j.contains("scenario")) cfg.scenario_path = j["scenario"].get<std::string>();
    if (j.contains("family")) cfg.family = j["family"].get<std::string>();
    if (j.contains("device")) cfg.device = j["device"].get<std::string>();
    if (cfg.device != "cpu")
        throw InvalidInput("config: device \"" + cfg.device + "\" not supported (cpu only)");

    if (j.contains("checkpoint")) {
        const Json& c = j["checkpoint"];
        reject_unknown_keys(c, {"flow", "value", "operator"}, "config.checkpoint");
        if (c.contains("flow")) cfg.ckpt_flow = c["flow"].get<std::string>();
        if (c.contains("value")) cfg.ckpt_value = c["value"].get<std::string>();
        if (c.contains("operator")) cfg.ckpt_operator = c["operator"].get<std::string>();
    }
    if (j.contains("train")) parse_train(j["train"], cfg.train);
    if (j.contains("operator_train")) {
        const Json& o = j["operator_train"];
        reject_unknown_keys(o, {"budget", "queries", "epochs_per_sample", "lr", "lift", "layers",
                                "modes", "warm_ramp", "warm_weight", "N", "T", "inner"},
                            "config.operator_train");
        if (o.contains("queries"))
            cfg.op_train.queries_per_sample = json_int(o, "queries", "config.operator_train");
        if (o.contains("epochs_per_sample"))
            cfg.op_train.epochs_per_sample = json_int(o, "epochs_per_sample", "config.operator_train");
        if (o.contains("lr")) cfg.op_train.lr = json_number(o, "lr", "config.operator_train");
        if (o.contains("warm_ramp"))
            cfg.op_train.warm_ramp_iters = json_int(o, "warm_ramp", "config.operator_train");
        if (o.contains("warm_weight"))
            cfg.op_train.warm_weight = json_number(o, "warm_weight", "config.operator_train");
        if (o.contains("N")) cfg.op_N = json_int(o, "N", "config.operator_train");
        if (o.contains("T")) cfg.op_T = json_number(o, "T", "config.operator_train");
        if (o.contains("inner")) parse_train(o["inner"], cfg.op_train.inner);
        if (o.contains("budget")) cfg.op_budget = json_int(o, "budget", "config.operator_train");
        if (o.contains("lift")) cfg.op_lift = json_int(o, "lift", "config.operator_train");
        if (o.contains("layers")) cfg.op_layers = json_int(o, "layers", "config.operator_train");
        if (o.contains("modes")) cfg.op_modes = json_int(o, "modes", "config.operator_train");
    }
    if (j.contains("grid")) {
        const Json& g = j["grid"];
        reject_unknown_keys(g, {"points", "n_t", "damping", "max_iter"}, "config.grid");
        if (g.contains("points")) {
            const Vec p = json_vec(g, "points", -1, "config.grid");
            for (int i = 0; i < p.size(); ++i) cfg.grid.points.push_back(static_cast<int>(p[i]));
        }
        if (g.contains("n_t")) cfg.grid.n_t = json_int(g, "n_t", "config.grid");
        if (g.contains("damping")) cfg.grid.damping = json_number(g, "damping", "config.grid");
        if (g.contains("max_iter")) cfg.grid.max_iter = json_int(g, "max_iter", "config.grid");
    }
    if (j.contains("eval")) {
        const Json& e = j["eval"];
        reject_unknown_keys(e, {"agents", "pair_radius", "resolution", "flows"}, "config.eval");
        if (e.contains("agents")) cfg.eval.agents = json_int(e, "agents", "config.eval");
        if (e.contains("pair_radius"))
            cfg.eval.pair_radius = json_number(e, "pair_radius", "config.eval");
        if (e.contains("resolution")) cfg.eval.resolution = json_int(e, "resolution", "config.eval");
        if (e.contains("flows")) {
            if (!e["flows"].is_array()) throw InvalidInput("config.eval: flows must be an array");
            for (const auto& f : e["flows"]) cfg.eval.flows.push_back(f.get<std::string>());
        }
    }
    if (j.contains("plot")) {
        const Json& p = j["plot"];
        reject_unknown_keys(p, {"agents", "panel_px"}, "config.plot");
        if (p.contains("agents")) cfg.plot.agents = json_int(p, "agents", "config.plot");
        if (p.contains("panel_px")) cfg.plot.panel_px = json_int(p, "panel_px", "config.plot");
    }
    if (j.contains("infer")) {
        const Json& i = j["infer"];
        reject_unknown_keys(i, {"resolution"}, "config.infer");
        if (i.contains("resolution")) cfg.infer.resolution = json_int(i, "resolution", "config.infer");
    }
    return cfg;
}

RunConfig load_run_config(const std::string& path) {
    return parse_run_config(load_json_file(path));
}

void apply_overrides(RunConfig& cfg, const CliOverrides& ov) {
    if (ov.seed) cfg.seed = *ov.seed;
    if (ov.out) cfg.out = *ov.out;
    if (ov.family) cfg.family = *ov.family;
    if (ov.device) {
        cfg.device = *ov.device;
        if (cfg.device != "cpu")
            throw InvalidInput("device \"" + cfg.device + "\" not supported (cpu only)");
    }
    if (ov.checkpoint) {
        switch (cfg.command) {
            case Command::Plot:
                cfg.ckpt_flow = *ov.checkpoint;
                break;
            case Command::Infer:
            case Command::Eval:
            case Command::TrainOperator:
                cfg.ckpt_operator = *ov.checkpoint;
                break;
            default:
                cfg.ckpt_flow = *ov.checkpoint;
        }
    }
}

namespace {

int run_train_fixed(const RunConfig& cfg) {
    const Scenario s = load_scenario(cfg.scenario_path);
    const MFGProblem problem = build_crowd_motion(s);
    FixedTrainOptions opts = cfg.train;
    opts.seed = cfg.seed;
    const FixedTrainResult res = train_fixed(problem, opts);
    res.flow.save(join_path(cfg.out, "flow.json"));
    res.value.save(join_path(cfg.out, "value.json"));
    write_trace_csv(res.trace, join_path(cfg.out, "trace.csv"));
    std::cout << "train-fixed: rounds=" << res.rounds << " converged=" << res.converged
              << " best=" << res.best_monitored << "\n";
    return res.converged ? kOk : kNonConvergence;
}

int run_train_operator(const RunConfig& cfg) {
    if (cfg.family.empty())
        throw InvalidInput("train-operator: config needs a family (sampling ranges are derived "
                           "from it)");
    // sampler: uniform draws over the documented ranges, family only fixes the layout kind
    const std::vector<BoundaryCode> family = scenarios::family_by_name(cfg.family);
    const BoundaryLayout layout = family[0].layout;
    const CounterRng rng(cfg.seed);
    ScenarioSampler sampler = [layout, rng](int i) {
        const CounterRng r = rng.stream(40 + i);
        Scenario s;
        s.init_mean = Vec(2);
        s.init_mean << -10 + 5 * r.uniform(0), -5 + 10 * r.uniform(1);
        s.init_std = 0.2 + 0.8 * r.uniform(2);
        s.target = Vec(2);
        s.target << 3 + 7 * r.uniform(3), -5 + 10 * r.uniform(4);
        s.sigma = 0.2 + 1.8 * r.uniform(5);
        const int n_obs = static_cast<int>(r.bits(6) % 3);
        for (int k = 0; k < n_obs; ++k) {
            Vec c(2);
            c << -3 + 6 * r.uniform(10 + 3 * k), -3 + 6 * r.uniform(11 + 3 * k);
            if (layout.obstacle_kind == Obstacle::Kind::Circle)
                s.obstacles.push_back(Obstacle::circle(c, 1 + 3 * r.uniform(12 + 3 * k)));
            else
                s.obstacles.push_back(
                    Obstacle::ellipse(c, 1 + 2 * r.uniform(12 + 3 * k), 1 + 2 * r.uniform(13 + 3 * k)));
        }
        return encode(s, layout);
    };
    const int N = cfg.op_N;
    const double T = cfg.op_T;
    ProblemBuilder builder = [N, T](const BoundaryCode& code) {
        return build_crowd_motion(code, N, T);
    };

    OperatorArch arch;
    arch.N = N;
    arch.lift = cfg.op_lift;
    arch.layers = cfg.op_layers;
    arch.modes = cfg.op_modes;
    {
        // reference box covering the sampling ranges
        Scenario wide;
        wide.init_mean = Vec(2);
        wide.init_mean << -10, -5;
        wide.target = Vec(2);
        wide.target << 10, 5;
        wide.init_std = 1.0;
        wide.sigma = 2.0;
        wide.T = T;
        arch.box = working_box(wide);
    }
    OperatorTrainOptions opts = cfg.op_train;
    opts.seed = cfg.seed;
    opts.inner.seed = cfg.seed;
    const OperatorTrainResult res =
        train_pionm(sampler, builder, cfg.op_budget, layout, arch, opts);
    res.model.save(join_path(cfg.out, "operator.json"));
    write_session_csv(res.report, join_path(cfg.out, "session.csv"));
    std::cout << "train-operator: iterations=" << res.report.size() << "\n";
    return kOk;
}

int run_infer(const RunConfig& cfg) {
    const Scenario s = load_scenario(cfg.scenario_path);
    const OperatorModel model = OperatorModel::load(cfg.ckpt_operator);
    const BoundaryCode code = encode(s, model.layout());
    const std::vector<int> pts(model.layout().d, cfg.infer.resolution);
    const InferenceResult res = infer_equilibrium(model, code, pts, s.T);

    Json summary;
    summary["seconds"] = res.seconds;
    summary["masses"] = res.masses;
    summary["lattice"] = res.lattice_pts;
    atomic_write_text(join_path(cfg.out, "infer_summary.json"), summary.dump(2) + "\n");

    CsvWriter csv({"step", "cell", "density"});
    for (int n = 0; n < static_cast<int>(res.fields.size()); ++n)
        for (int i = 0; i < res.fields[n].size(); ++i)
            csv.add_row({std::to_string(n + 1), std::to_string(i),
                         CsvWriter::format(res.fields[n][i])});
    csv.write_atomic(join_path(cfg.out, "infer_fields.csv"));
    std::cout << "infer: " << res.fields.size() << " fields in " << res.seconds << " s\n";
    return kOk;
}

int run_oracle(const RunConfig& cfg) {
    const Scenario s = load_scenario(cfg.scenario_path);
    const MFGProblem problem = build_crowd_motion(s);
    const Box box = working_box(s);
    std::vector<int> pts = cfg.grid.points;
    if (pts.empty()) pts.assign(problem.d, problem.d == 1 ? 128 : 64);
    int n_t = cfg.grid.n_t;
    if (n_t == 0) {
        // smallest stable multiple of the problem's step count
        double diam2 = 0;
        for (int a = 0; a < box.dim(); ++a) diam2 += box.side(a) * box.side(a);
        double min_dx = box.side(0) / pts[0];
        for (int a = 1; a < box.dim(); ++a) min_dx = std::min(min_dx, box.side(a) / pts[a]);
        const int lower = static_cast<int>(std::ceil(4.0 * std::sqrt(diam2) * problem.T / min_dx));
        n_t = ((lower + problem.N - 1) / problem.N) * problem.N;
    }
    const GridSpec grid = make_grid_spec(box, pts, n_t, problem.T);
    const auto [res, secs] = timed([&] { return solve_fixed_point(problem, grid, cfg.grid.damping,
                                                                  cfg.grid.max_iter); });
    dump_fields(res, join_path(cfg.out, "oracle_fields.csv"));
    Json summary;
    summary["converged"] = res.converged;
    summary["sweeps"] = res.residual_trace.size();
    summary["seconds"] = secs;
    summary["n_t"] = grid.n_t;
    atomic_write_text(join_path(cfg.out, "oracle_summary.json"), summary.dump(2) + "\n");
    std::cout << "oracle: converged=" << res.converged << " in " << secs << " s\n";
    return res.converged ? kOk : kNonConvergence;
}

int run_eval(const RunConfig& cfg) {
    if (cfg.family.empty()) throw InvalidInput("eval: config needs a family");
    const std::vector<BoundaryCode> family = scenarios::family_by_name(cfg.family);
    if (!cfg.eval.flows.empty() && cfg.eval.flows.size() != family.size())
        throw InvalidInput("eval: flows list must match the family size");

    std::optional<OperatorModel> model;
    if (!cfg.ckpt_operator.empty())
        model = OperatorModel::load(cfg.ckpt_operator, family[0].layout);

    std::vector<MetricsReport> rows;
    for (std::size_t i = 0; i < family.size(); ++i) {
        const BoundaryCode& code = family[i];
        MetricsReport row;
        row.scenario_id = cfg.family + "-" + std::to_string(i);
        Scenario s = decode(code);

        if (!cfg.eval.flows.empty()) {
            const DensityFlow flow = DensityFlow::load(cfg.eval.flows[i]);
            s.N = flow.steps();
            const auto [traj, secs] = timed([&] {
                return flow.push_all(flow.sample_base(cfg.eval.agents, cfg.seed + i));
            });
            row.solve_seconds = secs;
            row.success_rate =
                collision_success_rate(traj, s.obstacles, cfg.eval.pair_radius);
            row.volume_diff =
                volume_invariance(flow, flow.box(), cfg.eval.resolution, &row.per_level_volume);
        } else if (model) {
            const std::vector<int> pts(model->layout().d, cfg.eval.resolution);
            const InferenceResult inf = infer_equilibrium(*model, code, pts, cfg.op_T);
            row.solve_seconds = inf.seconds;
            double vol = 1.0;
            const Box box = working_box(s);
            for (int a = 0; a < box.dim(); ++a) vol *= box.side(a) / cfg.eval.resolution;
            row.volume_diff = volume_invariance(inf.fields, vol, &row.per_level_volume);
            row.success_rate = std::numeric_limits<double>::quiet_NaN();  // needs trajectories
        } else {
            throw InvalidInput("eval: provide an operator checkpoint or per-member flows");
        }
        rows.push_back(row);
    }
    write_metrics_csv(rows, cfg.eval.pair_radius, join_path(cfg.out, "metrics.csv"));
    write_metrics_json(rows, cfg.eval.pair_radius, join_path(cfg.out, "metrics.json"));
    std::cout << "eval: " << rows.size() << " scenarios\n";
    return kOk;
}

int run_plot(const RunConfig& cfg) {
    const Scenario s = load_scenario(cfg.scenario_path);
    if (cfg.ckpt_flow.empty()) throw InvalidInput("plot: config needs checkpoint.flow");
    const DensityFlow flow = DensityFlow::load(cfg.ckpt_flow);
    snapshot_grid(flow, s, cfg.plot.agents, cfg.seed, cfg.plot.panel_px,
                  join_path(cfg.out, "snapshots.png"));
    std::cout << "plot: wrote snapshots.png\n";
    return kOk;
}

}  // namespace

int run(const RunConfig& cfg) {
    switch (cfg.command) {
        case Command::TrainFixed:
            return run_train_fixed(cfg);
        case Command::TrainOperator:
            return run_train_operator(cfg);
        case Command::Infer:
            return run_infer(cfg);
        case Command::Oracle:
            return run_oracle(cfg);
        case Command::Eval:
            return run_eval(cfg);
        case Command::Plot:
            return run_plot(cfg);
    }
    return kSchemaViolation;
}

}  // namespace mfgflow
