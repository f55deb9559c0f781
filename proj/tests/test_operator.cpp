#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfgflow/json_io.hpp"
#include "mfgflow/operator_net.hpp"
#include "mfgflow/scenarios.hpp"
#include "support/lq_analytic.hpp"
#include "support/test_util.hpp"

#include <cmath>

using namespace mfgflow;
using testutil::vec1;
using testutil::vec2;

namespace {

BoundaryLayout layout1d() {
    BoundaryLayout l;
    l.d = 1;
    l.max_obstacles = 0;
    return l;
}

OperatorArch arch1d(int N) {
    OperatorArch a;
    a.N = N;
    a.lift = 24;
    a.layers = 3;
    a.modes = 8;
    a.box.lo = vec1(-8);
    a.box.hi = vec1(8);
    return a;
}

BoundaryCode lq_code(const lq::Params& p, int N) {
    return encode(lq::scenario(p, N), layout1d());
}

/// Training pool built from the closed-form benchmark family.
std::vector<TrainSample> lq_pool(int count, int N, int queries, std::uint64_t seed) {
    std::vector<TrainSample> pool;
    const CounterRng rng(seed);
    for (int i = 0; i < count; ++i) {
        const CounterRng r = rng.stream(i);
        lq::Params p;
        p.m0 = -4 + 2 * r.uniform(0);
        p.s0 = 0.3 + 0.5 * r.uniform(1);
        p.xT = 1 + 2 * r.uniform(2);
        p.sigma = 0.3 + 0.5 * r.uniform(3);
        pool.push_back(
            make_train_sample(lq::analytic_flow(p, N), lq_code(p, N), queries, r.bits(9)));
    }
    return pool;
}

}  // namespace

TEST_CASE("fresh operator: shapes, positivity, determinism, empty batch") {
    const OperatorModel model(layout1d(), arch1d(6), 11);
    const BoundaryCode code = lq_code(lq::Params{}, 6);
    CHECK(operator_eval(model, code, Mat(1, 0)).rows() == 0);
    CHECK(operator_eval(model, code, Mat(1, 0)).cols() == 6);
    const Mat q = CounterRng(3).normal_matrix(1, 40, 0);
    const Mat out = operator_eval(model, code, q);
    CHECK(out.rows() == 40);
    CHECK(out.cols() == 6);
    CHECK(out.minCoeff() > 0.0);
    CHECK(out.allFinite());
    const Mat out2 = operator_eval(model, code, q);
    CHECK((out - out2).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("operator rejects layout mismatches and bad queries") {
    const OperatorModel model(layout1d(), arch1d(6), 11);
    BoundaryLayout other = layout1d();
    other.max_obstacles = 2;
    Scenario s = lq::scenario(lq::Params{}, 6);
    CHECK_THROWS_AS(operator_eval(model, encode(s, other), Mat(1, 3)), InvalidInput);
    Mat bad = Mat::Zero(1, 2);
    bad(0, 1) = std::numeric_limits<double>::quiet_NaN();
    CHECK_THROWS_AS(operator_eval(model, lq_code(lq::Params{}, 6), bad), InvalidInput);
}

TEST_CASE("operator loss: exact match, unit offset, brute-force equality") {
    const OperatorModel model(layout1d(), arch1d(5), 7);
    const lq::Params p;
    TrainSample sample;
    sample.code = lq_code(p, 5);
    sample.queries = CounterRng(9).normal_matrix(1, 24, 0);
    sample.targets = operator_eval(model, sample.code, sample.queries);
    CHECK(loss_pino(model, sample) < 1e-24);

    sample.targets.array() += 1.0;
    CHECK(loss_pino(model, sample) == doctest::Approx(1.0).epsilon(1e-12));

    // random targets: brute-force double mean matches to round-off
    sample.targets = sample.targets.array() * 0.0 + 0.3;
    const Mat out = operator_eval(model, sample.code, sample.queries);
    double acc = 0;
    for (int i = 0; i < out.rows(); ++i)
        for (int n = 0; n < out.cols(); ++n)
            acc += (out(i, n) - 0.3) * (out(i, n) - 0.3);
    acc /= out.rows() * out.cols();
    CHECK(loss_pino(model, sample) == doctest::Approx(acc).epsilon(1e-12));
}

TEST_CASE("operator fit gradient matches finite differences") {
    OperatorModel model(layout1d(), arch1d(4), 21);
    const auto pool = lq_pool(1, 4, 16, 5);
    // analytic gradient via one fit epoch with zero learning rate is not
    // observable; check the backward pass directly instead
    const TrainSample& ts = pool[0];
    MlpDeep::Cache cache;
    const Mat raw = model.net().forward_cached(model.features(ts.code, ts.queries), cache);
    const Mat out = raw.array().exp();
    const int M = static_cast<int>(ts.queries.cols());
    Mat dRaw = 2.0 * (out - ts.targets.transpose()).array() * out.array() /
               (static_cast<double>(M) * model.arch().N);
    Vec grad = Vec::Zero(model.n_params());
    model.net().backward(cache, dRaw, grad);

    const CounterRng rng(31);
    Vec params = model.params();
    for (int k = 0; k < 24; ++k) {
        const int i = static_cast<int>(rng.bits(k) % static_cast<std::uint64_t>(params.size()));
        const double h = 1e-6;
        OperatorModel mp = model, mm = model;
        mp.params()[i] += h;
        mm.params()[i] -= h;
        const double fd = (loss_pino(mp, ts) - loss_pino(mm, ts)) / (2 * h);
        if (std::abs(fd) < 1e-12) continue;
        CHECK(grad[i] == doctest::Approx(fd).epsilon(1e-3));
    }
}

TEST_CASE("training-set recall on the benchmark family") {
    const int N = 6;
    OperatorModel model(layout1d(), arch1d(N), 3);
    const auto pool = lq_pool(24, N, 64, 77);
    const double before = loss_pino(model, pool[0]);
    fit_operator(model, pool, 400, 2e-3, 15);
    double worst_mse = 0, worst_rel = 0;
    for (const auto& ts : pool) {
        worst_mse = std::max(worst_mse, loss_pino(model, ts));
        const Mat out = operator_eval(model, ts.code, ts.queries);
        // relative recall error, floored away from the vanishing tails
        worst_rel = std::max(
            worst_rel, ((out - ts.targets).cwiseAbs().array() /
                        ts.targets.array().max(0.1))
                           .maxCoeff());
    }
    CHECK(worst_mse < before);
    CHECK(worst_mse < 0.01);
    CHECK(worst_rel < 0.5);
}

TEST_CASE("obstacle slot order never reaches the operator") {
    // canonical sorting normalizes slot order during encoding
    BoundaryLayout layout;
    layout.d = 2;
    layout.max_obstacles = 2;
    Scenario s;
    s.init_mean = vec2(-7, 0);
    s.init_std = 0.5;
    s.target = vec2(7, 0);
    s.sigma = 1.0;
    s.obstacles = {Obstacle::circle(vec2(0, 1), 2.0), Obstacle::circle(vec2(0, -2), 3.0)};
    const BoundaryCode a = encode(s, layout);
    std::swap(s.obstacles[0], s.obstacles[1]);
    const BoundaryCode b = encode(s, layout);
    CHECK((a.flat - b.flat).cwiseAbs().maxCoeff() == 0.0);

    OperatorArch arch;
    arch.N = 4;
    arch.lift = 16;
    arch.layers = 2;
    arch.modes = 4;
    arch.box.lo = vec2(-12, -12);
    arch.box.hi = vec2(12, 12);
    const OperatorModel model(layout, arch, 9);
    const Mat q = CounterRng(2).normal_matrix(2, 8, 0);
    CHECK((operator_eval(model, a, q) - operator_eval(model, b, q)).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("checkpoints round-trip and refuse foreign layouts") {
    const OperatorModel model(layout1d(), arch1d(5), 13);
    const std::string dir = testutil::scratch_dir("op_ckpt");
    model.save(dir + "/op.json");
    const OperatorModel back = OperatorModel::load(dir + "/op.json");
    const BoundaryCode code = lq_code(lq::Params{}, 5);
    const Mat q = CounterRng(4).normal_matrix(1, 16, 0);
    CHECK((operator_eval(model, code, q) - operator_eval(back, code, q)).cwiseAbs().maxCoeff() ==
          0.0);

    BoundaryLayout other = layout1d();
    other.max_obstacles = 1;
    CHECK_THROWS_WITH_AS(OperatorModel::load(dir + "/op.json", other),
                         doctest::Contains("layout"), InvalidInput);
}

TEST_CASE("outer loop: zero budget returns an untrained model and empty report") {
    const BoundaryLayout layout = layout1d();
    const OperatorArch arch = arch1d(4);
    OperatorTrainOptions opts;
    const auto res = train_pionm([](int) -> BoundaryCode { throw RuntimeFailure("unreached"); },
                                 [](const BoundaryCode&) -> MFGProblem {
                                     throw RuntimeFailure("unreached");
                                 },
                                 0, layout, arch, opts);
    CHECK(res.report.empty());
    const Mat q = CounterRng(1).normal_matrix(1, 4, 0);
    CHECK(operator_eval(res.model, lq_code(lq::Params{}, 4), q).allFinite());
}

TEST_CASE("outer loop: quick run trains, logs and never uses failed solves") {
    const int N = 6;
    const BoundaryLayout layout = layout1d();
    const OperatorArch arch = arch1d(N);
    OperatorTrainOptions opts;
    opts.seed = 5;
    opts.queries_per_sample = 48;
    opts.epochs_per_sample = 30;
    opts.inner.max_rounds = 60;
    opts.inner.m_theta = 96;
    opts.inner.m_phi = 48;
    opts.inner.value_hidden = 8;
    opts.inner.patience = 8;
    ScenarioSampler sampler = [&](int i) {
        lq::Params p;
        p.m0 = -3 + 0.2 * i;
        return lq_code(p, N);
    };
    ProblemBuilder builder = [N](const BoundaryCode& code) {
        return build_crowd_motion(code, N, 1.0);
    };
    const auto res = train_pionm(sampler, builder, 3, layout, arch, opts);
    CHECK(res.report.size() == 3);
    for (const auto& row : res.report) {
        CHECK(row.code_digest.size() == 16);
        if (!row.skipped) CHECK(std::isfinite(row.l_pino));
        // skipped solves carry no operator update, flagged rows only
        if (row.skipped) CHECK(std::isnan(row.l_pino));
    }
    const std::string dir = testutil::scratch_dir("session");
    write_session_csv(res.report, dir + "/session.csv");
    const std::string csv = read_text(dir + "/session.csv");
    CHECK(csv.find("iteration,code_digest,inner_rounds,l_pino") == 0);
}

TEST_CASE("inference over a lattice: shapes, masses, determinism") {
    const int N = 5;
    OperatorModel model(layout1d(), arch1d(N), 3);
    const auto pool = lq_pool(16, N, 64, 21);
    fit_operator(model, pool, 120, 2e-3, 15);
    const lq::Params held;
    const BoundaryCode code = lq_code(held, N);
    const InferenceResult res = infer_equilibrium(model, code, {200}, 1.0);
    CHECK(res.fields.size() == N);
    for (const Vec& f : res.fields) {
        CHECK(f.size() == 200);
        CHECK(f.minCoeff() >= 0.0);
        CHECK(f.allFinite());
    }
    for (double m : res.masses) CHECK(std::isfinite(m));
    const InferenceResult res2 = infer_equilibrium(model, code, {200}, 1.0);
    for (int n = 0; n < N; ++n)
        CHECK((res.fields[n] - res2.fields[n]).cwiseAbs().maxCoeff() == 0.0);
}
