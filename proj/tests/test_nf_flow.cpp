#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "mfgflow/flow.hpp"
#include "support/test_util.hpp"

#include <Eigen/LU>

#include <cmath>
#include <filesystem>

using namespace mfgflow;
using testutil::vec2;

namespace {

Box box2(double lo, double hi) {
    Box b;
    b.lo = vec2(lo, lo);
    b.hi = vec2(hi, hi);
    return b;
}

DensityFlow identity_flow(int d, int N) {
    Box b;
    b.lo = Vec::Constant(d, -8.0);
    b.hi = Vec::Constant(d, 8.0);
    return DensityFlow(d, N, Vec::Zero(d), 1.0, b);
}

/// Small randomly perturbed flow used by the invariance properties. The
/// perturbation is kept mild so the mass stays well inside the test box.
DensityFlow perturbed_flow(int d, int N, std::uint64_t seed) {
    DensityFlow f = identity_flow(d, N);
    Vec p = f.get_params();
    const CounterRng rng(seed);
    for (int i = 0; i < p.size(); ++i) p[i] += 0.05 * rng.normal(i);
    f.set_params(p);
    return f;
}

}  // namespace

TEST_CASE("identity flow reproduces the base density") {
    DensityFlow f = identity_flow(2, 6);
    const Mat x0 = Mat::Zero(2, 1);
    // standard 2D Gaussian at the mode
    CHECK(f.log_density(0, x0)[0] == doctest::Approx(-std::log(2 * M_PI)).epsilon(1e-14));
    CHECK(f.log_density(6, x0)[0] == doctest::Approx(-std::log(2 * M_PI)).epsilon(1e-14));
    // marginal at step 0 is the base law by construction
    const Mat s0 = f.push_samples(0, 64, 5);
    const Mat s0b = f.sample_base(64, 5);
    CHECK((s0 - s0b).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("single doubling map changes the density by the exact jacobian") {
    Box b;
    b.lo = Vec::Constant(1, -8.0);
    b.hi = Vec::Constant(1, 8.0);
    DensityFlow f(1, 1, Vec::Zero(1), 1.0, b, /*blocks_per_step=*/1);
    Vec p = f.get_params();
    const double cap = 3.0;
    p[0] = cap * std::atanh(std::log(2.0) / cap);  // applied log-scale = ln 2
    p[1] = 0.0;
    f.set_params(p);
    const Mat x0 = Mat::Zero(1, 1);
    const double expected = -0.5 * std::log(2 * M_PI) - std::log(2.0);
    CHECK(f.log_density(1, x0)[0] == doctest::Approx(expected).epsilon(1e-14));
}

TEST_CASE("base sampling is deterministic and well-distributed") {
    DensityFlow f = identity_flow(2, 4);
    const Mat a = f.push_samples(0, 100000, 42);
    const Mat b = f.push_samples(0, 100000, 42);
    CHECK((a - b).cwiseAbs().maxCoeff() == 0.0);  // bit-identical on reuse
    CHECK(std::abs(a.row(0).mean()) < 0.02);
    CHECK(std::abs(a.row(1).mean()) < 0.02);
    const Mat c = f.push_samples(0, 100000, 43);
    CHECK((a - c).cwiseAbs().maxCoeff() > 0.0);  // seed actually matters
}

TEST_CASE("identity maps leave the law unchanged (two-sample check)") {
    DensityFlow f = identity_flow(1, 5);
    const int M = 20000;
    const Mat a = f.push_samples(5, M, 7);
    const Mat b = f.push_samples(0, M, 8);
    // Kolmogorov-Smirnov on sorted samples
    std::vector<double> av(a.data(), a.data() + M), bv(b.data(), b.data() + M);
    std::sort(av.begin(), av.end());
    std::sort(bv.begin(), bv.end());
    double ks = 0;
    std::size_t i = 0, j = 0;
    while (i < av.size() && j < bv.size()) {
        if (av[i] <= bv[j]) ++i;
        else ++j;
        ks = std::max(ks, std::abs(static_cast<double>(i) / M - static_cast<double>(j) / M));
    }
    // 1e-3 significance threshold ~ 1.95 sqrt(2/M)
    CHECK(ks < 1.95 * std::sqrt(2.0 / M));
}

TEST_CASE("inverse undoes forward within 1e-5 on random points") {
    for (int d : {1, 2}) {
        DensityFlow f = perturbed_flow(d, 4, 17);
        const CounterRng rng(3);
        Mat X = rng.normal_matrix(d, 1000, 0) * 2.0;
        Mat Y = X;
        for (int m = 0; m < f.steps(); ++m) Y = f.maps()[m].forward(Y);
        for (int m = f.steps() - 1; m >= 0; --m) Y = f.maps()[m].inverse(Y);
        CHECK((Y - X).cwiseAbs().maxCoeff() < 1e-5);
    }
}

TEST_CASE("analytic log-determinant matches finite differences") {
    DensityFlow f = perturbed_flow(2, 3, 23);
    const CounterRng rng(9);
    const double h = 1e-5;
    for (int k = 0; k < 100; ++k) {
        const Vec x = 2.0 * Vec(rng.normal_matrix(2, 1, 4 * k));
        Vec logdet = Vec::Zero(1);
        (void)f.maps()[1].forward(Mat(x), &logdet);
        // finite-difference Jacobian determinant
        Mat J(2, 2);
        for (int a = 0; a < 2; ++a) {
            Vec xp = x, xm = x;
            xp[a] += h;
            xm[a] -= h;
            const Mat yp = f.maps()[1].forward(Mat(xp));
            const Mat ym = f.maps()[1].forward(Mat(xm));
            J.col(a) = (yp - ym) / (2 * h);
        }
        const double fd = std::log(std::abs(J.determinant()));
        CHECK(logdet[0] == doctest::Approx(fd).epsilon(1e-3));
    }
}

TEST_CASE("every marginal integrates to one on the working box") {
    DensityFlow f = perturbed_flow(2, 5, 31);
    const int res = 220;
    const Box b = box2(-8, 8);
    Mat centers(2, res * res);
    const double cell = b.side(0) / res;
    for (int iy = 0; iy < res; ++iy)
        for (int ix = 0; ix < res; ++ix)
            centers.col(ix + res * iy) =
                vec2(b.lo[0] + (ix + 0.5) * cell, b.lo[1] + (iy + 0.5) * cell);
    for (int n = 0; n <= f.steps(); ++n) {
        const double mass = f.log_density(n, centers).array().exp().sum() * cell * cell;
        CHECK(std::abs(mass - 1.0) < std::pow(10.0, -1.25));
    }
}

TEST_CASE("full inversion equals incremental accumulation") {
    DensityFlow f = perturbed_flow(2, 6, 57);
    const Mat X = CounterRng(1).normal_matrix(2, 32, 0);
    const int n = 6;
    const Vec direct = f.log_density(n, X);
    // one level at a time: log mu_n(x) = log mu_{n-1}(inv(x)) + logdet_inv
    Vec logdet = Vec::Zero(32);
    Mat h = X;
    for (int m = n - 1; m >= 0; --m) h = f.maps()[m].inverse(h, &logdet);
    const Vec stepwise = f.log_base(h) + logdet;
    CHECK((direct - stepwise).cwiseAbs().maxCoeff() == 0.0);
}

TEST_CASE("pushforward gradients match finite differences") {
    // d/dphi of E[g(x_N)] via the adjoint pass vs central differences
    DensityFlow f = perturbed_flow(2, 3, 77);
    const Mat X0 = f.sample_base(16, 4);
    auto objective = [&](const DensityFlow& fl) {
        const Mat XN = fl.push_to(fl.steps(), X0);
        return 0.5 * XN.array().square().sum() / XN.cols();
    };
    const DensityFlow::ForwardTrace tr = f.push_all_traced(X0);
    std::vector<Mat> upstream(f.steps() + 1);
    upstream[f.steps()] = tr.levels[f.steps()] / tr.levels[f.steps()].cols();
    Vec grad = Vec::Zero(f.n_params());
    f.backward_pushforward(tr, upstream, grad);

    const CounterRng rng(5);
    Vec p = f.get_params();
    for (int k = 0; k < 24; ++k) {
        const int i = static_cast<int>(rng.bits(k) % static_cast<std::uint64_t>(p.size()));
        const double h = 1e-5;
        Vec pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        DensityFlow fp = f, fm = f;
        fp.set_params(pp);
        fm.set_params(pm);
        const double fd = (objective(fp) - objective(fm)) / (2 * h);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(5e-4));
    }
}

TEST_CASE("log-density gradients match finite differences") {
    DensityFlow f = perturbed_flow(2, 3, 99);
    const Mat X = CounterRng(6).normal_matrix(2, 8, 0);
    const Vec w = Vec::Constant(8, 1.0 / 8);
    Vec grad = Vec::Zero(f.n_params());
    (void)f.log_density_grad(3, X, w, grad);

    Vec p = f.get_params();
    const CounterRng rng(15);
    for (int k = 0; k < 24; ++k) {
        const int i = static_cast<int>(rng.bits(k) % static_cast<std::uint64_t>(p.size()));
        const double h = 1e-5;
        Vec pp = p, pm = p;
        pp[i] += h;
        pm[i] -= h;
        DensityFlow fp = f, fm = f;
        fp.set_params(pp);
        fm.set_params(pm);
        const double fd =
            (fp.log_density(3, X).dot(w) - fm.log_density(3, X).dot(w)) / (2 * h);
        CHECK(grad[i] == doctest::Approx(fd).epsilon(5e-4));
    }
}

TEST_CASE("checkpoint round-trip reproduces log densities") {
    DensityFlow f = perturbed_flow(2, 4, 123);
    const std::string dir = testutil::scratch_dir("flow_ckpt");
    const std::string path = dir + "/flow.json";
    f.save(path);
    const DensityFlow g = DensityFlow::load(path);
    const Mat X = CounterRng(8).normal_matrix(2, 64, 0);
    for (int n = 0; n <= 4; ++n) {
        const Vec a = f.log_density(n, X);
        const Vec b = g.log_density(n, X);
        CHECK((a - b).cwiseAbs().maxCoeff() < 1e-12);
    }
    CHECK_THROWS_AS(DensityFlow::from_json("{\"kind\":\"nope\",\"schema_version\":1}"),
                    InvalidInput);
}

TEST_CASE("step index bounds are enforced") {
    DensityFlow f = identity_flow(2, 4);
    CHECK_THROWS_AS(f.push_samples(5, 8, 1), InvalidInput);
    CHECK_THROWS_AS(f.push_samples(-1, 8, 1), InvalidInput);
    CHECK_THROWS_AS(f.log_density(7, Mat::Zero(2, 1)), InvalidInput);
}
