#pragma once

// Closed-form solution of the 1D benchmark with quadratic terminal cost,
// zero running cost and quadratic control energy:
//   value  u(x,t) = a(t) (x - xT)^2 + c(t),  a' = 2a^2, a(T) = 1,
//                                            c' = -2 nu a, c(T) = 0
//   state  dX = -2a(X - xT) dt + sigma dW  =>  Gaussian marginals with
//   m' = -2a (m - xT),  v' = -4a v + sigma^2.
// Used as an independent reference for solver and operator tests.

#include "mfgflow/common.hpp"
#include "mfgflow/core.hpp"
#include "mfgflow/flow.hpp"

#include <cmath>

namespace lq {

using mfgflow::Vec;

struct Params {
    double m0 = -2.0;   // initial mean
    double s0 = 0.4;    // initial std
    double xT = 2.0;    // target
    double sigma = 0.5; // SDE diffusion
    double T = 1.0;
};

inline double a_of(double t, const Params& p) { return 1.0 / (1.0 + 2.0 * (p.T - t)); }

inline double c_of(double t, const Params& p) {
    const double nu = 0.5 * p.sigma * p.sigma;
    return nu * std::log(1.0 + 2.0 * (p.T - t));
}

inline double value(double x, double t, const Params& p) {
    const double dx = x - p.xT;
    return a_of(t, p) * dx * dx + c_of(t, p);
}

inline double mean_of(double t, const Params& p) {
    const double beta = 1.0 + 2.0 * (p.T - t);
    const double B = 1.0 + 2.0 * p.T;
    return p.xT + (p.m0 - p.xT) * beta / B;
}

inline double var_of(double t, const Params& p) {
    const double beta = 1.0 + 2.0 * (p.T - t);
    const double B = 1.0 + 2.0 * p.T;
    const double v0 = p.s0 * p.s0;
    return v0 * beta * beta / (B * B) + 0.5 * p.sigma * p.sigma * beta * (1.0 - beta / B);
}

inline double density(double x, double t, const Params& p) {
    const double m = mean_of(t, p);
    const double v = var_of(t, p);
    return std::exp(-(x - m) * (x - m) / (2.0 * v)) / std::sqrt(2.0 * M_PI * v);
}

inline mfgflow::Scenario scenario(const Params& p, int N) {
    mfgflow::Scenario s;
    s.init_mean = Vec::Constant(1, p.m0);
    s.init_std = p.s0;
    s.target = Vec::Constant(1, p.xT);
    s.sigma = p.sigma;
    s.T = p.T;
    s.N = N;
    return s;
}

/// RK4 integration of the mean/variance ODEs; independent check of the
/// closed forms above.
inline void integrate_moments(const Params& p, int steps, double& m_out, double& v_out) {
    double m = p.m0, v = p.s0 * p.s0, t = 0.0;
    const double h = p.T / steps;
    auto fm = [&](double tt, double mm) { return -2.0 * a_of(tt, p) * (mm - p.xT); };
    auto fv = [&](double tt, double vv) { return -4.0 * a_of(tt, p) * vv + p.sigma * p.sigma; };
    for (int k = 0; k < steps; ++k) {
        const double k1m = fm(t, m), k1v = fv(t, v);
        const double k2m = fm(t + h / 2, m + h / 2 * k1m), k2v = fv(t + h / 2, v + h / 2 * k1v);
        const double k3m = fm(t + h / 2, m + h / 2 * k2m), k3v = fv(t + h / 2, v + h / 2 * k2v);
        const double k4m = fm(t + h, m + h * k3m), k4v = fv(t + h, v + h * k3v);
        m += h / 6 * (k1m + 2 * k2m + 2 * k3m + k4m);
        v += h / 6 * (k1v + 2 * k2v + 2 * k3v + k4v);
        t += h;
    }
    m_out = m;
    v_out = v;
}

/// Flow whose affine maps reproduce the Gaussian marginal path exactly: the
/// shape every successful solve of this benchmark converges to.
inline mfgflow::DensityFlow analytic_flow(const Params& p, int N) {
    const mfgflow::Scenario s = scenario(p, N);
    const mfgflow::Box box = mfgflow::working_box(s);
    mfgflow::DensityFlow flow(1, N, s.init_mean, s.init_std, box, /*blocks_per_step=*/1,
                              /*coupling_hidden=*/4, mfgflow::CounterRng(0));
    Vec params = flow.get_params();
    const double cap = 3.0;
    double m_prev = p.m0, sd_prev = p.s0;
    for (int n = 1; n <= N; ++n) {
        const double t = p.T * n / N;
        const double m = mean_of(t, p);
        const double sd = std::sqrt(var_of(t, p));
        const double k = sd / sd_prev;
        const double s_applied = std::log(k);
        // invert the bounded reparameterisation of the affine log-scale
        const double s_raw = cap * std::atanh(s_applied / cap);
        params[flow.map_offset(n - 1) + 0] = s_raw;
        params[flow.map_offset(n - 1) + 1] = m - k * m_prev;
        m_prev = m;
        sd_prev = sd;
    }
    flow.set_params(params);
    return flow;
}

}  // namespace lq
