#include "mfgflow/grid_oracle.hpp"

#include "mfgflow/json_io.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

namespace mfgflow {

namespace {

double minmod(double a, double b) {
    if (a > 0 && b > 0) return std::min(a, b);
    if (a < 0 && b < 0) return std::max(a, b);
    return 0.0;
}

/// Thomas solve of (I - c*L) x = rhs along one line, L the conservative
/// Neumann Laplacian (row sums zero, so the solve preserves the line sum).
void solve_diffusion_line(std::vector<double>& rhs, double c_over_dx2) {
    const int n = static_cast<int>(rhs.size());
    if (n == 1 || c_over_dx2 == 0.0) return;
    std::vector<double> diag(n), upper(n - 1, -c_over_dx2);
    for (int i = 0; i < n; ++i) {
        const int nb = (i == 0 || i == n - 1) ? 1 : 2;
        diag[i] = 1.0 + nb * c_over_dx2;
    }
    // forward elimination (sub-diagonal entries are all -c_over_dx2)
    for (int i = 1; i < n; ++i) {
        const double m = -c_over_dx2 / diag[i - 1];
        diag[i] -= m * upper[i - 1];
        rhs[i] -= m * rhs[i - 1];
    }
    rhs[n - 1] /= diag[n - 1];
    for (int i = n - 2; i >= 0; --i) rhs[i] = (rhs[i] - upper[i] * rhs[i + 1]) / diag[i];
}

class GridOps {
public:
    explicit GridOps(const GridSpec& g) : g_(g) {
        nx_ = g.pts[0];
        ny_ = g.dim() == 2 ? g.pts[1] : 1;
    }

    int idx(int ix, int iy) const { return ix + nx_ * iy; }

    Vec cell_center(int ix, int iy) const {
        Vec x(g_.dim());
        x[0] = g_.center(0, ix);
        if (g_.dim() == 2) x[1] = g_.center(1, iy);
        return x;
    }

    /// Implicit diffusion (I - dt*nu*Lap), dimension-split; each 1D solve
    /// preserves its line sum, so the total sum is preserved exactly.
    void diffuse(Vec& field, double dt_nu) const {
        {
            const double c = dt_nu / (g_.dx(0) * g_.dx(0));
            std::vector<double> line(nx_);
            for (int iy = 0; iy < ny_; ++iy) {
                for (int ix = 0; ix < nx_; ++ix) line[ix] = field[idx(ix, iy)];
                solve_diffusion_line(line, c);
                for (int ix = 0; ix < nx_; ++ix) field[idx(ix, iy)] = line[ix];
            }
        }
        if (g_.dim() == 2) {
            const double c = dt_nu / (g_.dx(1) * g_.dx(1));
            std::vector<double> line(ny_);
            for (int ix = 0; ix < nx_; ++ix) {
                for (int iy = 0; iy < ny_; ++iy) line[iy] = field[idx(ix, iy)];
                solve_diffusion_line(line, c);
                for (int iy = 0; iy < ny_; ++iy) field[idx(ix, iy)] = line[iy];
            }
        }
    }

    /// Monotone (Osher-Sethian) discretization of |grad u|^2 / 2.
    double hamiltonian_godunov(const Vec& u, int ix, int iy) const {
        double acc = 0.0;
        {
            const double dx = g_.dx(0);
            const double dm = ix > 0 ? (u[idx(ix, iy)] - u[idx(ix - 1, iy)]) / dx : 0.0;
            const double dp = ix < nx_ - 1 ? (u[idx(ix + 1, iy)] - u[idx(ix, iy)]) / dx : 0.0;
            acc += 0.5 * (std::pow(std::max(dm, 0.0), 2) + std::pow(std::min(dp, 0.0), 2));
        }
        if (g_.dim() == 2) {
            const double dy = g_.dx(1);
            const double dm = iy > 0 ? (u[idx(ix, iy)] - u[idx(ix, iy - 1)]) / dy : 0.0;
            const double dp = iy < ny_ - 1 ? (u[idx(ix, iy + 1)] - u[idx(ix, iy)]) / dy : 0.0;
            acc += 0.5 * (std::pow(std::max(dm, 0.0), 2) + std::pow(std::min(dp, 0.0), 2));
        }
        return acc;
    }

    /// Conservative slope-limited upwind transport with drift -grad(u);
    /// wall fluxes vanish, so the cell sum is unchanged to round-off.
    Vec advect(const Vec& mu, const Vec& u, double dt) const {
        Vec out = mu;
        {
            const double dx = g_.dx(0);
            for (int iy = 0; iy < ny_; ++iy) {
                for (int face = 1; face < nx_; ++face) {
                    const double v = -(u[idx(face, iy)] - u[idx(face - 1, iy)]) / dx;
                    const int c = v >= 0 ? face - 1 : face;  // upwind cell
                    const double mc = mu[idx(c, iy)];
                    const double ml = c > 0 ? mu[idx(c - 1, iy)] : mc;
                    const double mr = c < nx_ - 1 ? mu[idx(c + 1, iy)] : mc;
                    const double slope = minmod(mc - ml, mr - mc);
                    const double mu_face = mc + (v >= 0 ? 0.5 : -0.5) * slope;
                    const double flux = v * mu_face * dt / dx;
                    out[idx(face - 1, iy)] -= flux;
                    out[idx(face, iy)] += flux;
                }
            }
        }
        if (g_.dim() == 2) {
            const double dy = g_.dx(1);
            for (int ix = 0; ix < nx_; ++ix) {
                for (int face = 1; face < ny_; ++face) {
                    const double v = -(u[idx(ix, face)] - u[idx(ix, face - 1)]) / dy;
                    const int c = v >= 0 ? face - 1 : face;
                    const double mc = mu[idx(ix, c)];
                    const double ml = c > 0 ? mu[idx(ix, c - 1)] : mc;
                    const double mr = c < ny_ - 1 ? mu[idx(ix, c + 1)] : mc;
                    const double slope = minmod(mc - ml, mr - mc);
                    const double mu_face = mc + (v >= 0 ? 0.5 : -0.5) * slope;
                    const double flux = v * mu_face * dt / dy;
                    out[idx(ix, face - 1)] -= flux;
                    out[idx(ix, face)] += flux;
                }
            }
        }
        return out;
    }

    int nx() const { return nx_; }
    int ny() const { return ny_; }

private:
    const GridSpec& g_;
    int nx_ = 0, ny_ = 0;
};

}  // namespace

GridSpec make_grid_spec(const Box& box, const std::vector<int>& pts, int n_t, double T) {
    require(box.dim() == static_cast<int>(pts.size()), "grid: pts/box dimension mismatch");
    require(box.dim() == 1 || box.dim() == 2, "grid: only 1D and 2D supported");
    require(n_t >= 1, "grid: n_t must be >= 1");
    for (int p : pts) require(p >= 4, "grid: need at least 4 points per dimension");
    if (box.dim() == 1) require(pts[0] <= 128, "grid: at most 128 points in 1D");
    if (box.dim() == 2)
        require(pts[0] <= 64 && pts[1] <= 64, "grid: at most 64 points per axis in 2D");

    GridSpec g{box, pts, n_t};
    double diam2 = 0.0;
    for (int a = 0; a < box.dim(); ++a) diam2 += box.side(a) * box.side(a);
    const double v_ref = 2.0 * std::sqrt(diam2);
    const double dt = T / n_t;
    double min_dx = g.dx(0);
    for (int a = 1; a < box.dim(); ++a) min_dx = std::min(min_dx, g.dx(a));
    if (dt > min_dx / (2.0 * v_ref))
        throw InvalidInput("grid: stability bound violated, need n_t >= " +
                           std::to_string(static_cast<int>(std::ceil(2.0 * v_ref * T / min_dx))));
    return g;
}

OracleResult solve_fixed_point(const MFGProblem& problem, const GridSpec& grid, double damping,
                               int max_iter) {
    require(damping > 0.0 && damping <= 1.0, "solve_fixed_point: damping must be in (0,1]");
    require(problem.d == grid.dim(), "solve_fixed_point: dimension mismatch");
    // revalidate stability for this problem's horizon
    (void)make_grid_spec(grid.box, grid.pts, grid.n_t, problem.T);

    const GridOps ops(grid);
    const int cells = grid.cells();
    const int n_t = grid.n_t;
    const double dt = problem.T / n_t;
    const double nu = problem.nu();
    const double vol = grid.cell_volume();
    const Mat no_samples(problem.d, 0);

    OracleResult res;
    res.grid = grid;
    res.T = problem.T;
    res.u.assign(n_t + 1, Vec::Zero(cells));
    res.mu.assign(n_t + 1, Vec::Zero(cells));

    // terminal condition and initial density at cell centers
    Vec g_field(cells), mu0(cells);
    for (int iy = 0; iy < ops.ny(); ++iy)
        for (int ix = 0; ix < ops.nx(); ++ix) {
            const Vec x = ops.cell_center(ix, iy);
            g_field[ops.idx(ix, iy)] = problem.terminal_cost(x, no_samples);
            mu0[ops.idx(ix, iy)] =
                std::exp(-(x - problem.mu0_mean).squaredNorm() / (2 * problem.mu0_std * problem.mu0_std));
        }
    mu0 /= mu0.sum() * vol;

    std::vector<Vec> mu_prev(n_t + 1, mu0);

    bool converged = false;
    for (int it = 0; it < max_iter && !converged; ++it) {
        // backward value sweep in reversed time: w_tau+dt from w_tau
        res.u[n_t] = g_field;
        for (int k = n_t - 1; k >= 0; --k) {
            Vec w = res.u[k + 1];
            Vec rhs(cells);
            const double t_level = problem.t(0) + k * dt;  // forward-time label of level k
            for (int iy = 0; iy < ops.ny(); ++iy)
                for (int ix = 0; ix < ops.nx(); ++ix) {
                    const int i = ops.idx(ix, iy);
                    const double f = problem.running_cost(ops.cell_center(ix, iy), no_samples, t_level);
                    rhs[i] = w[i] + dt * (f - ops.hamiltonian_godunov(w, ix, iy));
                }
            Vec next = rhs;
            ops.diffuse(next, dt * nu);
            res.u[k] = next;
        }

        // forward density sweep under drift -grad(u)
        std::vector<Vec> mu_new(n_t + 1);
        mu_new[0] = mu0;
        for (int n = 0; n < n_t; ++n) {
            Vec adv = ops.advect(mu_new[n], res.u[n], dt);
            ops.diffuse(adv, dt * nu);
            mu_new[n + 1] = adv;
        }

        // damped update and L1 change
        double change = 0.0;
        for (int n = 0; n <= n_t; ++n) {
            Vec blended = (1.0 - damping) * mu_prev[n] + damping * mu_new[n];
            change = std::max(change, (blended - mu_prev[n]).cwiseAbs().sum() * vol);
            mu_prev[n] = std::move(blended);
        }
        res.residual_trace.push_back(change);
        if (change < 1e-6) converged = true;
    }
    res.mu = mu_prev;
    res.converged = converged;
    if (!converged)
        res.residual_trace.push_back(std::numeric_limits<double>::quiet_NaN());
    return res;
}

FlowCompareReport compare_to_flow(const OracleResult& oracle, const MFGProblem& problem,
                                  const DensityFlow& flow, const ValuePath& vp) {
    require(std::abs(oracle.T - problem.T) < 1e-12,
            "compare_to_flow: horizons do not match (oracle T=" + std::to_string(oracle.T) +
                ", problem T=" + std::to_string(problem.T) + ")");
    require(flow.steps() == problem.N, "compare_to_flow: flow step count mismatch");
    require(oracle.grid.n_t % problem.N == 0,
            "compare_to_flow: oracle time levels must be a multiple of the flow's");
    const int stride = oracle.grid.n_t / problem.N;
    const GridOps ops(oracle.grid);
    const int cells = oracle.grid.cells();
    const double vol = oracle.grid.cell_volume();

    Mat centers(problem.d, cells);
    for (int iy = 0; iy < ops.ny(); ++iy)
        for (int ix = 0; ix < ops.nx(); ++ix)
            centers.col(ops.idx(ix, iy)) = ops.cell_center(ix, iy);

    const Mat muT = flow.push_samples(flow.steps(), 256, 0x5eedULL);
    PathValueView view(vp, problem, muT);

    FlowCompareReport rep;
    for (int n = 0; n <= problem.N; ++n) {
        const Vec flow_mu = flow.log_density(n, centers).array().exp();
        const Vec& grid_mu = oracle.mu[n * stride];
        rep.density_l1.push_back((flow_mu - grid_mu).cwiseAbs().sum() * vol);

        const Vec& grid_u = oracle.u[n * stride];
        double acc = 0.0;
        for (int i = 0; i < cells; ++i) {
            const double uf = (n == 0) ? vp.u(centers.col(i), 0) : view.u(centers.col(i), n);
            acc += (uf - grid_u[i]) * (uf - grid_u[i]);
        }
        rep.value_rmse.push_back(std::sqrt(acc / cells));
    }
    rep.max_density_l1 =
        *std::max_element(rep.density_l1.begin(), rep.density_l1.end());
    return rep;
}

void dump_fields(const OracleResult& oracle, const std::string& path) {
    const GridOps ops(oracle.grid);
    std::ostringstream out;
    out << "# dims=" << oracle.grid.dim() << " n_t=" << oracle.grid.n_t << " T=" << oracle.T
        << "\n# lo=";
    for (int a = 0; a < oracle.grid.dim(); ++a) out << (a ? "," : "") << oracle.grid.box.lo[a];
    out << " hi=";
    for (int a = 0; a < oracle.grid.dim(); ++a) out << (a ? "," : "") << oracle.grid.box.hi[a];
    out << " pts=";
    for (int a = 0; a < oracle.grid.dim(); ++a) out << (a ? "," : "") << oracle.grid.pts[a];
    out << "\nlevel,cell";
    for (int a = 0; a < oracle.grid.dim(); ++a) out << ",x" << a;
    out << ",mu,u\n";
    for (int n = 0; n < static_cast<int>(oracle.mu.size()); ++n)
        for (int iy = 0; iy < ops.ny(); ++iy)
            for (int ix = 0; ix < ops.nx(); ++ix) {
                const int i = ops.idx(ix, iy);
                const Vec x = ops.cell_center(ix, iy);
                out << n << "," << i;
                for (int a = 0; a < oracle.grid.dim(); ++a)
                    out << "," << CsvWriter::format(x[a]);
                out << "," << CsvWriter::format(oracle.mu[n][i]) << ","
                    << CsvWriter::format(oracle.u[n][i]) << "\n";
            }
    atomic_write_text(path, out.str());
}

}  // namespace mfgflow
