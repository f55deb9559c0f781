#pragma once

#include <Eigen/Core>

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace mfgflow {

using Vec = Eigen::VectorXd;
using Mat = Eigen::MatrixXd;  // samples are stored column-wise: d x M

/// Thrown when an input violates a documented precondition or schema.
struct InvalidInput : std::invalid_argument {
    using std::invalid_argument::invalid_argument;
};

/// Thrown when a computation fails at runtime (divergence, non-finite state, I/O).
struct RuntimeFailure : std::runtime_error {
    using std::runtime_error::runtime_error;
};

/// Compensated (Kahan) accumulator. Loss reductions use this so the result
/// does not depend on summation order beyond ~1e-16 per term.
class KahanSum {
public:
    void add(double x) {
        const double y = x - comp_;
        const double t = sum_ + y;
        comp_ = (t - sum_) - y;
        sum_ = t;
    }
    double value() const { return sum_; }

private:
    double sum_ = 0.0;
    double comp_ = 0.0;
};

inline double mean_compensated(const std::vector<double>& xs) {
    if (xs.empty()) return 0.0;
    KahanSum s;
    for (double x : xs) s.add(x);
    return s.value() / static_cast<double>(xs.size());
}

/// Axis-aligned box; lo/hi have the spatial dimension of the problem.
struct Box {
    Vec lo;
    Vec hi;

    int dim() const { return static_cast<int>(lo.size()); }
    double side(int axis) const { return hi[axis] - lo[axis]; }
    bool contains(const Vec& x) const {
        for (int a = 0; a < dim(); ++a)
            if (x[a] < lo[a] || x[a] > hi[a]) return false;
        return true;
    }
};

inline void require(bool cond, const std::string& msg) {
    if (!cond) throw InvalidInput(msg);
}

}  // namespace mfgflow
