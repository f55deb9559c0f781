#pragma once

#include "mfgflow/common.hpp"
#include "mfgflow/rng.hpp"

#include <vector>

namespace mfgflow {

/// Single-hidden-layer tanh network, y = C tanh(Wx + b) + c0.
/// One hidden layer keeps input gradients and Laplacians of any output head
/// in closed form, which the HJB residual needs exactly.
class Mlp1h {
public:
    Mlp1h() = default;
    Mlp1h(int in, int hidden, int out);

    int n_params() const { return static_cast<int>(params_.size()); }
    const Vec& params() const { return params_; }
    Vec& params() { return params_; }
    int in_dim() const { return in_; }
    int out_dim() const { return out_; }
    int hidden_dim() const { return hidden_; }

    void init_random(const CounterRng& rng, std::uint64_t stream, double scale = 1.0);

    /// Batched forward; X is in x M, result out x M.
    Mat forward(const Mat& X) const;
    Vec forward1(const Vec& x) const;

    /// Gradient of output head `j` with respect to the input, at x.
    Vec input_grad(const Vec& x, int j) const;
    /// Laplacian (trace of the input Hessian) of output head `j` at x.
    double input_laplacian(const Vec& x, int j) const;

    /// Forward pass retaining activations for backward().
    struct Cache {
        Mat X;   // in x M
        Mat Tn;  // hidden x M, tanh activations
    };
    Mat forward_cached(const Mat& X, Cache& cache) const;

    /// Accumulate parameter gradients (and optionally input gradients) for
    /// upstream dY (out x M). grad must be zero-initialised by the caller.
    void backward(const Cache& cache, const Mat& dY, Vec& grad, Mat* dX = nullptr) const;

private:
    // views into the flat parameter vector
    Eigen::Map<const Mat> W() const;
    Eigen::Map<const Vec> b() const;
    Eigen::Map<const Mat> C() const;
    Eigen::Map<const Vec> c0() const;

    int in_ = 0, hidden_ = 0, out_ = 0;
    Vec params_;
};

/// Plain fully connected stack with tanh between layers (linear last layer).
class MlpDeep {
public:
    MlpDeep() = default;
    explicit MlpDeep(std::vector<int> dims);  // dims = {in, h1, ..., out}

    int n_params() const { return static_cast<int>(params_.size()); }
    const Vec& params() const { return params_; }
    Vec& params() { return params_; }
    const std::vector<int>& dims() const { return dims_; }

    void init_random(const CounterRng& rng, std::uint64_t stream, double scale = 1.0);

    struct Cache {
        std::vector<Mat> acts;  // activations per layer input (first = X)
    };
    Mat forward(const Mat& X) const;
    Mat forward_cached(const Mat& X, Cache& cache) const;
    void backward(const Cache& cache, const Mat& dY, Vec& grad, Mat* dX = nullptr) const;

private:
    std::vector<int> dims_;
    std::vector<int> offsets_;  // per layer: [W, b] offset into params_
    Vec params_;
};

/// Adaptive-moment first-order optimizer (standard bias-corrected form).
class Adam {
public:
    Adam() = default;
    Adam(int n, double lr) : lr_(lr), m_(Vec::Zero(n)), v_(Vec::Zero(n)) {}

    void step(Vec& params, const Vec& grad);
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    double lr_ = 1e-3;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    long t_ = 0;
    Vec m_, v_;
};

}  // namespace mfgflow
