#include "mfgflow/net.hpp"

#include <cmath>

namespace mfgflow {

Mlp1h::Mlp1h(int in, int hidden, int out) : in_(in), hidden_(hidden), out_(out) {
    params_ = Vec::Zero(hidden * in + hidden + out * hidden + out);
}

Eigen::Map<const Mat> Mlp1h::W() const { return {params_.data(), hidden_, in_}; }
Eigen::Map<const Vec> Mlp1h::b() const { return {params_.data() + hidden_ * in_, hidden_}; }
Eigen::Map<const Mat> Mlp1h::C() const {
    return {params_.data() + hidden_ * in_ + hidden_, out_, hidden_};
}
Eigen::Map<const Vec> Mlp1h::c0() const {
    return {params_.data() + hidden_ * in_ + hidden_ + out_ * hidden_, out_};
}

void Mlp1h::init_random(const CounterRng& rng, std::uint64_t stream, double scale) {
    const CounterRng r = rng.stream(stream);
    const double w_sd = scale / std::sqrt(static_cast<double>(in_));
    const double c_sd = scale / std::sqrt(static_cast<double>(hidden_));
    int k = 0;
    for (int i = 0; i < hidden_ * in_; ++i, ++k) params_[k] = w_sd * r.normal(k);
    for (int i = 0; i < hidden_; ++i, ++k) params_[k] = 0.1 * r.normal(k);
    for (int i = 0; i < out_ * hidden_; ++i, ++k) params_[k] = c_sd * r.normal(k);
    for (int i = 0; i < out_; ++i, ++k) params_[k] = 0.0;
}

Mat Mlp1h::forward(const Mat& X) const {
    Mat T = ((W() * X).colwise() + b()).array().tanh();
    return (C() * T).colwise() + c0();
}

Vec Mlp1h::forward1(const Vec& x) const { return forward(Mat(x)); }

Mat Mlp1h::forward_cached(const Mat& X, Cache& cache) const {
    cache.X = X;
    cache.Tn = ((W() * X).colwise() + b()).array().tanh();
    return (C() * cache.Tn).colwise() + c0();
}

Vec Mlp1h::input_grad(const Vec& x, int j) const {
    const Vec t = (W() * x + b()).array().tanh();
    const Vec s = C().row(j).transpose().array() * (1.0 - t.array().square());
    return W().transpose() * s;
}

double Mlp1h::input_laplacian(const Vec& x, int j) const {
    const Vec t = (W() * x + b()).array().tanh();
    // d2/dx2 tanh(w.x+b) = -2 t (1-t^2) w w^T ; trace picks |w|^2
    const Vec row_sq = W().rowwise().squaredNorm();
    double acc = 0.0;
    for (int k = 0; k < hidden_; ++k)
        acc += C()(j, k) * (-2.0 * t[k] * (1.0 - t[k] * t[k])) * row_sq[k];
    return acc;
}

void Mlp1h::backward(const Cache& cache, const Mat& dY, Vec& grad, Mat* dX) const {
    const int m = static_cast<int>(cache.X.cols());
    Eigen::Map<Mat> gW(grad.data(), hidden_, in_);
    Eigen::Map<Vec> gb(grad.data() + hidden_ * in_, hidden_);
    Eigen::Map<Mat> gC(grad.data() + hidden_ * in_ + hidden_, out_, hidden_);
    Eigen::Map<Vec> gc0(grad.data() + hidden_ * in_ + hidden_ + out_ * hidden_, out_);

    gC.noalias() += dY * cache.Tn.transpose();
    gc0.noalias() += dY.rowwise().sum();
    Mat dT = C().transpose() * dY;
    dT.array() *= (1.0 - cache.Tn.array().square());
    gW.noalias() += dT * cache.X.transpose();
    gb.noalias() += dT.rowwise().sum();
    if (dX) {
        dX->resize(in_, m);
        dX->noalias() = W().transpose() * dT;
    }
}

// --- MlpDeep ---

MlpDeep::MlpDeep(std::vector<int> dims) : dims_(std::move(dims)) {
    require(dims_.size() >= 2, "MlpDeep needs at least input and output dims");
    int total = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        offsets_.push_back(total);
        total += dims_[l + 1] * dims_[l] + dims_[l + 1];
    }
    params_ = Vec::Zero(total);
}

void MlpDeep::init_random(const CounterRng& rng, std::uint64_t stream, double scale) {
    const CounterRng r = rng.stream(stream);
    int k = 0;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        const double sd = scale / std::sqrt(static_cast<double>(dims_[l]));
        for (int i = 0; i < dims_[l + 1] * dims_[l]; ++i, ++k) params_[k] = sd * r.normal(k);
        for (int i = 0; i < dims_[l + 1]; ++i, ++k) params_[k] = 0.0;
    }
}

Mat MlpDeep::forward(const Mat& X) const {
    Cache c;
    return forward_cached(X, c);
}

Mat MlpDeep::forward_cached(const Mat& X, Cache& cache) const {
    cache.acts.clear();
    cache.acts.push_back(X);
    Mat h = X;
    for (std::size_t l = 0; l + 1 < dims_.size(); ++l) {
        Eigen::Map<const Mat> Wl(params_.data() + offsets_[l], dims_[l + 1], dims_[l]);
        Eigen::Map<const Vec> bl(params_.data() + offsets_[l] + dims_[l + 1] * dims_[l], dims_[l + 1]);
        h = (Wl * h).colwise() + bl;
        if (l + 2 < dims_.size()) h = h.array().tanh();
        cache.acts.push_back(h);
    }
    return h;
}

void MlpDeep::backward(const Cache& cache, const Mat& dY, Vec& grad, Mat* dX) const {
    Mat delta = dY;
    for (int l = static_cast<int>(dims_.size()) - 2; l >= 0; --l) {
        Eigen::Map<const Mat> Wl(params_.data() + offsets_[l], dims_[l + 1], dims_[l]);
        Eigen::Map<Mat> gW(grad.data() + offsets_[l], dims_[l + 1], dims_[l]);
        Eigen::Map<Vec> gb(grad.data() + offsets_[l] + dims_[l + 1] * dims_[l], dims_[l + 1]);

        // activation derivative applies to this layer's output unless it is the last
        if (l + 2 < static_cast<int>(dims_.size()))
            delta.array() *= (1.0 - cache.acts[l + 1].array().square());
        // input of layer l is acts[l]; pre-activation inputs were overwritten by tanh,
        // which is why acts stores post-activation values
        Mat in = cache.acts[l];
        gW.noalias() += delta * in.transpose();
        gb.noalias() += delta.rowwise().sum();
        if (l > 0 || dX) {
            Mat prev = Wl.transpose() * delta;
            if (l == 0) {
                if (dX) *dX = prev;
                break;
            }
            delta = std::move(prev);
        }
    }
}

void Adam::step(Vec& params, const Vec& grad) {
    ++t_;
    m_ = beta1_ * m_ + (1.0 - beta1_) * grad;
    v_ = beta2_ * v_.array() + (1.0 - beta2_) * grad.array().square();
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    params.array() -= lr_ * (m_.array() / bc1) / ((v_.array() / bc2).sqrt() + eps_);
}

}  // namespace mfgflow
