#include "hierseg/nn.hpp"

#include <cmath>

#include <Eigen/Dense>

namespace hierseg {

namespace {
using MatMap = Eigen::Map<Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

void im2col(const Tensor& x, int kernel, int pad, std::vector<float>& col) {
    const int kk = kernel * kernel;
    const int rows = x.c * kk;
    const size_t n = x.plane();
    col.assign(static_cast<size_t>(rows) * n, 0.f);
    for (int c = 0; c < x.c; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                float* dst = col.data() + (static_cast<size_t>(c) * kk + ky * kernel + kx) * n;
                const float* src = x.data() + static_cast<size_t>(c) * n;
                for (int y = 0; y < x.h; ++y) {
                    int sy = y + ky - pad;
                    if (sy < 0 || sy >= x.h) continue;
                    int x0 = std::max(0, pad - kx);
                    int x1 = std::min(x.w, x.w + pad - kx);
                    for (int xx = x0; xx < x1; ++xx)
                        dst[static_cast<size_t>(y) * x.w + xx] =
                            src[static_cast<size_t>(sy) * x.w + xx + kx - pad];
                }
            }
}

void col2im(const std::vector<float>& col, int channels, int kernel, int pad, Tensor& x) {
    const int kk = kernel * kernel;
    const size_t n = x.plane();
    x.zero();
    for (int c = 0; c < channels; ++c)
        for (int ky = 0; ky < kernel; ++ky)
            for (int kx = 0; kx < kernel; ++kx) {
                const float* src = col.data() + (static_cast<size_t>(c) * kk + ky * kernel + kx) * n;
                float* dst = x.data() + static_cast<size_t>(c) * n;
                for (int y = 0; y < x.h; ++y) {
                    int sy = y + ky - pad;
                    if (sy < 0 || sy >= x.h) continue;
                    int x0 = std::max(0, pad - kx);
                    int x1 = std::min(x.w, x.w + pad - kx);
                    for (int xx = x0; xx < x1; ++xx)
                        dst[static_cast<size_t>(sy) * x.w + xx + kx - pad] +=
                            src[static_cast<size_t>(y) * x.w + xx];
                }
            }
}
} // namespace

Conv2d::Conv2d(int in_ch, int out_ch, int kernel, std::string name)
    : in_ch_(in_ch), out_ch_(out_ch), kernel_(kernel), pad_(kernel / 2) {
    weight.resize(static_cast<size_t>(out_ch) * in_ch * kernel * kernel);
    bias.resize(out_ch);
    weight.name = name + ".weight";
    bias.name = name + ".bias";
}

void Conv2d::init_he(std::mt19937_64& rng) {
    const double fan_in = static_cast<double>(in_ch_) * kernel_ * kernel_;
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / fan_in));
    for (auto& v : weight.w) v = static_cast<float>(dist(rng));
    std::fill(bias.w.begin(), bias.w.end(), 0.f);
}

Tensor Conv2d::forward(const Tensor& x, Cache& cache) const {
    const size_t n = x.plane();
    im2col(x, kernel_, pad_, cache.col);
    cache.h = x.h;
    cache.w = x.w;
    Tensor y(out_ch_, x.h, x.w);
    const int rows = in_ch_ * kernel_ * kernel_;
    ConstMatMap W(weight.w.data(), out_ch_, rows);
    ConstMatMap C(cache.col.data(), rows, static_cast<Eigen::Index>(n));
    MatMap Y(y.data(), out_ch_, static_cast<Eigen::Index>(n));
    Y.noalias() = W * C;
    for (int oc = 0; oc < out_ch_; ++oc)
        Y.row(oc).array() += bias.w[oc];
    return y;
}

Tensor Conv2d::backward(const Tensor& dy, const Cache& cache) {
    const size_t n = dy.plane();
    const int rows = in_ch_ * kernel_ * kernel_;
    ConstMatMap dY(dy.data(), out_ch_, static_cast<Eigen::Index>(n));
    ConstMatMap C(cache.col.data(), rows, static_cast<Eigen::Index>(n));
    MatMap dW(weight.g.data(), out_ch_, rows);
    dW.noalias() += dY * C.transpose();
    for (int oc = 0; oc < out_ch_; ++oc)
        bias.g[oc] += dY.row(oc).sum();

    std::vector<float> dcol(static_cast<size_t>(rows) * n);
    MatMap dC(dcol.data(), rows, static_cast<Eigen::Index>(n));
    ConstMatMap W(weight.w.data(), out_ch_, rows);
    dC.noalias() = W.transpose() * dY;
    Tensor dx(in_ch_, cache.h, cache.w);
    col2im(dcol, in_ch_, kernel_, pad_, dx);
    return dx;
}

Linear::Linear(int in_dim, int out_dim, std::string name) : in_dim_(in_dim), out_dim_(out_dim) {
    weight.resize(static_cast<size_t>(out_dim) * in_dim);
    bias.resize(out_dim);
    weight.name = name + ".weight";
    bias.name = name + ".bias";
}

void Linear::init_he(std::mt19937_64& rng) {
    std::normal_distribution<double> dist(0.0, std::sqrt(2.0 / in_dim_));
    for (auto& v : weight.w) v = static_cast<float>(dist(rng));
    std::fill(bias.w.begin(), bias.w.end(), 0.f);
}

std::vector<float> Linear::forward(const std::vector<float>& x) const {
    std::vector<float> y(out_dim_);
    for (int o = 0; o < out_dim_; ++o) {
        float acc = bias.w[o];
        const float* wrow = weight.w.data() + static_cast<size_t>(o) * in_dim_;
        for (int i = 0; i < in_dim_; ++i) acc += wrow[i] * x[i];
        y[o] = acc;
    }
    return y;
}

std::vector<float> Linear::backward(const std::vector<float>& x, const std::vector<float>& dy) {
    std::vector<float> dx(in_dim_, 0.f);
    for (int o = 0; o < out_dim_; ++o) {
        bias.g[o] += dy[o];
        float* grow = weight.g.data() + static_cast<size_t>(o) * in_dim_;
        const float* wrow = weight.w.data() + static_cast<size_t>(o) * in_dim_;
        for (int i = 0; i < in_dim_; ++i) {
            grow[i] += dy[o] * x[i];
            dx[i] += wrow[i] * dy[o];
        }
    }
    return dx;
}

Tensor relu_forward(const Tensor& x) {
    Tensor y = x;
    for (auto& v : y.v) v = v > 0.f ? v : 0.f;
    return y;
}

Tensor relu_backward(const Tensor& y, const Tensor& dy) {
    Tensor dx = dy;
    for (size_t i = 0; i < dx.v.size(); ++i)
        if (y.v[i] <= 0.f) dx.v[i] = 0.f;
    return dx;
}

Tensor maxpool2_forward(const Tensor& x, PoolCache& cache) {
    Tensor y(x.c, x.h / 2, x.w / 2);
    cache.argmax.resize(y.size());
    for (int c = 0; c < x.c; ++c)
        for (int oy = 0; oy < y.h; ++oy)
            for (int ox = 0; ox < y.w; ++ox) {
                float best = -1e30f;
                int best_idx = 0;
                for (int dy = 0; dy < 2; ++dy)
                    for (int dx = 0; dx < 2; ++dx) {
                        int idx = static_cast<int>(static_cast<size_t>(c) * x.plane()) +
                                  (oy * 2 + dy) * x.w + ox * 2 + dx;
                        if (x.v[idx] > best) {
                            best = x.v[idx];
                            best_idx = idx;
                        }
                    }
                size_t oidx = static_cast<size_t>(c) * y.plane() + static_cast<size_t>(oy) * y.w + ox;
                y.v[oidx] = best;
                cache.argmax[oidx] = best_idx;
            }
    return y;
}

Tensor maxpool2_backward(const Tensor& dy, const PoolCache& cache, int in_h, int in_w) {
    Tensor dx(dy.c, in_h, in_w);
    for (size_t i = 0; i < dy.v.size(); ++i)
        dx.v[cache.argmax[i]] += dy.v[i];
    return dx;
}

Tensor upsample2_forward(const Tensor& x) {
    Tensor y(x.c, x.h * 2, x.w * 2);
    for (int c = 0; c < x.c; ++c)
        for (int oy = 0; oy < y.h; ++oy)
            for (int ox = 0; ox < y.w; ++ox)
                y.v[static_cast<size_t>(c) * y.plane() + static_cast<size_t>(oy) * y.w + ox] =
                    x.v[static_cast<size_t>(c) * x.plane() + static_cast<size_t>(oy / 2) * x.w + ox / 2];
    return y;
}

Tensor upsample2_backward(const Tensor& dy) {
    Tensor dx(dy.c, dy.h / 2, dy.w / 2);
    for (int c = 0; c < dy.c; ++c)
        for (int oy = 0; oy < dy.h; ++oy)
            for (int ox = 0; ox < dy.w; ++ox)
                dx.v[static_cast<size_t>(c) * dx.plane() + static_cast<size_t>(oy / 2) * dx.w + ox / 2] +=
                    dy.v[static_cast<size_t>(c) * dy.plane() + static_cast<size_t>(oy) * dy.w + ox];
    return dx;
}

Tensor concat_channels(const Tensor& a, const Tensor& b) {
    Tensor y(a.c + b.c, a.h, a.w);
    std::copy(a.v.begin(), a.v.end(), y.v.begin());
    std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<ptrdiff_t>(a.size()));
    return y;
}

void split_channels(const Tensor& dab, Tensor& da, Tensor& db) {
    std::copy(dab.v.begin(), dab.v.begin() + static_cast<ptrdiff_t>(da.size()), da.v.begin());
    std::copy(dab.v.begin() + static_cast<ptrdiff_t>(da.size()), dab.v.end(), db.v.begin());
}

AdamW::AdamW(std::vector<Param*> params, double lr, double weight_decay, double beta1,
             double beta2, double eps)
    : params_(std::move(params)), lr_(lr), wd_(weight_decay), beta1_(beta1), beta2_(beta2),
      eps_(eps) {
    for (const Param* p : params_) {
        m_.emplace_back(p->w.size(), 0.f);
        v_.emplace_back(p->w.size(), 0.f);
    }
}

void AdamW::step() {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(t_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(t_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Param& p = *params_[pi];
        for (size_t i = 0; i < p.w.size(); ++i) {
            double g = p.g[i];
            double m = beta1_ * m_[pi][i] + (1.0 - beta1_) * g;
            double v = beta2_ * v_[pi][i] + (1.0 - beta2_) * g * g;
            m_[pi][i] = static_cast<float>(m);
            v_[pi][i] = static_cast<float>(v);
            double mhat = m / bc1, vhat = v / bc2;
            p.w[i] = static_cast<float>(p.w[i] - lr_ * (mhat / (std::sqrt(vhat) + eps_) +
                                                        wd_ * p.w[i]));
        }
    }
}

void AdamW::zero_grad() {
    for (Param* p : params_) std::fill(p->g.begin(), p->g.end(), 0.f);
}

} // namespace hierseg
