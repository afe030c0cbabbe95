#ifndef HIERSEG_NN_HPP
#define HIERSEG_NN_HPP

#include <cstdint>
#include <random>
#include <string>
#include <vector>

namespace hierseg {

/// Dense CHW activation tensor (single image; batching is a caller loop).
struct Tensor {
    int c = 0, h = 0, w = 0;
    std::vector<float> v;

    Tensor() = default;
    Tensor(int c_, int h_, int w_) : c(c_), h(h_), w(w_), v(static_cast<size_t>(c_) * h_ * w_, 0.f) {}
    size_t plane() const { return static_cast<size_t>(h) * w; }
    size_t size() const { return v.size(); }
    float* data() { return v.data(); }
    const float* data() const { return v.data(); }
    void zero() { std::fill(v.begin(), v.end(), 0.f); }
};

struct Param {
    std::vector<float> w;
    std::vector<float> g; // gradient accumulator, same shape
    std::string name;

    void resize(size_t n) { w.assign(n, 0.f); g.assign(n, 0.f); }
};

/// 2D convolution, stride 1, symmetric zero padding (same spatial size for
/// odd kernels).
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(int in_ch, int out_ch, int kernel, std::string name);

    struct Cache {
        std::vector<float> col; // im2col buffer for the weight gradient
        int h = 0, w = 0;
    };

    Tensor forward(const Tensor& x, Cache& cache) const;
    Tensor backward(const Tensor& dy, const Cache& cache);
    void init_he(std::mt19937_64& rng);

    int in_ch() const { return in_ch_; }
    int out_ch() const { return out_ch_; }
    Param weight, bias;

private:
    int in_ch_ = 0, out_ch_ = 0, kernel_ = 0, pad_ = 0;
};

class Linear {
public:
    Linear() = default;
    Linear(int in_dim, int out_dim, std::string name);

    std::vector<float> forward(const std::vector<float>& x) const;
    std::vector<float> backward(const std::vector<float>& x, const std::vector<float>& dy);
    void init_he(std::mt19937_64& rng);

    int in_dim() const { return in_dim_; }
    int out_dim() const { return out_dim_; }
    Param weight, bias;

private:
    int in_dim_ = 0, out_dim_ = 0;
};

Tensor relu_forward(const Tensor& x);
Tensor relu_backward(const Tensor& y, const Tensor& dy);

struct PoolCache {
    std::vector<int32_t> argmax;
};
Tensor maxpool2_forward(const Tensor& x, PoolCache& cache);
Tensor maxpool2_backward(const Tensor& dy, const PoolCache& cache, int in_h, int in_w);

Tensor upsample2_forward(const Tensor& x);
Tensor upsample2_backward(const Tensor& dy);

Tensor concat_channels(const Tensor& a, const Tensor& b);
void split_channels(const Tensor& dab, Tensor& da, Tensor& db);

/// Decoupled-weight-decay adaptive-moments optimizer.
class AdamW {
public:
    AdamW(std::vector<Param*> params, double lr, double weight_decay = 0.01,
          double beta1 = 0.9, double beta2 = 0.999, double eps = 1e-8);

    void step();
    void zero_grad();
    void set_lr(double lr) { lr_ = lr; }
    double lr() const { return lr_; }

private:
    std::vector<Param*> params_;
    std::vector<std::vector<float>> m_, v_;
    double lr_, wd_, beta1_, beta2_, eps_;
    int64_t t_ = 0;
};

} // namespace hierseg

#endif
