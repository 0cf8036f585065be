#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "pyrdiff/rng.hpp"
#include "pyrdiff/tensor.hpp"

namespace pyrdiff::nn {

/// Batched feature maps, sample-major: data[((s*c + ch)*h + y)*w + x].
template <typename T>
struct Activations {
    int n = 0, c = 0, h = 0, w = 0;
    std::vector<T> data;

    Activations() = default;
    Activations(int n_, int c_, int h_, int w_)
        : n(n_), c(c_), h(h_), w(w_),
          data(static_cast<size_t>(n_) * c_ * h_ * w_, T(0)) {}

    size_t sample_size() const { return static_cast<size_t>(c) * h * w; }
    T* sample(int s) { return data.data() + s * sample_size(); }
    const T* sample(int s) const { return data.data() + s * sample_size(); }

    static Activations from_tensor(const Tensor<T>& t) {
        Activations a(1, t.channels, t.height, t.width);
        a.data = t.data;
        return a;
    }
    Tensor<T> to_tensor(int s) const {
        Tensor<T> t(c, h, w);
        std::copy(sample(s), sample(s) + sample_size(), t.data.begin());
        return t;
    }
    void copy_sample_from(int s, const Tensor<T>& t) {
        std::copy(t.data.begin(), t.data.end(), sample(s));
    }
};

template <typename T>
struct Param {
    std::string name;
    std::vector<int> shape;
    std::vector<T> value;
    std::vector<T> grad;

    size_t count() const { return value.size(); }
    void init(std::string n, std::vector<int> s) {
        name = std::move(n);
        shape = std::move(s);
        size_t total = 1;
        for (int d : shape) total *= static_cast<size_t>(d);
        value.assign(total, T(0));
        grad.assign(total, T(0));
    }
    void zero_grad() { std::fill(grad.begin(), grad.end(), T(0)); }
};

template <typename T>
T silu(T x) {
    return static_cast<T>(x / (1.0 + std::exp(-static_cast<double>(x))));
}

template <typename T>
T silu_grad(T x) {
    double s = 1.0 / (1.0 + std::exp(-static_cast<double>(x)));
    return static_cast<T>(s * (1.0 + static_cast<double>(x) * (1.0 - s)));
}

template <typename T>
void silu_apply(const std::vector<T>& pre, std::vector<T>& out);

/// dpre = dact * silu'(pre), elementwise.
template <typename T>
void silu_backward(const std::vector<T>& pre, std::vector<T>& dact_to_dpre);

/// Zero-padded 2-D convolution backed by im2col + GEMM.
template <typename T>
class Conv2d {
public:
    Conv2d() = default;
    Conv2d(std::string name, int cin, int cout, int ksize, int stride);

    int in_channels() const { return cin_; }
    int out_channels() const { return cout_; }
    int ksize() const { return ksize_; }
    int stride() const { return stride_; }
    int pad() const { return pad_; }
    int out_dim(int in) const { return (in + 2 * pad_ - ksize_) / stride_ + 1; }

    /// He-normal weights scaled for a smooth nonlinearity; zero bias.
    void init_kaiming(Rng& rng);
    void init_zero();

    Activations<T> forward(const Activations<T>& x, bool keep_cache);
    /// Run forward using x as-is without touching the cache (FD/suffix evals).
    Activations<T> infer(const Activations<T>& x) const;
    /// Accumulates weight/bias grads; returns gradient w.r.t. the cached input.
    Activations<T> backward(const Activations<T>& dy, bool want_dx = true);

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }
    const Param<T>& weight() const { return weight_; }
    const Param<T>& bias() const { return bias_; }

    double flops(int in_h, int in_w) const;

private:
    int cin_ = 0, cout_ = 0, ksize_ = 0, stride_ = 1, pad_ = 0;
    Param<T> weight_;  // (cout, cin*k*k)
    Param<T> bias_;    // (cout)
    // forward cache
    std::vector<T> col_;
    int cache_n_ = 0, cache_in_h_ = 0, cache_in_w_ = 0;
};

/// Dense map on per-sample vectors: (n, in) -> (n, out).
template <typename T>
class Linear {
public:
    Linear() = default;
    Linear(std::string name, int in, int out);

    void init_kaiming(Rng& rng);

    std::vector<T> forward(const std::vector<T>& x, int n, bool keep_cache);
    std::vector<T> infer(const std::vector<T>& x, int n) const;
    std::vector<T> backward(const std::vector<T>& dy, int n);

    Param<T>& weight() { return weight_; }
    Param<T>& bias() { return bias_; }
    int in_dim() const { return in_; }
    int out_dim() const { return out_; }

private:
    int in_ = 0, out_ = 0;
    Param<T> weight_;  // (out, in)
    Param<T> bias_;
    std::vector<T> x_cache_;
};

/// Nearest-neighbour 2x upsampling (exact transpose: 2x2 block sums).
template <typename T>
Activations<T> upsample2_nearest(const Activations<T>& x);
template <typename T>
Activations<T> upsample2_nearest_backward(const Activations<T>& dy);

template <typename T>
Activations<T> concat(const Activations<T>& a, const Activations<T>& b);
template <typename T>
void split_backward(const Activations<T>& d, int ca, Activations<T>& da, Activations<T>& db);

/// Adam with bias correction; moments stored in the working precision.
template <typename T>
class Adam {
public:
    Adam() = default;
    Adam(std::vector<Param<T>*> params, double beta1 = 0.9, double beta2 = 0.999,
         double eps = 1e-8);

    void step(double lr);
    int64_t steps_taken() const { return steps_; }

    /// Moment vectors in parameter order, for checkpointing.
    std::vector<std::vector<T>>& m() { return m_; }
    std::vector<std::vector<T>>& v() { return v_; }
    void set_steps(int64_t s) { steps_ = s; }

private:
    std::vector<Param<T>*> params_;
    std::vector<std::vector<T>> m_, v_;
    double beta1_ = 0.9, beta2_ = 0.999, eps_ = 1e-8;
    int64_t steps_ = 0;
};

}  // namespace pyrdiff::nn
