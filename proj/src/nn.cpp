#include "pyrdiff/nn.hpp"

#include <Eigen/Core>

#include <cmath>
#include <stdexcept>

namespace pyrdiff::nn {

namespace {

template <typename T>
using MatMap = Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;
template <typename T>
using ConstMatMap =
    Eigen::Map<const Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>>;

// col has one row per (ci, ky, kx) and one column per (sample, oy, ox).
template <typename T>
void im2col(const Activations<T>& x, int ksize, int stride, int pad, int out_h, int out_w,
            std::vector<T>& col) {
    const int n = x.n, cin = x.c, in_h = x.h, in_w = x.w;
    const size_t ncols = static_cast<size_t>(n) * out_h * out_w;
    col.assign(static_cast<size_t>(cin) * ksize * ksize * ncols, T(0));
    const size_t ohw = static_cast<size_t>(out_h) * out_w;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                T* row = col.data() + ((static_cast<size_t>(ci) * ksize + ky) * ksize + kx) * ncols;
                for (int s = 0; s < n; ++s) {
                    const T* src = x.sample(s) + static_cast<size_t>(ci) * in_h * in_w;
                    T* dst = row + s * ohw;
                    for (int oy = 0; oy < out_h; ++oy) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= in_h) {
                            dst += out_w;
                            continue;
                        }
                        const T* srow = src + static_cast<size_t>(iy) * in_w;
                        int ox = 0;
                        int ix = kx - pad;  // ix for ox=0
                        for (; ox < out_w; ++ox) {
                            int x0 = ox * stride + ix;
                            *dst++ = (x0 >= 0 && x0 < in_w) ? srow[x0] : T(0);
                        }
                    }
                }
            }
        }
    }
}

template <typename T>
void col2im(const std::vector<T>& col, int n, int cin, int in_h, int in_w, int ksize, int stride,
            int pad, int out_h, int out_w, Activations<T>& dx) {
    dx = Activations<T>(n, cin, in_h, in_w);
    const size_t ncols = static_cast<size_t>(n) * out_h * out_w;
    const size_t ohw = static_cast<size_t>(out_h) * out_w;
    for (int ci = 0; ci < cin; ++ci) {
        for (int ky = 0; ky < ksize; ++ky) {
            for (int kx = 0; kx < ksize; ++kx) {
                const T* row =
                    col.data() + ((static_cast<size_t>(ci) * ksize + ky) * ksize + kx) * ncols;
                for (int s = 0; s < n; ++s) {
                    T* dst = dx.sample(s) + static_cast<size_t>(ci) * in_h * in_w;
                    const T* src = row + s * ohw;
                    for (int oy = 0; oy < out_h; ++oy) {
                        int iy = oy * stride + ky - pad;
                        if (iy < 0 || iy >= in_h) {
                            src += out_w;
                            continue;
                        }
                        T* drow = dst + static_cast<size_t>(iy) * in_w;
                        for (int ox = 0; ox < out_w; ++ox) {
                            int x0 = ox * stride + kx - pad;
                            if (x0 >= 0 && x0 < in_w) drow[x0] += src[ox];
                        }
                        src += out_w;
                    }
                }
            }
        }
    }
}

// Gather (n,c,h,w) activations into a (c x n*h*w) matrix and back.
template <typename T>
void to_gemm_layout(const Activations<T>& a, std::vector<T>& out) {
    const size_t hw = static_cast<size_t>(a.h) * a.w;
    const size_t ncols = static_cast<size_t>(a.n) * hw;
    out.resize(static_cast<size_t>(a.c) * ncols);
    for (int c = 0; c < a.c; ++c)
        for (int s = 0; s < a.n; ++s) {
            const T* src = a.sample(s) + c * hw;
            std::copy(src, src + hw, out.begin() + c * ncols + s * hw);
        }
}

template <typename T>
void from_gemm_layout(const std::vector<T>& m, Activations<T>& a) {
    const size_t hw = static_cast<size_t>(a.h) * a.w;
    const size_t ncols = static_cast<size_t>(a.n) * hw;
    for (int c = 0; c < a.c; ++c)
        for (int s = 0; s < a.n; ++s) {
            const T* src = m.data() + c * ncols + s * hw;
            std::copy(src, src + hw, a.sample(s) + c * hw);
        }
}

}  // namespace

template <typename T>
void silu_apply(const std::vector<T>& pre, std::vector<T>& out) {
    out.resize(pre.size());
    for (size_t i = 0; i < pre.size(); ++i) out[i] = silu(pre[i]);
}

template <typename T>
void silu_backward(const std::vector<T>& pre, std::vector<T>& dact_to_dpre) {
    for (size_t i = 0; i < pre.size(); ++i) dact_to_dpre[i] *= silu_grad(pre[i]);
}

template <typename T>
Conv2d<T>::Conv2d(std::string name, int cin, int cout, int ksize, int stride)
    : cin_(cin), cout_(cout), ksize_(ksize), stride_(stride), pad_(ksize == 1 ? 0 : 1) {
    weight_.init(name + "/weight", {cout, cin, ksize, ksize});
    bias_.init(name + "/bias", {cout});
}

template <typename T>
void Conv2d<T>::init_kaiming(Rng& rng) {
    double std = std::sqrt(2.0 / (static_cast<double>(cin_) * ksize_ * ksize_));
    for (auto& v : weight_.value) v = static_cast<T>(rng.gaussian() * std);
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
void Conv2d<T>::init_zero() {
    std::fill(weight_.value.begin(), weight_.value.end(), T(0));
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
Activations<T> Conv2d<T>::forward(const Activations<T>& x, bool keep_cache) {
    if (x.c != cin_) throw std::invalid_argument(weight_.name + ": channel mismatch");
    const int out_h = out_dim(x.h), out_w = out_dim(x.w);
    if (out_h < 1 || out_w < 1) throw std::invalid_argument(weight_.name + ": input too small");

    std::vector<T> local_col;
    std::vector<T>& col = keep_cache ? col_ : local_col;
    im2col(x, ksize_, stride_, pad_, out_h, out_w, col);
    if (keep_cache) {
        cache_n_ = x.n;
        cache_in_h_ = x.h;
        cache_in_w_ = x.w;
    }

    const size_t K = static_cast<size_t>(cin_) * ksize_ * ksize_;
    const size_t N = static_cast<size_t>(x.n) * out_h * out_w;
    std::vector<T> y(static_cast<size_t>(cout_) * N);
    {
        ConstMatMap<T> W(weight_.value.data(), cout_, static_cast<Eigen::Index>(K));
        ConstMatMap<T> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
        MatMap<T> Y(y.data(), cout_, static_cast<Eigen::Index>(N));
        Y.noalias() = W * C;
        for (int co = 0; co < cout_; ++co) Y.row(co).array() += bias_.value[co];
    }
    Activations<T> out(x.n, cout_, out_h, out_w);
    from_gemm_layout(y, out);
    return out;
}

template <typename T>
Activations<T> Conv2d<T>::infer(const Activations<T>& x) const {
    if (x.c != cin_) throw std::invalid_argument(weight_.name + ": channel mismatch");
    const int out_h = out_dim(x.h), out_w = out_dim(x.w);
    std::vector<T> col;
    im2col(x, ksize_, stride_, pad_, out_h, out_w, col);
    const size_t K = static_cast<size_t>(cin_) * ksize_ * ksize_;
    const size_t N = static_cast<size_t>(x.n) * out_h * out_w;
    std::vector<T> y(static_cast<size_t>(cout_) * N);
    ConstMatMap<T> W(weight_.value.data(), cout_, static_cast<Eigen::Index>(K));
    ConstMatMap<T> C(col.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
    MatMap<T> Y(y.data(), cout_, static_cast<Eigen::Index>(N));
    Y.noalias() = W * C;
    for (int co = 0; co < cout_; ++co) Y.row(co).array() += bias_.value[co];
    Activations<T> out(x.n, cout_, out_h, out_w);
    from_gemm_layout(y, out);
    return out;
}

template <typename T>
Activations<T> Conv2d<T>::backward(const Activations<T>& dy, bool want_dx) {
    const int out_h = dy.h, out_w = dy.w;
    const size_t K = static_cast<size_t>(cin_) * ksize_ * ksize_;
    const size_t N = static_cast<size_t>(dy.n) * out_h * out_w;
    if (col_.size() != K * N) throw std::logic_error(weight_.name + ": stale activation cache");

    std::vector<T> dym;
    to_gemm_layout(dy, dym);
    {
        ConstMatMap<T> dY(dym.data(), cout_, static_cast<Eigen::Index>(N));
        ConstMatMap<T> C(col_.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
        MatMap<T> dW(weight_.grad.data(), cout_, static_cast<Eigen::Index>(K));
        dW.noalias() += dY * C.transpose();
        for (int co = 0; co < cout_; ++co) bias_.grad[co] += dY.row(co).sum();
    }
    Activations<T> dx;
    if (want_dx) {
        std::vector<T> dcol(K * N);
        ConstMatMap<T> dY(dym.data(), cout_, static_cast<Eigen::Index>(N));
        ConstMatMap<T> W(weight_.value.data(), cout_, static_cast<Eigen::Index>(K));
        MatMap<T> dC(dcol.data(), static_cast<Eigen::Index>(K), static_cast<Eigen::Index>(N));
        dC.noalias() = W.transpose() * dY;
        col2im(dcol, dy.n, cin_, cache_in_h_, cache_in_w_, ksize_, stride_, pad_, out_h, out_w, dx);
    }
    return dx;
}

template <typename T>
double Conv2d<T>::flops(int in_h, int in_w) const {
    double out_hw = static_cast<double>(out_dim(in_h)) * out_dim(in_w);
    return 2.0 * ksize_ * ksize_ * cin_ * cout_ * out_hw;
}

template <typename T>
Linear<T>::Linear(std::string name, int in, int out) : in_(in), out_(out) {
    weight_.init(name + "/weight", {out, in});
    bias_.init(name + "/bias", {out});
}

template <typename T>
void Linear<T>::init_kaiming(Rng& rng) {
    double std = std::sqrt(2.0 / static_cast<double>(in_));
    for (auto& v : weight_.value) v = static_cast<T>(rng.gaussian() * std);
    std::fill(bias_.value.begin(), bias_.value.end(), T(0));
}

template <typename T>
std::vector<T> Linear<T>::infer(const std::vector<T>& x, int n) const {
    std::vector<T> y(static_cast<size_t>(n) * out_);
    ConstMatMap<T> X(x.data(), n, in_);
    ConstMatMap<T> W(weight_.value.data(), out_, in_);
    MatMap<T> Y(y.data(), n, out_);
    Y.noalias() = X * W.transpose();
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_; ++o) y[static_cast<size_t>(i) * out_ + o] += bias_.value[o];
    return y;
}

template <typename T>
std::vector<T> Linear<T>::forward(const std::vector<T>& x, int n, bool keep_cache) {
    if (keep_cache) x_cache_ = x;
    return infer(x, n);
}

template <typename T>
std::vector<T> Linear<T>::backward(const std::vector<T>& dy, int n) {
    if (x_cache_.size() != static_cast<size_t>(n) * in_)
        throw std::logic_error(weight_.name + ": stale activation cache");
    std::vector<T> dx(static_cast<size_t>(n) * in_);
    ConstMatMap<T> dY(dy.data(), n, out_);
    ConstMatMap<T> X(x_cache_.data(), n, in_);
    ConstMatMap<T> W(weight_.value.data(), out_, in_);
    MatMap<T> dW(weight_.grad.data(), out_, in_);
    MatMap<T> dX(dx.data(), n, in_);
    dW.noalias() += dY.transpose() * X;
    for (int i = 0; i < n; ++i)
        for (int o = 0; o < out_; ++o) bias_.grad[o] += dy[static_cast<size_t>(i) * out_ + o];
    dX.noalias() = dY * W;
    return dx;
}

template <typename T>
Activations<T> upsample2_nearest(const Activations<T>& x) {
    Activations<T> out(x.n, x.c, x.h * 2, x.w * 2);
    for (int s = 0; s < x.n; ++s)
        for (int c = 0; c < x.c; ++c) {
            const T* src = x.sample(s) + static_cast<size_t>(c) * x.h * x.w;
            T* dst = out.sample(s) + static_cast<size_t>(c) * out.h * out.w;
            for (int y = 0; y < out.h; ++y) {
                const T* srow = src + static_cast<size_t>(y / 2) * x.w;
                T* drow = dst + static_cast<size_t>(y) * out.w;
                for (int xx = 0; xx < out.w; ++xx) drow[xx] = srow[xx / 2];
            }
        }
    return out;
}

template <typename T>
Activations<T> upsample2_nearest_backward(const Activations<T>& dy) {
    Activations<T> dx(dy.n, dy.c, dy.h / 2, dy.w / 2);
    for (int s = 0; s < dy.n; ++s)
        for (int c = 0; c < dy.c; ++c) {
            const T* src = dy.sample(s) + static_cast<size_t>(c) * dy.h * dy.w;
            T* dst = dx.sample(s) + static_cast<size_t>(c) * dx.h * dx.w;
            for (int y = 0; y < dy.h; ++y) {
                const T* srow = src + static_cast<size_t>(y) * dy.w;
                T* drow = dst + static_cast<size_t>(y / 2) * dx.w;
                for (int xx = 0; xx < dy.w; ++xx) drow[xx / 2] += srow[xx];
            }
        }
    return dx;
}

template <typename T>
Activations<T> concat(const Activations<T>& a, const Activations<T>& b) {
    if (a.n != b.n || a.h != b.h || a.w != b.w)
        throw std::invalid_argument("concat: shape mismatch");
    Activations<T> out(a.n, a.c + b.c, a.h, a.w);
    const size_t hw = static_cast<size_t>(a.h) * a.w;
    for (int s = 0; s < a.n; ++s) {
        std::copy(a.sample(s), a.sample(s) + a.sample_size(), out.sample(s));
        std::copy(b.sample(s), b.sample(s) + b.sample_size(),
                  out.sample(s) + static_cast<size_t>(a.c) * hw);
    }
    return out;
}

template <typename T>
void split_backward(const Activations<T>& d, int ca, Activations<T>& da, Activations<T>& db) {
    const int cb = d.c - ca;
    da = Activations<T>(d.n, ca, d.h, d.w);
    db = Activations<T>(d.n, cb, d.h, d.w);
    const size_t hw = static_cast<size_t>(d.h) * d.w;
    for (int s = 0; s < d.n; ++s) {
        std::copy(d.sample(s), d.sample(s) + ca * hw, da.sample(s));
        std::copy(d.sample(s) + ca * hw, d.sample(s) + d.sample_size(), db.sample(s));
    }
}

template <typename T>
Adam<T>::Adam(std::vector<Param<T>*> params, double beta1, double beta2, double eps)
    : params_(std::move(params)), beta1_(beta1), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
        m_.emplace_back(p->count(), T(0));
        v_.emplace_back(p->count(), T(0));
    }
}

template <typename T>
void Adam<T>::step(double lr) {
    ++steps_;
    const double bc1 = 1.0 - std::pow(beta1_, static_cast<double>(steps_));
    const double bc2 = 1.0 - std::pow(beta2_, static_cast<double>(steps_));
    for (size_t pi = 0; pi < params_.size(); ++pi) {
        Param<T>& p = *params_[pi];
        auto& m = m_[pi];
        auto& v = v_[pi];
        for (size_t i = 0; i < p.count(); ++i) {
            double g = static_cast<double>(p.grad[i]);
            double mi = beta1_ * static_cast<double>(m[i]) + (1.0 - beta1_) * g;
            double vi = beta2_ * static_cast<double>(v[i]) + (1.0 - beta2_) * g * g;
            m[i] = static_cast<T>(mi);
            v[i] = static_cast<T>(vi);
            double mhat = mi / bc1, vhat = vi / bc2;
            p.value[i] = static_cast<T>(p.value[i] - lr * mhat / (std::sqrt(vhat) + eps_));
        }
    }
}

template void silu_apply(const std::vector<float>&, std::vector<float>&);
template void silu_apply(const std::vector<double>&, std::vector<double>&);
template void silu_backward(const std::vector<float>&, std::vector<float>&);
template void silu_backward(const std::vector<double>&, std::vector<double>&);
template class Conv2d<float>;
template class Conv2d<double>;
template class Linear<float>;
template class Linear<double>;
template Activations<float> upsample2_nearest(const Activations<float>&);
template Activations<double> upsample2_nearest(const Activations<double>&);
template Activations<float> upsample2_nearest_backward(const Activations<float>&);
template Activations<double> upsample2_nearest_backward(const Activations<double>&);
template Activations<float> concat(const Activations<float>&, const Activations<float>&);
template Activations<double> concat(const Activations<double>&, const Activations<double>&);
template void split_backward(const Activations<float>&, int, Activations<float>&,
                             Activations<float>&);
template void split_backward(const Activations<double>&, int, Activations<double>&,
                             Activations<double>&);
template class Adam<float>;
template class Adam<double>;

}  // namespace pyrdiff::nn
