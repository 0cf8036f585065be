#include "pyrdiff/imageops.hpp"

#include <array>
#include <cmath>
#include <limits>
#include <stdexcept>

namespace pyrdiff {

namespace {

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

constexpr double kTwoPi = 6.283185307179586476925286766559;

template <typename T>
Tensor<T> halve(const Tensor<T>& img) {
    if (img.height % 2 != 0 || img.width % 2 != 0)
        throw std::invalid_argument("downsample: dimensions not divisible by factor");
    Tensor<T> out(img.channels, img.height / 2, img.width / 2);
    for (int c = 0; c < img.channels; ++c) {
        const T* src = img.plane(c);
        T* dst = out.plane(c);
        for (int y = 0; y < out.height; ++y) {
            const T* r0 = src + static_cast<size_t>(2 * y) * img.width;
            const T* r1 = r0 + img.width;
            for (int x = 0; x < out.width; ++x) {
                double acc = static_cast<double>(r0[2 * x]) + r0[2 * x + 1] +
                             r1[2 * x] + r1[2 * x + 1];
                dst[static_cast<size_t>(y) * out.width + x] = static_cast<T>(acc * 0.25);
            }
        }
    }
    return out;
}

}  // namespace

template <typename T>
Tensor<T> downsample(const Tensor<T>& img, int r) {
    if (!is_power_of_two(r)) throw std::invalid_argument("downsample: factor must be a power of two");
    if (img.height % r != 0 || img.width % r != 0)
        throw std::invalid_argument("downsample: dimensions not divisible by factor");
    // Iterated 2x2 means: downsample(x, 4) == downsample(downsample(x, 2), 2)
    // holds bit-exactly by construction.
    Tensor<T> cur = img;
    for (int f = r; f > 1; f /= 2) cur = halve(cur);
    return cur;
}

template <typename T>
Tensor<T> upsample(const Tensor<T>& img, int r) {
    if (!is_power_of_two(r)) throw std::invalid_argument("upsample: factor must be a power of two");
    if (r == 1) return img;
    const int h = img.height, w = img.width;
    Tensor<T> out(img.channels, h * r, w * r);
    const double inv_r = 1.0 / r;
    for (int c = 0; c < img.channels; ++c) {
        const T* src = img.plane(c);
        T* dst = out.plane(c);
        for (int oy = 0; oy < out.height; ++oy) {
            double u = (oy + 0.5) * inv_r - 0.5;
            int i0 = h > 1 ? std::min(h - 2, std::max(0, static_cast<int>(std::floor(u)))) : 0;
            int i1 = h > 1 ? i0 + 1 : 0;
            double fy = h > 1 ? u - i0 : 0.0;
            const T* r0 = src + static_cast<size_t>(i0) * w;
            const T* r1 = src + static_cast<size_t>(i1) * w;
            for (int ox = 0; ox < out.width; ++ox) {
                double v = (ox + 0.5) * inv_r - 0.5;
                int j0 = w > 1 ? std::min(w - 2, std::max(0, static_cast<int>(std::floor(v)))) : 0;
                int j1 = w > 1 ? j0 + 1 : 0;
                double fx = w > 1 ? v - j0 : 0.0;
                double a = r0[j0] + (static_cast<double>(r0[j1]) - r0[j0]) * fx;
                double b = r1[j0] + (static_cast<double>(r1[j1]) - r1[j0]) * fx;
                dst[static_cast<size_t>(oy) * out.width + ox] = static_cast<T>(a + (b - a) * fy);
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> histogram_equalize(const Tensor<T>& img) {
    Tensor<T> out(img.channels, img.height, img.width);
    const size_t n = img.plane_size();
    if (n == 0) return out;
    std::array<uint32_t, 256> hist;
    std::array<double, 256> cdf;
    for (int c = 0; c < img.channels; ++c) {
        hist.fill(0);
        const T* src = img.plane(c);
        T* dst = out.plane(c);
        for (size_t i = 0; i < n; ++i) {
            double u = (static_cast<double>(src[i]) + 1.0) * 0.5;
            u = std::min(1.0, std::max(0.0, u));
            int bin = std::min(255, static_cast<int>(u * 256.0));
            ++hist[bin];
        }
        double acc = 0.0;
        for (int b = 0; b < 256; ++b) {
            acc += hist[b];
            cdf[b] = acc / static_cast<double>(n);
        }
        for (size_t i = 0; i < n; ++i) {
            double u = (static_cast<double>(src[i]) + 1.0) * 0.5;
            u = std::min(1.0, std::max(0.0, u));
            int bin = std::min(255, static_cast<int>(u * 256.0));
            dst[i] = static_cast<T>(2.0 * cdf[bin] - 1.0);
        }
    }
    return out;
}

template <typename T>
std::pair<Tensor<T>, Tensor<T>> coordinate_grid(int h_base, int w_base, int r) {
    if (h_base % r != 0 || w_base % r != 0)
        throw std::invalid_argument("coordinate_grid: dimensions not divisible by stride");
    const int h = h_base / r, w = w_base / r;
    Tensor<T> X(1, h, w), Y(1, h, w);
    for (int i = 0; i < h; ++i)
        for (int j = 0; j < w; ++j) {
            X.at(0, i, j) = static_cast<T>(i * r + 0.5);
            Y.at(0, i, j) = static_cast<T>(j * r + 0.5);
        }
    return {std::move(X), std::move(Y)};
}

template <typename T>
Tensor<T> position_encoding(int h_base, int w_base, int r) {
    if (h_base % r != 0 || w_base % r != 0)
        throw std::invalid_argument("position_encoding: dimensions not divisible by stride");
    const int h = h_base / r, w = w_base / r;
    Tensor<T> out(4, h, w);
    // Rows index X (normalized by height), columns index Y (normalized by width).
    // Stride-r grids sample the identical base-frame values, so the r=2 grid
    // equals the r=1 grid sampled every other pixel, bit for bit.
    for (int i = 0; i < h; ++i) {
        double xv = kTwoPi * (i * r + 0.5) / h_base;
        T sx = static_cast<T>(std::sin(xv)), cx = static_cast<T>(std::cos(xv));
        for (int j = 0; j < w; ++j) {
            out.at(0, i, j) = sx;
            out.at(1, i, j) = cx;
        }
    }
    for (int j = 0; j < w; ++j) {
        double yv = kTwoPi * (j * r + 0.5) / w_base;
        T sy = static_cast<T>(std::sin(yv)), cy = static_cast<T>(std::cos(yv));
        for (int i = 0; i < h; ++i) {
            out.at(2, i, j) = sy;
            out.at(3, i, j) = cy;
        }
    }
    return out;
}

template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "psnr");
    double acc = 0.0;
    for (size_t i = 0; i < a.data.size(); ++i) {
        double d = (static_cast<double>(a.data[i]) - b.data[i]) * 0.5;  // [0,1]-mapped diff
        acc += d * d;
    }
    double mse = acc / static_cast<double>(a.data.size());
    if (mse == 0.0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(1.0 / mse);
}

namespace {

// 11x11 Gaussian window, sigma 1.5, normalized.
std::array<double, 11> ssim_kernel() {
    std::array<double, 11> k{};
    double sum = 0.0;
    for (int i = 0; i < 11; ++i) {
        double d = i - 5.0;
        k[i] = std::exp(-d * d / (2.0 * 1.5 * 1.5));
        sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
}

// Separable valid-window filtering of an (h x w) plane in double.
std::vector<double> filter_valid(const std::vector<double>& in, int h, int w,
                                 const std::array<double, 11>& k) {
    const int wh = h - 10, ww = w - 10;
    std::vector<double> tmp(static_cast<size_t>(h) * ww);
    for (int y = 0; y < h; ++y)
        for (int x = 0; x < ww; ++x) {
            double acc = 0.0;
            for (int i = 0; i < 11; ++i) acc += k[i] * in[static_cast<size_t>(y) * w + x + i];
            tmp[static_cast<size_t>(y) * ww + x] = acc;
        }
    std::vector<double> out(static_cast<size_t>(wh) * ww);
    for (int y = 0; y < wh; ++y)
        for (int x = 0; x < ww; ++x) {
            double acc = 0.0;
            for (int i = 0; i < 11; ++i) acc += k[i] * tmp[static_cast<size_t>(y + i) * ww + x];
            out[static_cast<size_t>(y) * ww + x] = acc;
        }
    return out;
}

}  // namespace

template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b) {
    require_same_shape(a, b, "ssim");
    const double C1 = 0.01 * 0.01, C2 = 0.03 * 0.03;
    const int h = a.height, w = a.width;
    double total = 0.0;

    if (h < 11 || w < 11) {
        // Single global window with uniform weights.
        for (int c = 0; c < a.channels; ++c) {
            const T* pa = a.plane(c);
            const T* pb = b.plane(c);
            double ma = 0, mb = 0, n = static_cast<double>(a.plane_size());
            for (size_t i = 0; i < a.plane_size(); ++i) {
                ma += (pa[i] + 1.0) * 0.5;
                mb += (pb[i] + 1.0) * 0.5;
            }
            ma /= n; mb /= n;
            double va = 0, vb = 0, cov = 0;
            for (size_t i = 0; i < a.plane_size(); ++i) {
                double da = (pa[i] + 1.0) * 0.5 - ma, db = (pb[i] + 1.0) * 0.5 - mb;
                va += da * da; vb += db * db; cov += da * db;
            }
            va /= n; vb /= n; cov /= n;
            total += (2 * ma * mb + C1) * (2 * cov + C2) /
                     ((ma * ma + mb * mb + C1) * (va + vb + C2));
        }
        return total / a.channels;
    }

    static const std::array<double, 11> k = ssim_kernel();
    const size_t n = a.plane_size();
    std::vector<double> ua(n), ub(n), uaa(n), ubb(n), uab(n);
    for (int c = 0; c < a.channels; ++c) {
        const T* pa = a.plane(c);
        const T* pb = b.plane(c);
        for (size_t i = 0; i < n; ++i) {
            double va = (pa[i] + 1.0) * 0.5, vb = (pb[i] + 1.0) * 0.5;
            ua[i] = va; ub[i] = vb; uaa[i] = va * va; ubb[i] = vb * vb; uab[i] = va * vb;
        }
        auto mu_a = filter_valid(ua, h, w, k);
        auto mu_b = filter_valid(ub, h, w, k);
        auto m_aa = filter_valid(uaa, h, w, k);
        auto m_bb = filter_valid(ubb, h, w, k);
        auto m_ab = filter_valid(uab, h, w, k);
        double acc = 0.0;
        for (size_t i = 0; i < mu_a.size(); ++i) {
            double va = m_aa[i] - mu_a[i] * mu_a[i];
            double vb = m_bb[i] - mu_b[i] * mu_b[i];
            double cov = m_ab[i] - mu_a[i] * mu_b[i];
            acc += (2 * mu_a[i] * mu_b[i] + C1) * (2 * cov + C2) /
                   ((mu_a[i] * mu_a[i] + mu_b[i] * mu_b[i] + C1) * (va + vb + C2));
        }
        total += acc / static_cast<double>(mu_a.size());
    }
    return total / a.channels;
}

template Tensor<float> downsample(const Tensor<float>&, int);
template Tensor<double> downsample(const Tensor<double>&, int);
template Tensor<float> upsample(const Tensor<float>&, int);
template Tensor<double> upsample(const Tensor<double>&, int);
template Tensor<float> histogram_equalize(const Tensor<float>&);
template Tensor<double> histogram_equalize(const Tensor<double>&);
template std::pair<Tensor<float>, Tensor<float>> coordinate_grid(int, int, int);
template std::pair<Tensor<double>, Tensor<double>> coordinate_grid(int, int, int);
template Tensor<float> position_encoding(int, int, int);
template Tensor<double> position_encoding(int, int, int);
template double psnr(const Tensor<float>&, const Tensor<float>&);
template double psnr(const Tensor<double>&, const Tensor<double>&);
template double ssim(const Tensor<float>&, const Tensor<float>&);
template double ssim(const Tensor<double>&, const Tensor<double>&);

}  // namespace pyrdiff
