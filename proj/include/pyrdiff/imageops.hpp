#pragma once

#include <utility>

#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

/// Area-average pooling: each output pixel is the mean of its r x r block.
/// r must be a power of two dividing both dimensions.
template <typename T>
Tensor<T> downsample(const Tensor<T>& img, int r);

/// Bilinear upsampling to (H*r, W*r). The output grid spans the same spatial
/// extent as the input (pixel-area alignment); border samples extrapolate the
/// boundary gradient, which keeps constant and linear images exact and makes
/// downsample(upsample(x, r), r) == x for them. r == 1 returns a bit-equal copy.
template <typename T>
Tensor<T> upsample(const Tensor<T>& img, int r);

/// Per-channel 256-bin CDF remapping on the [0,1]-mapped image, mapped back
/// to the internal [-1,1] range. A constant channel maps to constant 1.0.
template <typename T>
Tensor<T> histogram_equalize(const Tensor<T>& img);

/// Base-frame pixel-center coordinates sampled at stride r: X[i][j] = i*r + 0.5
/// (rows), Y[i][j] = j*r + 0.5 (columns), each a single-channel grid of shape
/// (h_base/r, w_base/r).
template <typename T>
std::pair<Tensor<T>, Tensor<T>> coordinate_grid(int h_base, int w_base, int r);

/// 4-channel grid [sin X, cos X, sin Y, cos Y] where X, Y are the stride-r
/// coordinate grids normalized to [0, 2*pi] by the base dimensions. A
/// downsampled image samples the same field more coarsely, so fixed-size
/// kernels can perceive the resolution change.
template <typename T>
Tensor<T> position_encoding(int h_base, int w_base, int r);

/// Peak signal-to-noise ratio in dB on [0,1]-mapped images: 10*log10(1/MSE).
/// Identical images return +infinity.
template <typename T>
double psnr(const Tensor<T>& a, const Tensor<T>& b);

/// Mean SSIM over all valid 11x11 windows (Gaussian weights, sigma 1.5,
/// K1=0.01, K2=0.03, dynamic range 1 on [0,1]-mapped images), channel-averaged.
/// Images smaller than the window fall back to a single global window.
template <typename T>
double ssim(const Tensor<T>& a, const Tensor<T>& b);

}  // namespace pyrdiff
