#pragma once

#include <algorithm>
#include <cstddef>
#include <stdexcept>
#include <vector>

namespace pyrdiff {

/// Channel-major image/feature grid: data[(c*height + y)*width + x].
/// Images live in [-1, 1] internally; files are 8-bit per channel.
template <typename T>
struct Tensor {
    int channels = 0;
    int height = 0;
    int width = 0;
    std::vector<T> data;

    Tensor() = default;
    Tensor(int c, int h, int w) : channels(c), height(h), width(w) {
        if (c < 0 || h < 0 || w < 0)
            throw std::invalid_argument("Tensor: negative dimension");
        data.assign(static_cast<size_t>(c) * h * w, T(0));
    }

    static Tensor full(int c, int h, int w, T value) {
        Tensor t(c, h, w);
        std::fill(t.data.begin(), t.data.end(), value);
        return t;
    }

    size_t size() const { return data.size(); }
    size_t plane_size() const { return static_cast<size_t>(height) * width; }

    T& at(int c, int y, int x) {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }
    const T& at(int c, int y, int x) const {
        return data[(static_cast<size_t>(c) * height + y) * width + x];
    }

    T* plane(int c) { return data.data() + static_cast<size_t>(c) * plane_size(); }
    const T* plane(int c) const { return data.data() + static_cast<size_t>(c) * plane_size(); }

    bool same_shape(const Tensor& o) const {
        return channels == o.channels && height == o.height && width == o.width;
    }
};

using ImageTensor = Tensor<float>;

template <typename T>
void require_same_shape(const Tensor<T>& a, const Tensor<T>& b, const char* what) {
    if (!a.same_shape(b))
        throw std::invalid_argument(std::string(what) + ": shape mismatch");
}

template <typename U, typename T>
Tensor<U> tensor_cast(const Tensor<T>& t) {
    Tensor<U> out(t.channels, t.height, t.width);
    for (size_t i = 0; i < t.data.size(); ++i) out.data[i] = static_cast<U>(t.data[i]);
    return out;
}

template <typename T>
Tensor<T> clamp(const Tensor<T>& t, T lo, T hi) {
    Tensor<T> out = t;
    for (auto& v : out.data) v = std::min(hi, std::max(lo, v));
    return out;
}

/// Per-channel mean, accumulated in double.
template <typename T>
std::vector<double> channel_means(const Tensor<T>& t) {
    std::vector<double> m(t.channels, 0.0);
    for (int c = 0; c < t.channels; ++c) {
        double acc = 0.0;
        const T* p = t.plane(c);
        for (size_t i = 0; i < t.plane_size(); ++i) acc += p[i];
        m[c] = acc / static_cast<double>(t.plane_size());
    }
    return m;
}

/// Concatenate tensors along the channel axis. All inputs share height/width.
template <typename T>
Tensor<T> concat_channels(const std::vector<const Tensor<T>*>& parts) {
    if (parts.empty()) throw std::invalid_argument("concat_channels: empty");
    int h = parts[0]->height, w = parts[0]->width, c = 0;
    for (const auto* p : parts) {
        if (p->height != h || p->width != w)
            throw std::invalid_argument("concat_channels: spatial mismatch");
        c += p->channels;
    }
    Tensor<T> out(c, h, w);
    size_t off = 0;
    for (const auto* p : parts) {
        std::copy(p->data.begin(), p->data.end(), out.data.begin() + off);
        off += p->data.size();
    }
    return out;
}

}  // namespace pyrdiff
