#include "pyrdiff/denoiser.hpp"

#include <cmath>
#include <stdexcept>

namespace pyrdiff {

namespace {
constexpr double kTwoPi = 6.283185307179586476925286766559;
}

std::array<double, 8> time_embedding(int t, int T) {
    std::array<double, 8> e{};
    const double z = kTwoPi * static_cast<double>(t) / static_cast<double>(T);
    const int freqs[4] = {1, 2, 4, 8};
    for (int i = 0; i < 4; ++i) {
        e[i] = std::sin(z * freqs[i]);
        e[4 + i] = std::cos(z * freqs[i]);
    }
    return e;
}

template <typename T>
Tensor<T> assemble_denoiser_input(const DenoiserInput<T>& input) {
    const Tensor<T>& x = *input.x_t;
    const ConditionLevel<T>& c = *input.cond;
    if (x.height != c.x_low.height || x.width != c.x_low.width)
        throw std::invalid_argument("denoiser input: condition resolution mismatch");

    const Tensor<T>& first = input.swap_order ? c.hiseq : c.x_low;
    const Tensor<T>& second = input.swap_order ? c.x_low : c.hiseq;
    Tensor<T> out = concat_channels<T>({&x, &first, &second, &c.pos});

    auto emb = time_embedding(input.t, input.T_total);
    Tensor<T> planes(8, x.height, x.width);
    for (int ch = 0; ch < 8; ++ch) {
        T v = static_cast<T>(emb[ch]);
        T* p = planes.plane(ch);
        std::fill(p, p + planes.plane_size(), v);
    }
    return concat_channels<T>({&out, &planes});
}

template <typename T>
GaussianOracleDenoiser<T>::GaussianOracleDenoiser(std::vector<double> mu,
                                                  std::vector<double> sigma0)
    : mu_(std::move(mu)), sigma0_(std::move(sigma0)) {
    if (mu_.size() != sigma0_.size())
        throw std::invalid_argument("oracle: mu/sigma0 size mismatch");
    for (double s : sigma0_)
        if (!(s > 0.0)) throw std::invalid_argument("oracle: sigma0 must be positive");
}

template <typename T>
Tensor<T> GaussianOracleDenoiser<T>::predict_noise(const DenoiserInput<T>& input) {
    const Tensor<T>& x = *input.x_t;
    if (static_cast<size_t>(x.channels) != mu_.size())
        throw std::invalid_argument("oracle: channel count mismatch");
    const double ab = input.alpha_bar_t;
    Tensor<T> out(x.channels, x.height, x.width);
    for (int c = 0; c < x.channels; ++c) {
        const double sig = sigma0_[c] / static_cast<double>(input.pyramid_factor);
        const double var = sig * sig;
        const double denom = ab * var + (1.0 - ab);
        const T* src = x.plane(c);
        T* dst = out.plane(c);
        for (size_t i = 0; i < x.plane_size(); ++i) {
            double xt = static_cast<double>(src[i]);
            double m_hat = (std::sqrt(ab) * var * xt + (1.0 - ab) * mu_[c]) / denom;
            dst[i] = static_cast<T>((xt - std::sqrt(ab) * m_hat) / std::sqrt(1.0 - ab));
        }
    }
    return out;
}

template <typename T>
ConvDenoiser<T>::ConvDenoiser(uint64_t init_seed) {
    using nn::Conv2d;
    stages_.resize(kStageCount);
    auto def = [&](int idx, const char* name, int cin, int cout, int k, int stride, int src_a,
                   int src_b, bool up, bool act) {
        Stage& s = stages_[idx];
        s.conv = Conv2d<T>(std::string("denoiser/") + name, cin, cout, k, stride);
        s.src_a = src_a;
        s.src_b = src_b;
        s.upsample = up;
        s.activated = act;
    };
    //    idx name    cin  cout k  s  srcA srcB  up     act
    def(0, "e0a", kInputChannels, 32, 3, 1, -1, -1, false, true);
    def(1, "e0b", 32, 32, 3, 1, 0, -1, false, true);
    def(2, "d1", 32, 64, 3, 2, 1, -1, false, true);
    def(3, "e1b", 64, 64, 3, 1, 2, -1, false, true);
    def(4, "d2", 64, 128, 3, 2, 3, -1, false, true);
    def(5, "mid", 128, 128, 3, 1, 4, -1, false, true);
    def(6, "u1", 128, 64, 3, 1, 5, -1, true, true);
    def(7, "f1", 128, 64, 3, 1, 6, 3, false, true);
    def(8, "u2", 64, 32, 3, 1, 7, -1, true, true);
    def(9, "f2", 64, 32, 3, 1, 8, 1, false, true);
    def(10, "out", 32, 3, 3, 1, 9, -1, false, false);

    for (size_t i = 0; i < stages_.size(); ++i) {
        Rng r = Rng::derive(init_seed, {0xD3, static_cast<uint64_t>(i)});
        stages_[i].conv.init_kaiming(r);
    }
}

template <typename T>
nn::Activations<T> ConvDenoiser<T>::stage_input(
    const Stage& s, const std::vector<const nn::Activations<T>*>& acts) const {
    const nn::Activations<T>& a = s.src_a < 0 ? input_cache_ : *acts[s.src_a];
    nn::Activations<T> base = s.upsample ? nn::upsample2_nearest(a) : a;
    if (s.src_b >= 0) return nn::concat(base, *acts[s.src_b]);
    return base;
}

template <typename T>
nn::Activations<T> ConvDenoiser<T>::forward(const nn::Activations<T>& x, bool keep_cache) {
    if (x.c != kInputChannels)
        throw std::invalid_argument("ConvDenoiser: expected 21 input channels");
    if (x.h % 4 != 0 || x.w % 4 != 0)
        throw std::invalid_argument("ConvDenoiser: resolution must be divisible by 4");

    if (keep_cache) {
        input_cache_ = x;
        has_cache_ = true;
        std::vector<const nn::Activations<T>*> acts(stages_.size(), nullptr);
        for (size_t i = 0; i < stages_.size(); ++i) {
            Stage& s = stages_[i];
            s.conv_input = stage_input(s, acts);
            s.preact = s.conv.forward(s.conv_input, true);
            if (s.activated) {
                s.act = s.preact;
                nn::silu_apply(s.preact.data, s.act.data);
            } else {
                s.act = s.preact;
            }
            acts[i] = &s.act;
        }
        return stages_.back().act;
    }
    return infer(x);
}

template <typename T>
nn::Activations<T> ConvDenoiser<T>::infer(const nn::Activations<T>& x) const {
    if (x.c != kInputChannels)
        throw std::invalid_argument("ConvDenoiser: expected 21 input channels");
    if (x.h % 4 != 0 || x.w % 4 != 0)
        throw std::invalid_argument("ConvDenoiser: resolution must be divisible by 4");
    std::vector<nn::Activations<T>> vals(stages_.size());
    std::vector<const nn::Activations<T>*> acts(stages_.size(), nullptr);
    const nn::Activations<T>* input = &x;
    for (size_t i = 0; i < stages_.size(); ++i) {
        const Stage& s = stages_[i];
        const nn::Activations<T>& a = s.src_a < 0 ? *input : *acts[s.src_a];
        nn::Activations<T> base = s.upsample ? nn::upsample2_nearest(a) : a;
        nn::Activations<T> conv_in = s.src_b >= 0 ? nn::concat(base, *acts[s.src_b]) : std::move(base);
        vals[i] = s.conv.infer(conv_in);
        if (s.activated) nn::silu_apply(vals[i].data, vals[i].data);
        acts[i] = &vals[i];
    }
    return vals.back();
}

template <typename T>
nn::Activations<T> ConvDenoiser<T>::forward_from(int k, const nn::Activations<T>& preact_k) const {
    if (!has_cache_) throw std::logic_error("ConvDenoiser: no cached forward");
    std::vector<nn::Activations<T>> vals(stages_.size());
    std::vector<const nn::Activations<T>*> acts(stages_.size(), nullptr);
    for (int i = 0; i < static_cast<int>(stages_.size()); ++i) acts[i] = &stages_[i].act;

    vals[k] = preact_k;
    if (stages_[k].activated) nn::silu_apply(vals[k].data, vals[k].data);
    acts[k] = &vals[k];
    for (int i = k + 1; i < static_cast<int>(stages_.size()); ++i) {
        const Stage& s = stages_[i];
        const nn::Activations<T>& a = s.src_a < 0 ? input_cache_ : *acts[s.src_a];
        nn::Activations<T> base = s.upsample ? nn::upsample2_nearest(a) : a;
        nn::Activations<T> conv_in = s.src_b >= 0 ? nn::concat(base, *acts[s.src_b]) : std::move(base);
        vals[i] = s.conv.infer(conv_in);
        if (s.activated) nn::silu_apply(vals[i].data, vals[i].data);
        acts[i] = &vals[i];
    }
    return vals.back();
}

template <typename T>
void ConvDenoiser<T>::backward(const nn::Activations<T>& upstream) {
    if (!has_cache_) throw std::logic_error("ConvDenoiser: backward without cached forward");
    std::vector<nn::Activations<T>> dact(stages_.size());
    dact.back() = upstream;

    auto add_into = [](nn::Activations<T>& dst, const nn::Activations<T>& src) {
        if (dst.data.empty()) {
            dst = src;
            return;
        }
        for (size_t i = 0; i < dst.data.size(); ++i) dst.data[i] += src.data[i];
    };

    for (int i = static_cast<int>(stages_.size()) - 1; i >= 0; --i) {
        Stage& s = stages_[i];
        nn::Activations<T>& dy = dact[i];
        if (dy.data.empty()) continue;  // stage feeds nothing that received gradient
        if (s.activated) nn::silu_backward(s.preact.data, dy.data);
        nn::Activations<T> dx = s.conv.backward(dy, /*want_dx=*/s.src_a >= 0 || s.src_b >= 0);
        if (s.src_a < 0) continue;  // input gradient not propagated further
        if (s.src_b >= 0) {
            nn::Activations<T> da, db;
            nn::split_backward(dx, stages_[s.src_a].act.c, da, db);
            if (s.upsample) da = nn::upsample2_nearest_backward(da);
            add_into(dact[s.src_a], da);
            add_into(dact[s.src_b], db);
        } else {
            if (s.upsample) dx = nn::upsample2_nearest_backward(dx);
            add_into(dact[s.src_a], dx);
        }
    }
}

template <typename T>
Tensor<T> ConvDenoiser<T>::predict_noise(const DenoiserInput<T>& input) {
    Tensor<T> in = assemble_denoiser_input(input);
    nn::Activations<T> out = infer(nn::Activations<T>::from_tensor(in));
    return out.to_tensor(0);
}

template <typename T>
std::vector<nn::Param<T>*> ConvDenoiser<T>::params() {
    std::vector<nn::Param<T>*> out;
    for (auto& s : stages_) {
        out.push_back(&s.conv.weight());
        out.push_back(&s.conv.bias());
    }
    return out;
}

template <typename T>
void ConvDenoiser<T>::zero_grads() {
    for (auto* p : params()) p->zero_grad();
}

template <typename T>
size_t ConvDenoiser<T>::param_count() const {
    size_t n = 0;
    for (const auto& s : stages_) n += s.conv.weight().count() + s.conv.bias().count();
    return n;
}

template <typename T>
void ConvDenoiser<T>::copy_params_from(const ConvDenoiser<T>& other) {
    for (size_t i = 0; i < stages_.size(); ++i) {
        stages_[i].conv.weight().value = other.stages_[i].conv.weight().value;
        stages_[i].conv.bias().value = other.stages_[i].conv.bias().value;
    }
}

template <typename T>
nn::Conv2d<T>& ConvDenoiser<T>::stage_conv(int k) {
    return stages_.at(k).conv;
}

template <typename T>
const nn::Activations<T>& ConvDenoiser<T>::stage_conv_input(int k) const {
    return stages_.at(k).conv_input;
}

template <typename T>
const nn::Activations<T>& ConvDenoiser<T>::stage_preact(int k) const {
    return stages_.at(k).preact;
}

template <typename T>
double ConvDenoiser<T>::flops_per_call(int h, int w) const {
    // Spatial sizes per stage mirror the forward topology.
    double total = 0.0;
    std::vector<std::pair<int, int>> dims(stages_.size());
    for (size_t i = 0; i < stages_.size(); ++i) {
        const Stage& s = stages_[i];
        auto [ih, iw] = s.src_a < 0 ? std::pair<int, int>{h, w} : dims[s.src_a];
        if (s.upsample) {
            ih *= 2;
            iw *= 2;
        }
        total += s.conv.flops(ih, iw);
        dims[i] = {s.conv.out_dim(ih), s.conv.out_dim(iw)};
    }
    return total;
}

template <typename T>
void ConvDenoiser<T>::save(PydtContainer& c, const std::string& prefix) const {
    for (const auto& s : stages_) {
        for (const nn::Param<T>* p : {&s.conv.weight(), &s.conv.bias()}) {
            PydtEntry e;
            e.name = prefix + p->name;
            e.tensor = Tensor<float>(1, 1, static_cast<int>(p->count()));
            for (size_t i = 0; i < p->count(); ++i)
                e.tensor.data[i] = static_cast<float>(p->value[i]);
            c.entries.push_back(std::move(e));
        }
    }
}

template <typename T>
void ConvDenoiser<T>::load(const PydtContainer& c, const std::string& prefix) {
    for (auto& s : stages_) {
        for (nn::Param<T>* p : {&s.conv.weight(), &s.conv.bias()}) {
            const Tensor<float>* t = c.find(prefix + p->name);
            if (!t) throw IoError("checkpoint: missing tensor " + prefix + p->name);
            if (t->data.size() != p->count())
                throw IoError("checkpoint: shape mismatch for " + prefix + p->name);
            for (size_t i = 0; i < p->count(); ++i) p->value[i] = static_cast<T>(t->data[i]);
        }
    }
}

template Tensor<float> assemble_denoiser_input(const DenoiserInput<float>&);
template Tensor<double> assemble_denoiser_input(const DenoiserInput<double>&);
template class GaussianOracleDenoiser<float>;
template class GaussianOracleDenoiser<double>;
template class ConvDenoiser<float>;
template class ConvDenoiser<double>;

}  // namespace pyrdiff
