#include "pyrdiff/corrector.hpp"

#include <cmath>
#include <stdexcept>

namespace pyrdiff {

using nn::Activations;

template <typename T>
struct GlobalCorrector<T>::Cache {
    Activations<T> ext_pre1, ext_pre2, ext_pre3;  // extractor pre-activations
    int pool_hw = 0;
    std::vector<T> v;                      // (n, 32) condition vector
    Activations<T> z[3];                   // 1x1 conv outputs before modulation
    Activations<T> p[3];                   // modulated pre-activations
    std::vector<T> scale[3];               // (n, 32)
    int n = 0;
};

namespace {

template <typename T>
std::vector<T> global_average_pool(const Activations<T>& a) {
    std::vector<T> v(static_cast<size_t>(a.n) * a.c);
    const size_t hw = static_cast<size_t>(a.h) * a.w;
    for (int s = 0; s < a.n; ++s)
        for (int c = 0; c < a.c; ++c) {
            const T* p = a.sample(s) + c * hw;
            double acc = 0.0;
            for (size_t i = 0; i < hw; ++i) acc += p[i];
            v[static_cast<size_t>(s) * a.c + c] = static_cast<T>(acc / static_cast<double>(hw));
        }
    return v;
}

// out[s][c][...] = scale[s][c] * z[s][c][...] + shift[s][c]
template <typename T>
void modulate(const Activations<T>& z, const std::vector<T>& scale_shift, int cond_dim,
              Activations<T>& out) {
    out = Activations<T>(z.n, z.c, z.h, z.w);
    const size_t hw = static_cast<size_t>(z.h) * z.w;
    for (int s = 0; s < z.n; ++s)
        for (int c = 0; c < z.c; ++c) {
            T sc = scale_shift[static_cast<size_t>(s) * 2 * cond_dim + c];
            T sh = scale_shift[static_cast<size_t>(s) * 2 * cond_dim + cond_dim + c];
            const T* zp = z.sample(s) + c * hw;
            T* op = out.sample(s) + c * hw;
            for (size_t i = 0; i < hw; ++i) op[i] = sc * zp[i] + sh;
        }
}

}  // namespace

template <typename T>
GlobalCorrector<T>::GlobalCorrector(uint64_t init_seed)
    : ext1_("corrector/ext1", kExtractorChannels, 16, 3, 2),
      ext2_("corrector/ext2", 16, 32, 3, 2),
      ext3_("corrector/ext3", 32, kCondDim, 3, 2),
      base1_("corrector/base1", 3, 32, 1, 1),
      base2_("corrector/base2", 32, 32, 1, 1),
      base3_("corrector/base3", 32, 32, 1, 1),
      base4_("corrector/base4", 32, 3, 1, 1),
      mod1_("corrector/mod1", kCondDim, 2 * kCondDim),
      mod2_("corrector/mod2", kCondDim, 2 * kCondDim),
      mod3_("corrector/mod3", kCondDim, 2 * kCondDim) {
    int idx = 0;
    for (nn::Conv2d<T>* c : {&ext1_, &ext2_, &ext3_, &base1_, &base2_, &base3_}) {
        Rng r = Rng::derive(init_seed, {0xC0, static_cast<uint64_t>(idx++)});
        c->init_kaiming(r);
    }
    base4_.init_zero();  // residual head starts as identity
    for (nn::Linear<T>* m : {&mod1_, &mod2_, &mod3_}) {
        std::fill(m->weight().value.begin(), m->weight().value.end(), T(0));
        for (int c = 0; c < kCondDim; ++c) m->bias().value[c] = T(1);          // scales
        for (int c = kCondDim; c < 2 * kCondDim; ++c) m->bias().value[c] = T(0);  // shifts
    }
}

template <typename T>
GlobalCorrector<T>::~GlobalCorrector() = default;
template <typename T>
GlobalCorrector<T>::GlobalCorrector(GlobalCorrector&&) noexcept = default;
template <typename T>
GlobalCorrector<T>& GlobalCorrector<T>::operator=(GlobalCorrector&&) noexcept = default;

template <typename T>
std::vector<T> GlobalCorrector<T>::condition_vector(const Activations<T>& y3,
                                                    const Activations<T>& cond10) const {
    Activations<T> x = nn::concat(y3, cond10);
    if (x.c != kExtractorChannels)
        throw std::invalid_argument("corrector: expected 13 conditioning channels");
    Activations<T> a = ext1_.infer(x);
    nn::silu_apply(a.data, a.data);
    a = ext2_.infer(a);
    nn::silu_apply(a.data, a.data);
    a = ext3_.infer(a);
    nn::silu_apply(a.data, a.data);
    return global_average_pool(a);
}

template <typename T>
Activations<T> GlobalCorrector<T>::apply_base(const Activations<T>& y3,
                                              const std::vector<T>& condvec) const {
    if (y3.c != 3) throw std::invalid_argument("corrector: y must have 3 channels");
    const nn::Conv2d<T>* base[3] = {&base1_, &base2_, &base3_};
    const nn::Linear<T>* mods[3] = {&mod1_, &mod2_, &mod3_};
    Activations<T> h = y3;
    for (int i = 0; i < 3; ++i) {
        Activations<T> z = base[i]->infer(h);
        std::vector<T> ss = mods[i]->infer(condvec, y3.n);
        modulate(z, ss, kCondDim, h);
        nn::silu_apply(h.data, h.data);
    }
    Activations<T> r = base4_.infer(h);
    Activations<T> out = y3;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += r.data[i];
    return out;
}

template <typename T>
Tensor<T> GlobalCorrector<T>::correct(const Tensor<T>& y, const ConditionLevel<T>& cond) const {
    if (y.height != cond.x_low.height || y.width != cond.x_low.width)
        throw std::invalid_argument("corrector: condition resolution mismatch");
    Tensor<T> c10 = concat_channels<T>({&cond.x_low, &cond.hiseq, &cond.pos});
    Activations<T> y3 = Activations<T>::from_tensor(y);
    std::vector<T> v = condition_vector(y3, Activations<T>::from_tensor(c10));
    return apply_base(y3, v).to_tensor(0);
}

template <typename T>
Activations<T> GlobalCorrector<T>::forward(const Activations<T>& y3, const Activations<T>& cond10,
                                           bool keep_cache) {
    if (!keep_cache) return apply_base(y3, condition_vector(y3, cond10));

    cache_ = std::make_unique<Cache>();
    Cache& cc = *cache_;
    cc.n = y3.n;

    Activations<T> x = nn::concat(y3, cond10);
    cc.ext_pre1 = ext1_.forward(x, true);
    Activations<T> a = cc.ext_pre1;
    nn::silu_apply(cc.ext_pre1.data, a.data);
    cc.ext_pre2 = ext2_.forward(a, true);
    a = cc.ext_pre2;
    nn::silu_apply(cc.ext_pre2.data, a.data);
    cc.ext_pre3 = ext3_.forward(a, true);
    a = cc.ext_pre3;
    nn::silu_apply(cc.ext_pre3.data, a.data);
    cc.pool_hw = a.h * a.w;
    cc.v = global_average_pool(a);

    nn::Conv2d<T>* base[3] = {&base1_, &base2_, &base3_};
    nn::Linear<T>* mods[3] = {&mod1_, &mod2_, &mod3_};
    Activations<T> h = y3;
    for (int i = 0; i < 3; ++i) {
        cc.z[i] = base[i]->forward(h, true);
        std::vector<T> ss = mods[i]->forward(cc.v, y3.n, true);
        cc.scale[i].assign(static_cast<size_t>(y3.n) * kCondDim, T(0));
        for (int s = 0; s < y3.n; ++s)
            for (int c = 0; c < kCondDim; ++c)
                cc.scale[i][static_cast<size_t>(s) * kCondDim + c] =
                    ss[static_cast<size_t>(s) * 2 * kCondDim + c];
        modulate(cc.z[i], ss, kCondDim, cc.p[i]);
        h = cc.p[i];
        nn::silu_apply(cc.p[i].data, h.data);
    }
    Activations<T> r = base4_.forward(h, true);
    Activations<T> out = y3;
    for (size_t i = 0; i < out.data.size(); ++i) out.data[i] += r.data[i];
    return out;
}

template <typename T>
void GlobalCorrector<T>::backward(const Activations<T>& upstream) {
    if (!cache_) throw std::logic_error("corrector: backward without cached forward");
    Cache& cc = *cache_;
    const int n = cc.n;
    const size_t hw = static_cast<size_t>(cc.z[0].h) * cc.z[0].w;

    // Residual head.
    Activations<T> dh = base4_.backward(upstream);

    nn::Conv2d<T>* base[3] = {&base1_, &base2_, &base3_};
    nn::Linear<T>* mods[3] = {&mod1_, &mod2_, &mod3_};
    std::vector<T> dv(static_cast<size_t>(n) * kCondDim, T(0));
    for (int i = 2; i >= 0; --i) {
        nn::silu_backward(cc.p[i].data, dh.data);  // dh is now d(pre-activation)
        // Scale/shift gradients reduce over pixels.
        std::vector<T> dss(static_cast<size_t>(n) * 2 * kCondDim, T(0));
        for (int s = 0; s < n; ++s)
            for (int c = 0; c < kCondDim; ++c) {
                const T* dp = dh.sample(s) + c * hw;
                const T* zp = cc.z[i].sample(s) + c * hw;
                double dsc = 0.0, dsh = 0.0;
                for (size_t k = 0; k < hw; ++k) {
                    dsc += static_cast<double>(dp[k]) * zp[k];
                    dsh += dp[k];
                }
                dss[static_cast<size_t>(s) * 2 * kCondDim + c] = static_cast<T>(dsc);
                dss[static_cast<size_t>(s) * 2 * kCondDim + kCondDim + c] = static_cast<T>(dsh);
            }
        std::vector<T> dv_i = mods[i]->backward(dss, n);
        for (size_t k = 0; k < dv.size(); ++k) dv[k] += dv_i[k];
        // dz = dp * scale, then through the 1x1 conv.
        Activations<T> dz = dh;
        for (int s = 0; s < n; ++s)
            for (int c = 0; c < kCondDim; ++c) {
                T sc = cc.scale[i][static_cast<size_t>(s) * kCondDim + c];
                T* p = dz.sample(s) + c * hw;
                for (size_t k = 0; k < hw; ++k) p[k] *= sc;
            }
        dh = base[i]->backward(dz, /*want_dx=*/i > 0);
    }

    // Condition-vector path: GAP spreads gradient uniformly over pixels.
    Activations<T> da(n, kCondDim, cc.ext_pre3.h, cc.ext_pre3.w);
    const size_t phw = static_cast<size_t>(cc.pool_hw);
    for (int s = 0; s < n; ++s)
        for (int c = 0; c < kCondDim; ++c) {
            T g = static_cast<T>(dv[static_cast<size_t>(s) * kCondDim + c] /
                                 static_cast<double>(phw));
            T* p = da.sample(s) + c * phw;
            for (size_t k = 0; k < phw; ++k) p[k] = g;
        }
    nn::silu_backward(cc.ext_pre3.data, da.data);
    da = ext3_.backward(da);
    nn::silu_backward(cc.ext_pre2.data, da.data);
    da = ext2_.backward(da);
    nn::silu_backward(cc.ext_pre1.data, da.data);
    ext1_.backward(da, /*want_dx=*/false);
}

template <typename T>
std::vector<nn::Param<T>*> GlobalCorrector<T>::params() {
    std::vector<nn::Param<T>*> out;
    for (nn::Conv2d<T>* c : {&ext1_, &ext2_, &ext3_, &base1_, &base2_, &base3_, &base4_}) {
        out.push_back(&c->weight());
        out.push_back(&c->bias());
    }
    for (nn::Linear<T>* m : {&mod1_, &mod2_, &mod3_}) {
        out.push_back(&m->weight());
        out.push_back(&m->bias());
    }
    return out;
}

template <typename T>
void GlobalCorrector<T>::zero_grads() {
    for (auto* p : params()) p->zero_grad();
}

template <typename T>
size_t GlobalCorrector<T>::param_count() const {
    size_t total = 0;
    for (const nn::Conv2d<T>* c : {&ext1_, &ext2_, &ext3_, &base1_, &base2_, &base3_, &base4_})
        total += c->weight().count() + c->bias().count();
    for (const nn::Linear<T>* m : {&mod1_, &mod2_, &mod3_})
        total += m->weight().count() + m->bias().count();
    return total;
}

template <typename T>
void GlobalCorrector<T>::copy_params_from(const GlobalCorrector<T>& other) {
    auto dst = params();
    auto src = const_cast<GlobalCorrector<T>&>(other).params();
    for (size_t i = 0; i < dst.size(); ++i) dst[i]->value = src[i]->value;
}

template <typename T>
double GlobalCorrector<T>::flops_per_call(int h, int w) const {
    double total = 0.0;
    int eh = h, ew = w;
    for (const nn::Conv2d<T>* c : {&ext1_, &ext2_, &ext3_}) {
        total += c->flops(eh, ew);
        eh = c->out_dim(eh);
        ew = c->out_dim(ew);
    }
    for (const nn::Conv2d<T>* c : {&base1_, &base2_, &base3_, &base4_}) total += c->flops(h, w);
    for (const nn::Linear<T>* m : {&mod1_, &mod2_, &mod3_})
        total += 2.0 * m->in_dim() * m->out_dim();
    return total;
}

template <typename T>
void GlobalCorrector<T>::save(PydtContainer& c, const std::string& prefix) const {
    auto ps = const_cast<GlobalCorrector<T>*>(this)->params();
    for (const nn::Param<T>* p : ps) {
        PydtEntry e;
        e.name = prefix + p->name;
        e.tensor = Tensor<float>(1, 1, static_cast<int>(p->count()));
        for (size_t i = 0; i < p->count(); ++i) e.tensor.data[i] = static_cast<float>(p->value[i]);
        c.entries.push_back(std::move(e));
    }
}

template <typename T>
void GlobalCorrector<T>::load(const PydtContainer& c, const std::string& prefix) {
    for (nn::Param<T>* p : params()) {
        const Tensor<float>* t = c.find(prefix + p->name);
        if (!t) throw IoError("checkpoint: missing tensor " + prefix + p->name);
        if (t->data.size() != p->count())
            throw IoError("checkpoint: shape mismatch for " + prefix + p->name);
        for (size_t i = 0; i < p->count(); ++i) p->value[i] = static_cast<T>(t->data[i]);
    }
}

template class GlobalCorrector<float>;
template class GlobalCorrector<double>;

}  // namespace pyrdiff
