#pragma once

#include <cstdint>
#include <memory>
#include <vector>

#include "pyrdiff/condition.hpp"
#include "pyrdiff/nn.hpp"
#include "pyrdiff/pydt.hpp"
#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

/// Lightweight pixel-independent retoucher conditioned on global statistics.
///
/// A three-stage stride-2 extractor (widths {16,32,32}) pools the 13-channel
/// input (y plus x_low/hiseq/pos) into a 32-dim condition vector; the base
/// path is four 1x1 convolutions (widths {32,32,32,3}) whose intermediate
/// layers are modulated per-channel by scale/shift computed from that vector.
/// The result is added residually to y, and the last layer starts at zero, so
/// an untrained corrector is exactly the identity. Under 60k parameters.
template <typename T>
class GlobalCorrector {
public:
    static constexpr int kExtractorChannels = 13;  // 3 y + 3 x_low + 3 hiseq + 4 pos
    static constexpr int kCondDim = 32;

    explicit GlobalCorrector(uint64_t init_seed = 0);
    ~GlobalCorrector();
    GlobalCorrector(GlobalCorrector&&) noexcept;
    GlobalCorrector& operator=(GlobalCorrector&&) noexcept;

    /// Single-image correction: y plus its conditioning level.
    Tensor<T> correct(const Tensor<T>& y, const ConditionLevel<T>& cond) const;

    /// Batched forward. y3 holds the reconstructions (n,3,h,w); cond10 the
    /// conditioning planes (n,10,h,w). keep_cache enables backward().
    nn::Activations<T> forward(const nn::Activations<T>& y3, const nn::Activations<T>& cond10,
                               bool keep_cache);
    /// VJP into corrector parameters only; the input gradient is never
    /// returned, so no gradient can reach the denoising network.
    void backward(const nn::Activations<T>& upstream);

    /// Split evaluation for the fixed-condition equivariance property.
    std::vector<T> condition_vector(const nn::Activations<T>& y3,
                                    const nn::Activations<T>& cond10) const;
    nn::Activations<T> apply_base(const nn::Activations<T>& y3,
                                  const std::vector<T>& condvec) const;

    std::vector<nn::Param<T>*> params();
    void zero_grads();
    size_t param_count() const;
    void copy_params_from(const GlobalCorrector<T>& other);

    double flops_per_call(int h, int w) const;

    void save(PydtContainer& c, const std::string& prefix) const;
    void load(const PydtContainer& c, const std::string& prefix);

private:
    nn::Conv2d<T> ext1_, ext2_, ext3_;       // 13->16->32->32, stride 2, SiLU
    nn::Conv2d<T> base1_, base2_, base3_;    // 1x1, widths 32
    nn::Conv2d<T> base4_;                    // 1x1, 32->3, zero-initialized
    nn::Linear<T> mod1_, mod2_, mod3_;       // 32 -> 64 (scale | shift)

    struct Cache;
    std::unique_ptr<Cache> cache_;
};

extern template class GlobalCorrector<float>;
extern template class GlobalCorrector<double>;

}  // namespace pyrdiff
