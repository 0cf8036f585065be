#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <vector>

#include "pyrdiff/condition.hpp"
#include "pyrdiff/nn.hpp"
#include "pyrdiff/pydt.hpp"
#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

/// Sinusoidal features sin/cos(t/T * 2*pi * f) for f in {1,2,4,8}, broadcast
/// as constant planes (sin channels first, then cos).
std::array<double, 8> time_embedding(int t, int T);

/// One denoiser evaluation: the noisy image, its conditioning level, the step,
/// and the schedule values the predictor may rely on. Channel order of the
/// x_low/hiseq pair is configurable per call (the training-time swap trick).
template <typename T>
struct DenoiserInput {
    const Tensor<T>* x_t = nullptr;
    const ConditionLevel<T>* cond = nullptr;
    int t = 0;
    int T_total = 0;
    double alpha_bar_t = 1.0;
    int pyramid_factor = 1;
    bool swap_order = false;
};

/// Epsilon-prediction contract shared by the trainable network and the
/// analytic verification oracle.
template <typename T>
class Denoiser {
public:
    virtual ~Denoiser() = default;
    virtual Tensor<T> predict_noise(const DenoiserInput<T>& input) = 0;
};

/// Assemble the 21-channel network input:
/// 3 x_t + 3 x_low + 3 hiseq + 4 pos + 8 constant time-embedding planes.
template <typename T>
Tensor<T> assemble_denoiser_input(const DenoiserInput<T>& input);

/// Bayes-optimal epsilon predictor when x0 pixels are iid N(mu_c, sigma0_c^2)
/// per channel. At pyramid factor s the effective prior std is sigma0/s (the
/// block mean of s^2 iid pixels).
template <typename T>
class GaussianOracleDenoiser final : public Denoiser<T> {
public:
    GaussianOracleDenoiser(std::vector<double> mu, std::vector<double> sigma0);
    Tensor<T> predict_noise(const DenoiserInput<T>& input) override;

private:
    std::vector<double> mu_, sigma0_;
};

/// Small fully convolutional encoder-decoder epsilon predictor with built-in
/// reverse-mode differentiation. 21 input channels, two stride-2 stages down
/// to a bottleneck, two upsampling stages with skip connections, 3-channel
/// output; hidden widths {32, 64, 128}; ~0.5M parameters. Accepts any
/// resolution divisible by 4.
template <typename T>
class ConvDenoiser final : public Denoiser<T> {
public:
    static constexpr int kInputChannels = 21;
    static constexpr int kStageCount = 11;

    explicit ConvDenoiser(uint64_t init_seed = 0);

    Tensor<T> predict_noise(const DenoiserInput<T>& input) override;

    /// Batched forward; keep_cache enables backward().
    nn::Activations<T> forward(const nn::Activations<T>& x, bool keep_cache);
    /// VJP: accumulate d<output, upstream>/dparams into parameter grads.
    void backward(const nn::Activations<T>& upstream);
    /// Forward without touching any cache.
    nn::Activations<T> infer(const nn::Activations<T>& x) const;

    std::vector<nn::Param<T>*> params();
    void zero_grads();
    size_t param_count() const;

    /// Copy parameter values from another instance (worker replicas).
    void copy_params_from(const ConvDenoiser<T>& other);

    // Stage-level access for finite-difference verification:
    // cached pre-activation outputs and suffix re-evaluation from a stage.
    int stage_count() const { return kStageCount; }
    nn::Conv2d<T>& stage_conv(int k);
    const nn::Activations<T>& stage_conv_input(int k) const;
    const nn::Activations<T>& stage_preact(int k) const;
    nn::Activations<T> forward_from(int k, const nn::Activations<T>& preact_k) const;

    double flops_per_call(int h, int w) const;

    void save(PydtContainer& c, const std::string& prefix) const;
    void load(const PydtContainer& c, const std::string& prefix);

private:
    struct Stage {
        nn::Conv2d<T> conv;
        bool activated = true;   // SiLU after conv (all but the output stage)
        int src_a = -1;          // producing stage (-1 = network input)
        int src_b = -1;          // skip source for concat stages
        bool upsample = false;   // nearest 2x before the conv
        // caches from the last cached forward
        nn::Activations<T> conv_input;
        nn::Activations<T> preact;
        nn::Activations<T> act;
    };

    nn::Activations<T> stage_input(const Stage& s,
                                   const std::vector<const nn::Activations<T>*>& acts) const;

    std::vector<Stage> stages_;
    nn::Activations<T> input_cache_;
    bool has_cache_ = false;
};

}  // namespace pyrdiff
