#pragma once

#include <functional>
#include <vector>

#include "pyrdiff/condition.hpp"
#include "pyrdiff/corrector.hpp"
#include "pyrdiff/denoiser.hpp"
#include "pyrdiff/rng.hpp"
#include "pyrdiff/schedules.hpp"
#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

template <typename T>
struct DiffusionState {
    int t = 0;
    Tensor<T> x;
};

/// q(x_t | x_0): sqrt(abar_t) * (x0 downsampled to the step's level) +
/// sqrt(1 - abar_t) * eps. x0 is at base resolution; eps at the level's shape.
template <typename T>
Tensor<T> forward_marginal(const NoiseSchedule& ns, const PyramidSchedule& ps,
                           const Tensor<T>& x0, int t, const Tensor<T>& eps);

/// The y_theta reconstruction: (x_t - sqrt(1-abar_t) * eps_pred) / sqrt(abar_t).
template <typename T>
Tensor<T> reconstruct_x0(const NoiseSchedule& ns, const Tensor<T>& x_t,
                         const Tensor<T>& eps_pred, int t);

/// One reverse step t -> t-1. Same resolution: the tractable posterior mean
/// plus sqrt(beta_tilde_t) * eps. Across a resolution boundary (s_t > s_{t-1}):
/// upsample the reconstruction and re-noise at abar_{t-1}. Noise is forced to
/// zero at t = 1.
template <typename T>
DiffusionState<T> reverse_step(const NoiseSchedule& ns, const PyramidSchedule& ps,
                               const DiffusionState<T>& state, const Tensor<T>& y_prime,
                               const Tensor<T>& eps);

/// Accelerated jump t -> t_next on one pyramid level:
///   x_next = sqrt(abar_next) * y' + sqrt(1 - abar_next - sigma^2) * eps_hat
///            + sigma * eps,
/// with sigma = eta * sqrt((1-abar_next)/(1-abar_t)) * sqrt(1 - abar_t/abar_next)
/// and eps_hat derived from (x_t, y'). t_next = 0 deterministically returns y'.
template <typename T>
DiffusionState<T> ddim_step(const NoiseSchedule& ns, const PyramidSchedule& ps,
                            const DiffusionState<T>& state, const Tensor<T>& y_prime,
                            const Tensor<T>& eps, int t_next, double eta);

/// Descending list of steps where the denoiser runs for an n-call accelerated
/// pass. Every pyramid level contributes both of its endpoints (boundary
/// crossings always use the single-step upsample-renoise branch), with the
/// remaining budget spread uniformly within levels in proportion to their
/// lengths.
std::vector<int> ddim_step_plan(const PyramidSchedule& ps, int n_calls);

struct SampleStats {
    int denoiser_calls = 0;
    int corrector_applications = 0;
    int resolution_changes = 0;
};

/// Full reverse pass (DDPM over all T steps, or the DDIM plan when
/// cfg.ddim_steps is set). The corrector, when given, applies at steps whose
/// amplification factor exceeds cfg.gamma. Returns x_0 at base resolution,
/// clamped to [-1, 1]. Deterministic given (cfg.seed, rng).
template <typename T>
Tensor<T> sample(const NoiseSchedule& ns, const PyramidSchedule& ps, const SamplerConfig& cfg,
                 Denoiser<T>& denoiser, const GlobalCorrector<T>* corrector,
                 const Condition<T>& cond, Rng& rng, SampleStats* stats = nullptr,
                 const std::function<void(int, const Tensor<T>&)>& dump_state = nullptr);

}  // namespace pyrdiff
