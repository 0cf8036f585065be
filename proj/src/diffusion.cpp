#include "pyrdiff/diffusion.hpp"

#include <cmath>
#include <stdexcept>

#include "pyrdiff/imageops.hpp"

namespace pyrdiff {

template <typename T>
Tensor<T> forward_marginal(const NoiseSchedule& ns, const PyramidSchedule& ps,
                           const Tensor<T>& x0, int t, const Tensor<T>& eps) {
    if (x0.height != ps.base_height || x0.width != ps.base_width)
        throw std::invalid_argument("forward_marginal: x0 must be at base resolution");
    const int s = ps.factor_at(t);
    Tensor<T> x0s = downsample(x0, s);
    require_same_shape(x0s, eps, "forward_marginal: eps");
    const double ab = ns.alpha_bar_at(t);
    const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor<T> out(x0s.channels, x0s.height, x0s.width);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<T>(a * x0s.data[i] + b * eps.data[i]);
    return out;
}

template <typename T>
Tensor<T> reconstruct_x0(const NoiseSchedule& ns, const Tensor<T>& x_t,
                         const Tensor<T>& eps_pred, int t) {
    require_same_shape(x_t, eps_pred, "reconstruct_x0");
    const double ab = ns.alpha_bar_at(t);
    const double inv = 1.0 / std::sqrt(ab), b = std::sqrt(1.0 - ab);
    Tensor<T> out(x_t.channels, x_t.height, x_t.width);
    for (size_t i = 0; i < out.data.size(); ++i)
        out.data[i] = static_cast<T>((x_t.data[i] - b * eps_pred.data[i]) * inv);
    return out;
}

template <typename T>
DiffusionState<T> reverse_step(const NoiseSchedule& ns, const PyramidSchedule& ps,
                               const DiffusionState<T>& state, const Tensor<T>& y_prime,
                               const Tensor<T>& eps) {
    const int t = state.t;
    if (t < 1 || t > ns.T) throw std::invalid_argument("reverse_step: t out of range");
    const int s_t = ps.factor_at(t), s_prev = ps.factor_at(t - 1);
    if (s_t < s_prev)
        throw std::invalid_argument("reverse_step: factors must be non-decreasing in t");

    const double ab_t = ns.alpha_bar_at(t);
    const double ab_prev = ns.alpha_bar_at(t - 1);
    DiffusionState<T> next;
    next.t = t - 1;

    if (s_t > s_prev) {
        // Resolution boundary: treat the upsampled reconstruction as
        // x0 at the finer level and re-noise it at abar_{t-1}.
        Tensor<T> up = upsample(y_prime, s_t / s_prev);
        const double a = std::sqrt(ab_prev), b = std::sqrt(1.0 - ab_prev);
        require_same_shape(up, eps, "reverse_step: boundary eps");
        next.x = Tensor<T>(up.channels, up.height, up.width);
        for (size_t i = 0; i < up.data.size(); ++i)
            next.x.data[i] = static_cast<T>(a * up.data[i] + (t > 1 ? b * eps.data[i] : 0.0));
        return next;
    }

    require_same_shape(state.x, y_prime, "reverse_step: y_prime");
    const double beta_t = ns.beta_at(t);
    const double c0 = std::sqrt(ab_prev) * beta_t / (1.0 - ab_t);
    const double c1 = std::sqrt(ns.alpha_at(t)) * (1.0 - ab_prev) / (1.0 - ab_t);
    const double cn = t > 1 ? std::sqrt(ns.beta_tilde_at(t)) : 0.0;
    if (t > 1) require_same_shape(state.x, eps, "reverse_step: eps");

    next.x = Tensor<T>(state.x.channels, state.x.height, state.x.width);
    for (size_t i = 0; i < next.x.data.size(); ++i) {
        double v = c0 * y_prime.data[i] + c1 * state.x.data[i];
        if (t > 1) v += cn * eps.data[i];
        next.x.data[i] = static_cast<T>(v);
    }
    return next;
}

template <typename T>
DiffusionState<T> ddim_step(const NoiseSchedule& ns, const PyramidSchedule& ps,
                            const DiffusionState<T>& state, const Tensor<T>& y_prime,
                            const Tensor<T>& eps, int t_next, double eta) {
    const int t = state.t;
    if (t < 1 || t > ns.T) throw std::invalid_argument("ddim_step: t out of range");
    if (t_next >= t || t_next < 0) throw std::invalid_argument("ddim_step: t_next must precede t");
    if (ps.factor_at(t_next) != ps.factor_at(t))
        throw std::invalid_argument("ddim_step: subsequence crosses a resolution boundary");
    require_same_shape(state.x, y_prime, "ddim_step: y_prime");

    const double ab_t = ns.alpha_bar_at(t);
    const double ab_n = ns.alpha_bar_at(t_next);
    const double sigma = eta * std::sqrt((1.0 - ab_n) / (1.0 - ab_t)) *
                         std::sqrt(1.0 - ab_t / ab_n);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_n - sigma * sigma));
    const double a = std::sqrt(ab_n);
    const double eps_hat_num = 1.0 / std::sqrt(1.0 - ab_t);
    const double ab_t_sqrt = std::sqrt(ab_t);

    DiffusionState<T> next;
    next.t = t_next;
    next.x = Tensor<T>(state.x.channels, state.x.height, state.x.width);
    const bool noisy = sigma > 0.0 && t_next >= 1;
    if (noisy) require_same_shape(state.x, eps, "ddim_step: eps");
    for (size_t i = 0; i < next.x.data.size(); ++i) {
        double eps_hat = (state.x.data[i] - ab_t_sqrt * y_prime.data[i]) * eps_hat_num;
        double v = a * y_prime.data[i] + dir * eps_hat;
        if (noisy) v += sigma * eps.data[i];
        next.x.data[i] = static_cast<T>(v);
    }
    return next;
}

std::vector<int> ddim_step_plan(const PyramidSchedule& ps, int n_calls) {
    auto runs = ps.levels();  // ascending t
    const int L = static_cast<int>(runs.size());
    std::vector<int> len(L), minimum(L);
    int min_total = 0;
    for (int i = 0; i < L; ++i) {
        len[i] = runs[i].second - runs[i].first + 1;
        minimum[i] = std::min(2, len[i]);
        min_total += minimum[i];
    }
    if (n_calls < min_total)
        throw std::invalid_argument("ddim_step_plan: need at least " + std::to_string(min_total) +
                                    " calls for this downsampling schedule");
    if (n_calls > ps.T) throw std::invalid_argument("ddim_step_plan: more calls than steps");

    // Proportional allocation, then settle rounding onto the longest levels.
    std::vector<int> alloc(L);
    int total = 0;
    for (int i = 0; i < L; ++i) {
        alloc[i] = std::max(minimum[i],
                            static_cast<int>(std::llround(static_cast<double>(n_calls) * len[i] /
                                                          ps.T)));
        alloc[i] = std::min(alloc[i], len[i]);
        total += alloc[i];
    }
    while (total != n_calls) {
        int best = -1;
        for (int i = 0; i < L; ++i) {
            if (total > n_calls && alloc[i] > minimum[i] &&
                (best < 0 || alloc[i] > alloc[best]))
                best = i;
            if (total < n_calls && alloc[i] < len[i] && (best < 0 || alloc[i] < alloc[best]))
                best = i;
        }
        if (best < 0) throw std::logic_error("ddim_step_plan: allocation failed");
        alloc[best] += total > n_calls ? -1 : 1;
        total += total > n_calls ? -1 : 1;
    }

    // Uniform spacing within each level, endpoints included; descending overall.
    std::vector<int> plan;
    for (int i = L - 1; i >= 0; --i) {
        const int lo = runs[i].first, hi = runs[i].second, k = alloc[i];
        if (k == 1) {
            plan.push_back(hi);
            continue;
        }
        int prev = -1;
        for (int j = 0; j < k; ++j) {
            int t = static_cast<int>(std::llround(hi - static_cast<double>(hi - lo) * j / (k - 1)));
            if (t == prev) continue;
            plan.push_back(t);
            prev = t;
        }
    }
    return plan;
}

template <typename T>
Tensor<T> sample(const NoiseSchedule& ns, const PyramidSchedule& ps, const SamplerConfig& cfg,
                 Denoiser<T>& denoiser, const GlobalCorrector<T>* corrector,
                 const Condition<T>& cond, Rng& rng, SampleStats* stats,
                 const std::function<void(int, const Tensor<T>&)>& dump_state) {
    SampleStats local;
    SampleStats& st = stats ? *stats : local;

    auto predict = [&](const DiffusionState<T>& state) {
        const int s = ps.factor_at(state.t);
        DenoiserInput<T> in;
        in.x_t = &state.x;
        in.cond = &cond.at_factor(s);
        in.t = state.t;
        in.T_total = ns.T;
        in.alpha_bar_t = ns.alpha_bar_at(state.t);
        in.pyramid_factor = s;
        ++st.denoiser_calls;
        return denoiser.predict_noise(in);
    };

    auto reconstruct_corrected = [&](const DiffusionState<T>& state) {
        Tensor<T> eps_pred = predict(state);
        Tensor<T> y = reconstruct_x0(ns, state.x, eps_pred, state.t);
        if (corrector && needs_correction(cfg, ns, state.t)) {
            y = corrector->correct(y, cond.at_factor(ps.factor_at(state.t)));
            ++st.corrector_applications;
        }
        return y;
    };

    DiffusionState<T> state;
    state.t = ns.T;
    auto [h, w] = ps.resolution_at(ns.T);
    state.x = gaussian_tensor<T>(3, h, w, rng);  // x_T ~ N(0, I) at the coarsest level

    if (!cfg.ddim_steps.has_value()) {
        for (int t = ns.T; t >= 1; --t) {
            state.t = t;
            Tensor<T> y = reconstruct_corrected(state);
            const int s_t = ps.factor_at(t), s_prev = ps.factor_at(t - 1);
            Tensor<T> eps;
            if (t > 1) {
                auto [eh, ew] = ps.resolution_at(t - 1);
                eps = gaussian_tensor<T>(3, eh, ew, rng);
            } else {
                eps = Tensor<T>(3, ps.base_height, ps.base_width);
            }
            if (s_t > s_prev) ++st.resolution_changes;
            state = reverse_step(ns, ps, state, y, eps);
            if (dump_state) dump_state(state.t, state.x);
        }
    } else {
        std::vector<int> plan = ddim_step_plan(ps, *cfg.ddim_steps);
        for (size_t k = 0; k < plan.size(); ++k) {
            state.t = plan[k];
            Tensor<T> y = reconstruct_corrected(state);
            const int t_next = k + 1 < plan.size() ? plan[k + 1] : 0;
            if (t_next == state.t - 1 && ps.factor_at(t_next) != ps.factor_at(state.t)) {
                auto [eh, ew] = ps.resolution_at(t_next);
                Tensor<T> eps = gaussian_tensor<T>(3, eh, ew, rng);
                ++st.resolution_changes;
                state = reverse_step(ns, ps, state, y, eps);
            } else {
                Tensor<T> eps;
                if (cfg.ddim_eta > 0.0 && t_next >= 1) {
                    auto [eh, ew] = ps.resolution_at(t_next);
                    eps = gaussian_tensor<T>(3, eh, ew, rng);
                }
                state = ddim_step(ns, ps, state, y, eps, t_next, cfg.ddim_eta);
            }
            if (dump_state) dump_state(state.t, state.x);
        }
    }
    return clamp<T>(state.x, T(-1), T(1));
}

template Tensor<float> forward_marginal(const NoiseSchedule&, const PyramidSchedule&,
                                        const Tensor<float>&, int, const Tensor<float>&);
template Tensor<double> forward_marginal(const NoiseSchedule&, const PyramidSchedule&,
                                         const Tensor<double>&, int, const Tensor<double>&);
template Tensor<float> reconstruct_x0(const NoiseSchedule&, const Tensor<float>&,
                                      const Tensor<float>&, int);
template Tensor<double> reconstruct_x0(const NoiseSchedule&, const Tensor<double>&,
                                       const Tensor<double>&, int);
template DiffusionState<float> reverse_step(const NoiseSchedule&, const PyramidSchedule&,
                                            const DiffusionState<float>&, const Tensor<float>&,
                                            const Tensor<float>&);
template DiffusionState<double> reverse_step(const NoiseSchedule&, const PyramidSchedule&,
                                             const DiffusionState<double>&, const Tensor<double>&,
                                             const Tensor<double>&);
template DiffusionState<float> ddim_step(const NoiseSchedule&, const PyramidSchedule&,
                                         const DiffusionState<float>&, const Tensor<float>&,
                                         const Tensor<float>&, int, double);
template DiffusionState<double> ddim_step(const NoiseSchedule&, const PyramidSchedule&,
                                          const DiffusionState<double>&, const Tensor<double>&,
                                          const Tensor<double>&, int, double);
template Tensor<float> sample(const NoiseSchedule&, const PyramidSchedule&, const SamplerConfig&,
                              Denoiser<float>&, const GlobalCorrector<float>*,
                              const Condition<float>&, Rng&, SampleStats*,
                              const std::function<void(int, const Tensor<float>&)>&);
template Tensor<double> sample(const NoiseSchedule&, const PyramidSchedule&, const SamplerConfig&,
                               Denoiser<double>&, const GlobalCorrector<double>*,
                               const Condition<double>&, Rng&, SampleStats*,
                               const std::function<void(int, const Tensor<double>&)>&);

}  // namespace pyrdiff
