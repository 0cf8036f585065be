#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace pyrdiff {

/// Per-step noise retention factors and the sequences derived from them.
/// Index convention: vectors are 0-based with element i holding the value at
/// step t = i + 1; the t = 0 boundary uses the alpha_bar_0 = 1 convention,
/// which makes beta_tilde_1 = 0 and the final reverse step deterministic.
/// Immutable after construction; safe to read from concurrent workers.
struct NoiseSchedule {
    int T = 0;
    std::vector<double> alpha;       // alpha_t in (0,1), non-increasing
    std::vector<double> alpha_bar;   // running product, strictly decreasing
    std::vector<double> beta;        // 1 - alpha_t
    std::vector<double> beta_tilde;  // posterior variance coefficient

    double alpha_at(int t) const;      // t in [1, T]
    double alpha_bar_at(int t) const;  // t in [0, T]; alpha_bar_at(0) == 1
    double beta_at(int t) const;       // t in [1, T]
    double beta_tilde_at(int t) const; // t in [1, T]
};

/// Per-step downsampling factors. Factors are powers of two, non-decreasing
/// toward noisier steps, with s_1 = 1 so the output lands at base resolution.
struct PyramidSchedule {
    int T = 0;
    int base_height = 0;
    int base_width = 0;
    std::vector<int> s;  // element i holds s_{i+1}

    /// t in [0, T]; factor_at(0) == factor_at(1) == 1.
    int factor_at(int t) const;
    int max_factor() const;
    /// Height/width at step t's resolution.
    std::pair<int, int> resolution_at(int t) const;
    /// Maximal runs of constant factor as (t_lo, t_hi) pairs, ascending in t.
    std::vector<std::pair<int, int>> levels() const;
    /// Distinct factors in ascending order.
    std::vector<int> factors() const;
};

struct SamplerConfig {
    double gamma = 1.0;              // correction threshold
    std::optional<int> ddim_steps;   // denoiser-call budget; empty = full DDPM
    double ddim_eta = 0.0;           // 0 = deterministic
    uint64_t seed = 0;
};

/// Alpha decreases linearly from alpha_start at t=1 to alpha_end at t=T.
NoiseSchedule build_linear_noise_schedule(int T, double alpha_start, double alpha_end);

/// Build from an explicit alpha sequence (validated, derived sequences filled).
NoiseSchedule noise_schedule_from_alphas(std::vector<double> alphas);

/// Piecewise-constant factors: boundaries are (step-fraction, factor) pairs
/// whose fractions partition (0, 1]; step t gets the factor of the first
/// boundary with t <= round(fraction * T).
PyramidSchedule build_pyramid_schedule(int T,
                                       const std::vector<std::pair<double, int>>& boundaries,
                                       int base_height, int base_width);

/// Bracket notation from ablation tables: "[1,1,2,2]" splits the T steps into
/// equal chunks, one factor each ([1,1,2,2] => factor 2 for the noisier half).
PyramidSchedule build_pyramid_schedule_brackets(int T, const std::vector<int>& factors,
                                                int base_height, int base_width);

std::vector<int> parse_bracket_schedule(const std::string& text);
std::string format_bracket_schedule(const std::vector<int>& factors);

/// sqrt(1 - alpha_bar_t) / sqrt(alpha_bar_t): the coefficient that magnifies
/// noise-prediction error into reconstruction error. Non-decreasing in t.
double amplification_factor(const NoiseSchedule& ns, int t);

/// True iff the global corrector applies at step t (factor strictly above gamma).
bool needs_correction(const SamplerConfig& cfg, const NoiseSchedule& ns, int t);

/// Smallest t with amplification_factor > gamma, or T + 1 when none qualifies.
/// The gated set {t : needs_correction} is exactly {t0, ..., T}.
int correction_start_step(const SamplerConfig& cfg, const NoiseSchedule& ns);

}  // namespace pyrdiff
