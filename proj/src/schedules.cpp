#include "pyrdiff/schedules.hpp"

#include <cmath>
#include <sstream>
#include <stdexcept>

namespace pyrdiff {

namespace {

void check_step(int t, int T, int lo) {
    if (t < lo || t > T)
        throw std::invalid_argument("step t=" + std::to_string(t) + " out of range [" +
                                    std::to_string(lo) + "," + std::to_string(T) + "]");
}

bool is_power_of_two(int v) { return v > 0 && (v & (v - 1)) == 0; }

}  // namespace

double NoiseSchedule::alpha_at(int t) const {
    check_step(t, T, 1);
    return alpha[t - 1];
}

double NoiseSchedule::alpha_bar_at(int t) const {
    check_step(t, T, 0);
    return t == 0 ? 1.0 : alpha_bar[t - 1];
}

double NoiseSchedule::beta_at(int t) const {
    check_step(t, T, 1);
    return beta[t - 1];
}

double NoiseSchedule::beta_tilde_at(int t) const {
    check_step(t, T, 1);
    return beta_tilde[t - 1];
}

NoiseSchedule noise_schedule_from_alphas(std::vector<double> alphas) {
    const int T = static_cast<int>(alphas.size());
    if (T < 1) throw std::invalid_argument("noise schedule needs T >= 1");
    for (int i = 0; i < T; ++i) {
        if (!(alphas[i] > 0.0 && alphas[i] < 1.0))
            throw std::invalid_argument("alpha_t must lie in (0,1)");
        if (i > 0 && alphas[i] > alphas[i - 1])
            throw std::invalid_argument("alpha_t must be non-increasing");
    }
    NoiseSchedule ns;
    ns.T = T;
    ns.alpha = std::move(alphas);
    ns.alpha_bar.resize(T);
    ns.beta.resize(T);
    ns.beta_tilde.resize(T);
    double prod = 1.0;
    for (int i = 0; i < T; ++i) {
        prod *= ns.alpha[i];
        ns.alpha_bar[i] = prod;
        ns.beta[i] = 1.0 - ns.alpha[i];
        double abar_prev = i == 0 ? 1.0 : ns.alpha_bar[i - 1];
        ns.beta_tilde[i] = (1.0 - abar_prev) / (1.0 - ns.alpha_bar[i]) * ns.beta[i];
    }
    return ns;
}

NoiseSchedule build_linear_noise_schedule(int T, double alpha_start, double alpha_end) {
    if (T < 1) throw std::invalid_argument("build_linear_noise_schedule: T must be >= 1");
    if (!(alpha_start > 0.0 && alpha_start < 1.0) || !(alpha_end > 0.0 && alpha_end < 1.0))
        throw std::invalid_argument("alpha endpoints must lie in (0,1)");
    if (alpha_end > alpha_start)
        throw std::invalid_argument("alpha_end must not exceed alpha_start");
    std::vector<double> a(T);
    if (T == 1) {
        a[0] = alpha_start;
    } else {
        for (int i = 0; i < T; ++i)
            a[i] = alpha_start + (alpha_end - alpha_start) * (static_cast<double>(i) / (T - 1));
    }
    return noise_schedule_from_alphas(std::move(a));
}

int PyramidSchedule::factor_at(int t) const {
    check_step(t, T, 0);
    return t == 0 ? s[0] : s[t - 1];
}

int PyramidSchedule::max_factor() const { return s.empty() ? 1 : s.back(); }

std::pair<int, int> PyramidSchedule::resolution_at(int t) const {
    int f = factor_at(t);
    return {base_height / f, base_width / f};
}

std::vector<std::pair<int, int>> PyramidSchedule::levels() const {
    std::vector<std::pair<int, int>> runs;
    int lo = 1;
    for (int t = 2; t <= T; ++t) {
        if (s[t - 1] != s[lo - 1]) {
            runs.emplace_back(lo, t - 1);
            lo = t;
        }
    }
    runs.emplace_back(lo, T);
    return runs;
}

std::vector<int> PyramidSchedule::factors() const {
    std::vector<int> out;
    for (int v : s)
        if (out.empty() || out.back() != v) out.push_back(v);
    return out;
}

PyramidSchedule build_pyramid_schedule(int T,
                                       const std::vector<std::pair<double, int>>& boundaries,
                                       int base_height, int base_width) {
    if (T < 1) throw std::invalid_argument("build_pyramid_schedule: T must be >= 1");
    if (boundaries.empty()) throw std::invalid_argument("downsampling schedule needs boundaries");
    if (base_height < 1 || base_width < 1)
        throw std::invalid_argument("base resolution must be positive");

    PyramidSchedule ps;
    ps.T = T;
    ps.base_height = base_height;
    ps.base_width = base_width;
    ps.s.assign(T, 0);

    int prev_cut = 0, prev_factor = 0;
    for (size_t i = 0; i < boundaries.size(); ++i) {
        auto [frac, factor] = boundaries[i];
        if (!(frac > 0.0 && frac <= 1.0))
            throw std::invalid_argument("boundary fractions must lie in (0,1]");
        if (!is_power_of_two(factor))
            throw std::invalid_argument("downsampling factors must be powers of two");
        if (factor < prev_factor)
            throw std::invalid_argument("downsampling factors must be non-decreasing");
        int cut = static_cast<int>(std::llround(frac * T));
        if (i + 1 == boundaries.size() && cut != T)
            throw std::invalid_argument("boundary fractions must end at 1.0");
        if (cut <= prev_cut)
            throw std::invalid_argument("boundary fractions must be strictly increasing");
        for (int t = prev_cut + 1; t <= cut; ++t) ps.s[t - 1] = factor;
        prev_cut = cut;
        prev_factor = factor;
    }
    if (ps.s[0] != 1)
        throw std::invalid_argument("s_1 must be 1 (output at base resolution)");
    int smax = ps.max_factor();
    if (base_height % smax != 0 || base_width % smax != 0)
        throw std::invalid_argument("base resolution must be divisible by the largest factor");
    return ps;
}

PyramidSchedule build_pyramid_schedule_brackets(int T, const std::vector<int>& factors,
                                                int base_height, int base_width) {
    if (factors.empty()) throw std::invalid_argument("bracket schedule needs factors");
    std::vector<std::pair<double, int>> bounds;
    const int n = static_cast<int>(factors.size());
    for (int i = 0; i < n; ++i)
        bounds.emplace_back(static_cast<double>(i + 1) / n, factors[i]);
    // Merge equal neighbours so validation sees strictly increasing cuts.
    std::vector<std::pair<double, int>> merged;
    for (auto& b : bounds) {
        if (!merged.empty() && merged.back().second == b.second)
            merged.back().first = b.first;
        else
            merged.push_back(b);
    }
    return build_pyramid_schedule(T, merged, base_height, base_width);
}

std::vector<int> parse_bracket_schedule(const std::string& text) {
    std::string body = text;
    auto strip = [](std::string& s) {
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.front()))) s.erase(s.begin());
        while (!s.empty() && std::isspace(static_cast<unsigned char>(s.back()))) s.pop_back();
    };
    strip(body);
    if (body.size() < 2 || body.front() != '[' || body.back() != ']')
        throw std::invalid_argument("bracket schedule must look like [1,1,2,2]: " + text);
    body = body.substr(1, body.size() - 2);
    std::vector<int> out;
    std::stringstream ss(body);
    std::string item;
    while (std::getline(ss, item, ',')) {
        strip(item);
        if (item.empty()) throw std::invalid_argument("empty entry in bracket schedule: " + text);
        size_t used = 0;
        int v = std::stoi(item, &used);
        if (used != item.size()) throw std::invalid_argument("bad entry in bracket schedule: " + item);
        out.push_back(v);
    }
    if (out.empty()) throw std::invalid_argument("empty bracket schedule: " + text);
    return out;
}

std::string format_bracket_schedule(const std::vector<int>& factors) {
    std::string out = "[";
    for (size_t i = 0; i < factors.size(); ++i) {
        if (i) out += ",";
        out += std::to_string(factors[i]);
    }
    return out + "]";
}

double amplification_factor(const NoiseSchedule& ns, int t) {
    double ab = ns.alpha_bar_at(t);
    if (t < 1) throw std::invalid_argument("amplification_factor: t must be >= 1");
    return std::sqrt(1.0 - ab) / std::sqrt(ab);
}

bool needs_correction(const SamplerConfig& cfg, const NoiseSchedule& ns, int t) {
    return amplification_factor(ns, t) > cfg.gamma;
}

int correction_start_step(const SamplerConfig& cfg, const NoiseSchedule& ns) {
    // amplification_factor is non-decreasing in t, so binary search works;
    // a linear scan is fine at these sizes and easier to audit.
    for (int t = 1; t <= ns.T; ++t)
        if (needs_correction(cfg, ns, t)) return t;
    return ns.T + 1;
}

}  // namespace pyrdiff
