#pragma once

#include <vector>

#include "pyrdiff/imageops.hpp"
#include "pyrdiff/schedules.hpp"
#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

/// Conditioning planes for one pyramid level: the low-light input, its
/// histogram-equalized version, and the position encoding, all at the level's
/// resolution (10 channels total).
template <typename T>
struct ConditionLevel {
    int factor = 1;
    Tensor<T> x_low;
    Tensor<T> hiseq;
    Tensor<T> pos;
};

/// Per-level conditioning, materialized once per enhancement. Histogram
/// equalization runs once at base resolution and is downsampled alongside the
/// input; position encodings are sampled per level from the base-frame field.
template <typename T>
struct Condition {
    std::vector<ConditionLevel<T>> levels;  // ascending factor

    const ConditionLevel<T>& at_factor(int f) const {
        for (const auto& l : levels)
            if (l.factor == f) return l;
        throw std::invalid_argument("Condition: no level with factor " + std::to_string(f));
    }

    static Condition build(const Tensor<T>& x_low_base, const PyramidSchedule& ps) {
        Condition c;
        Tensor<T> he = histogram_equalize(x_low_base);
        for (int f : ps.factors()) {
            ConditionLevel<T> lvl;
            lvl.factor = f;
            lvl.x_low = downsample(x_low_base, f);
            lvl.hiseq = downsample(he, f);
            lvl.pos = position_encoding<T>(ps.base_height, ps.base_width, f);
            c.levels.push_back(std::move(lvl));
        }
        return c;
    }
};

}  // namespace pyrdiff
