#pragma once

#include <functional>
#include <string>
#include <vector>

#include "pyrdiff/corrector.hpp"
#include "pyrdiff/denoiser.hpp"
#include "pyrdiff/diffusion.hpp"
#include "pyrdiff/schedules.hpp"
#include "pyrdiff/tensor.hpp"

namespace pyrdiff {

struct EnhanceResult {
    ImageTensor image;
    SampleStats stats;
    bool padded = false;
    int pad_bottom = 0;
    int pad_right = 0;
};

/// Reflect-pad bottom/right so both dimensions divide `multiple`.
ImageTensor pad_reflect_to_multiple(const ImageTensor& img, int multiple, int* pad_bottom,
                                    int* pad_right);

/// Full enhancement pipeline: pad to divisibility when needed (reported in the
/// result), build per-level conditions (histogram equalization at base
/// resolution, position encodings per level), run the reverse pass, crop back.
EnhanceResult enhance(const NoiseSchedule& ns, const std::vector<int>& pyramid_brackets,
                      const SamplerConfig& cfg, Denoiser<float>& denoiser,
                      const GlobalCorrector<float>* corrector, const ImageTensor& x_low,
                      const std::function<void(int, const ImageTensor&)>& dump_state = nullptr);

}  // namespace pyrdiff
