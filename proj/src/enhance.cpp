#include "pyrdiff/enhance.hpp"

#include <algorithm>
#include <stdexcept>

namespace pyrdiff {

ImageTensor pad_reflect_to_multiple(const ImageTensor& img, int multiple, int* pad_bottom,
                                    int* pad_right) {
    int nh = ((img.height + multiple - 1) / multiple) * multiple;
    int nw = ((img.width + multiple - 1) / multiple) * multiple;
    *pad_bottom = nh - img.height;
    *pad_right = nw - img.width;
    if (nh == img.height && nw == img.width) return img;
    if (*pad_bottom >= img.height || *pad_right >= img.width)
        throw std::invalid_argument("image too small to pad to a multiple of " +
                                    std::to_string(multiple));
    ImageTensor out(img.channels, nh, nw);
    for (int c = 0; c < img.channels; ++c)
        for (int y = 0; y < nh; ++y) {
            int sy = y < img.height ? y : 2 * img.height - 2 - y;
            for (int x = 0; x < nw; ++x) {
                int sx = x < img.width ? x : 2 * img.width - 2 - x;
                out.at(c, y, x) = img.at(c, sy, sx);
            }
        }
    return out;
}

EnhanceResult enhance(const NoiseSchedule& ns, const std::vector<int>& pyramid_brackets,
                      const SamplerConfig& cfg, Denoiser<float>& denoiser,
                      const GlobalCorrector<float>* corrector, const ImageTensor& x_low,
                      const std::function<void(int, const ImageTensor&)>& dump_state) {
    const int max_s = *std::max_element(pyramid_brackets.begin(), pyramid_brackets.end());
    const int multiple = max_s * 4;  // coarsest level must stay divisible by 4

    EnhanceResult res;
    ImageTensor work = pad_reflect_to_multiple(x_low, multiple, &res.pad_bottom, &res.pad_right);
    res.padded = res.pad_bottom > 0 || res.pad_right > 0;

    PyramidSchedule ps =
        build_pyramid_schedule_brackets(ns.T, pyramid_brackets, work.height, work.width);
    Condition<float> cond = Condition<float>::build(work, ps);
    Rng rng(cfg.seed);
    ImageTensor out = sample<float>(ns, ps, cfg, denoiser, corrector, cond, rng, &res.stats,
                                    dump_state);

    if (res.padded) {
        ImageTensor crop(out.channels, x_low.height, x_low.width);
        for (int c = 0; c < out.channels; ++c)
            for (int y = 0; y < x_low.height; ++y)
                for (int x = 0; x < x_low.width; ++x) crop.at(c, y, x) = out.at(c, y, x);
        res.image = std::move(crop);
    } else {
        res.image = std::move(out);
    }
    return res;
}

}  // namespace pyrdiff
