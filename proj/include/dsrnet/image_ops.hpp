#pragma once

#include <string>

#include "dsrnet/tensor.hpp"

namespace dsrnet {

// Images are (3,H,W) tensors with values in [0,1], mapped from 8-bit files
// by /255. Loading converts to RGB regardless of the on-disk channel order.
Tensor load_image(const std::string& path);            // ResourceError on failure
void save_image_png(const std::string& path, const Tensor& img); // rounds to 8-bit

Tensor clamp01(const Tensor& t);

// symmetric (edge-inclusive) reflection padding
Tensor pad_reflect(const Tensor& t, int64_t top, int64_t bottom, int64_t left, int64_t right);
// pads H and W up to the next multiple; out_pad_* report how much was added
Tensor pad_reflect_to_multiple(const Tensor& t, int64_t multiple, int64_t& out_pad_h,
                               int64_t& out_pad_w);
Tensor crop(const Tensor& t, int64_t top, int64_t left, int64_t h, int64_t w);
Tensor center_crop_max(const Tensor& t, int64_t max_h, int64_t max_w);
Tensor hflip(const Tensor& t);

// separable Gaussian with reflect borders
Tensor gaussian_blur(const Tensor& t, double sigma);

// area-style resampling (used only when synthesis sources are too small)
Tensor resize(const Tensor& t, int64_t h, int64_t w);

} // namespace dsrnet
