#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "dsr/tensor.h"

namespace dsr::img {

// Separable bicubic convolution, Keys kernel a = -0.5, edge-clamped taps,
// pixel-center aligned grids. Exact identity at scale 1.
Tensor bicubic_resize(const Tensor& x, int oh, int ow, bool clamp01);
Tensor bicubic_resize_adjoint(const Tensor& gout, int ih, int iw);

Tensor bilinear_resize(const Tensor& x, int oh, int ow);
Tensor bilinear_resize_adjoint(const Tensor& gout, int ih, int iw);

// Rational-scale front end; rejects non-integral output dims.
Tensor bicubic_resample(const Tensor& img, double scale, bool clamp01 = true);

// [3,H,W] -> [1,H,W], ITU-R 601 weights.
Tensor luminance(const Tensor& rgb);

// Snaps values to the 8-bit grid k/255 so PNG round trips are exact.
Tensor quantize_u8_grid(const Tensor& img);

// 8-bit RGB PNG (non-interlaced, written with filter 0, zlib level 6).
void write_png_rgb8(const std::string& path, const Tensor& img);  // [3,H,W] in [0,1]
Tensor read_png_rgb8(const std::string& path);

// Raw row-major little-endian float32 blobs ([1,H,W] maps).
void write_f32(const std::string& path, const Tensor& t);
Tensor read_f32(const std::string& path, const std::vector<int>& shape);

uint32_t file_crc32(const std::string& path);

}  // namespace dsr::img
