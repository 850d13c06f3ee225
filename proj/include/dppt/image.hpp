#pragma once

#include <filesystem>

#include "dppt/tensor.hpp"

namespace dppt {

// Images are Tensors shaped [channels, height, width] with intensities in [0, 1].
// 8-bit levels map to byte / 256, so every stored intensity is exactly representable.
constexpr double kIntensityScale = 256.0;

inline double level(int byte) { return static_cast<double>(byte) / kIntensityScale; }

void write_png(const std::filesystem::path& path, const Tensor& image);
Tensor read_png(const std::filesystem::path& path);

// Luma of an RGB image, [3,h,w] -> [1,h,w].
Tensor to_grayscale(const Tensor& rgb);
// Box-filter downsampling by an integer factor.
Tensor downsample(const Tensor& image, std::size_t factor);
// Rounds every intensity to the nearest 8-bit level.
Tensor quantize_levels(Tensor image);

}  // namespace dppt
