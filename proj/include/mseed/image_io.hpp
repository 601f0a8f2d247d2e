#pragma once

#include <filesystem>

#include "mseed/label_map.hpp"
#include "mseed/tensor.hpp"

// On-disk formats:
//   MST1  "MST1" | u32 rank | rank x u32 dims | float64 data, all little-endian
//   PGM   binary P5, maxval 255
//   PPM   binary P6, maxval 255
namespace mseed::io {

void write_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor read_tensor(const std::filesystem::path& path);

/// Label ids written verbatim as 8-bit gray values.
void write_label_pgm(const std::filesystem::path& path, const LabelMap& labels);
/// num_classes = 0 infers max id + 1.
LabelMap read_label_pgm(const std::filesystem::path& path, std::size_t num_classes = 0);

/// H x W mask in [0,1] as 0/255 after thresholding at 0.5.
void write_mask_pgm(const std::filesystem::path& path, const Tensor& mask);

/// 3 x H x W image in [0,1].
void write_ppm(const std::filesystem::path& path, const Tensor& image);
Tensor read_ppm(const std::filesystem::path& path);

} // namespace mseed::io
