#pragma once

#include "btk/tensor.hpp"

namespace btk {

// Binary PPM (P6, maxval 255). Float channels in [0,1] map to bytes by
// round(v * 255) with clamping.
void write_ppm(const Tensor<float>& image, const std::string& path);
Tensor<float> read_ppm(const std::string& path);

}  // namespace btk
