#pragma once

#include "btk/synth.hpp"

namespace btk {

// In-memory synthetic dataset; sample i is generated from seed mix(seed, i)
// so generation is order-independent.
std::vector<PoseSample> synth_dataset(int64_t n, uint64_t seed, int64_t img_h = 256,
                                      int64_t img_w = 192);

// Directory layout: annotations.json plus one img_<id>.ppm per sample.
void write_dataset(const std::vector<PoseSample>& samples, const std::string& dir);
std::vector<PoseSample> load_dataset(const std::string& dir);

}  // namespace btk
