#pragma once

#include <cstdint>
#include <vector>

#include "ocgvf/env/env.hpp"

namespace ocgvf::env {

// Nearest-neighbor resize; returns the input unchanged when sizes match.
Image resize_nearest(const Image& in, int h, int w);

// Quantizes a channels-last float image with values in [0,1] to uint8.
Image from_floats(int h, int w, const std::vector<float>& hwc);

// Full observation conditioning for external frames: accepts uint8 RGB at any
// source size and emits the target resolution. Applying it to an
// already-conformant image is the identity.
Image preprocess(const Image& raw, int target_h, int target_w);

}  // namespace ocgvf::env
