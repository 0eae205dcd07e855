#pragma once

#include <array>
#include <vector>

#include "ldp/random.hpp"
#include "ldp/tensor.hpp"

namespace ldp {

// Procedural "natural-like" training images: smooth low-frequency fields
// mapped through a coherent three-color palette, light noise on top.
// Deterministic for a given seed.
std::vector<ImageTensor> generate_toy_corpus(int count, int image_size, RandomSource& rng);

std::array<double, 3> hsv_to_rgb(double h, double s, double v);

}  // namespace ldp
