#pragma once

#include <string>
#include <vector>

#include "ldp/tensor.hpp"

namespace ldp {

// Decodes a PNG or JPEG file to an H x W x 3 tensor with values in [0,1].
ImageTensor decode_image_file(const std::string& path);

// Writes an [0,1] image as 8-bit RGB PNG. Values are clamped then rounded.
void save_png(const std::string& path, const ImageTensor& image);

// Center-aligned bilinear resize: source coordinate of output pixel i is
// (i + 0.5) * in/out - 0.5, edges clamped. Downscaling by exactly 2 equals a
// 2x2 box average.
ImageTensor resize_bilinear(const ImageTensor& image, int out_h, int out_w);

// Loads every decodable PNG/JPEG in a directory, resized to
// target_size x target_size, in lexicographic filename order. Undecodable
// files are skipped with a warning; throws if the directory yields nothing.
std::vector<ImageTensor> load_image_dir(const std::string& dir, int target_size);

}  // namespace ldp
