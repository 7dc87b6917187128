#pragma once

#include <string>

#include "cliffm/tensor.hpp"

namespace cliffm {

// 8-bit RGB PNG I/O. Tensors are channel-planar u8, shape 3 x H x W.
// The reader accepts non-interlaced 8-bit gray/RGB/RGBA images and returns
// RGB (gray replicated, alpha dropped).
void png_write(const std::string& path, const TensorU8& rgb);
TensorU8 png_read(const std::string& path);

}  // namespace cliffm
