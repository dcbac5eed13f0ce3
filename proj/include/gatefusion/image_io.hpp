#pragma once

#include <string>

#include "gatefusion/tensor.hpp"

namespace gatefusion {

struct IoError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

// 8-bit RGB PNG <-> CHW float tensor in [0,1]. Values are quantized to
// 1/255 steps on write; generation quantizes the same way so a save/load
// round trip is bit-exact.
void write_png_rgb(const std::string& path, const Tensor& chw_image);
Tensor read_png_rgb(const std::string& path);

}  // namespace gatefusion
