#pragma once

#include <filesystem>

#include "mvw/tensor.hpp"

namespace mvw {

// MVT1 tensor file layout:
//   bytes 0-3   magic "MVT1"
//   byte  4     rank r (u8, <= 5)
//   next 4*r    dims, little-endian u32
//   payload     row-major float32, little-endian
void writeTensor(const std::filesystem::path& path, const TensorData& tensor);
TensorData readTensor(const std::filesystem::path& path);

}  // namespace mvw
