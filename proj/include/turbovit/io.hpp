#pragma once

// Raw tensor file: a one-line text header "shape: d0 d1 ..." followed by the
// flat little-endian fp32 buffer in row-major order.

#include <string>

#include "turbovit/tensor.hpp"

namespace turbovit {

TensorF read_raw_tensor(const std::string& path);
void write_raw_tensor(const TensorF& tensor, const std::string& path);

void write_text_file(const std::string& path, const std::string& content);
std::string read_text_file(const std::string& path);

}  // namespace turbovit
