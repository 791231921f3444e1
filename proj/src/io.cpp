#include "turbovit/io.hpp"

#include <fstream>
#include <sstream>

namespace turbovit {

TensorF read_raw_tensor(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open tensor file: " + path);
  std::string header;
  if (!std::getline(in, header) || header.rfind("shape:", 0) != 0)
    throw ConfigError("tensor file " + path + ": missing \"shape: ...\" header line");
  Shape shape;
  std::istringstream hs(header.substr(6));
  int d;
  while (hs >> d) shape.push_back(d);
  if (shape.empty()) throw ConfigError("tensor file " + path + ": empty shape header");
  for (int v : shape)
    if (v <= 0) throw ConfigError("tensor file " + path + ": non-positive dimension in header");
  TensorF t(shape);
  in.read(reinterpret_cast<char*>(t.ptr()), static_cast<std::streamsize>(t.numel() * sizeof(float)));
  if (in.gcount() != static_cast<std::streamsize>(t.numel() * sizeof(float)))
    throw ConfigError("tensor file " + path + ": expected " + std::to_string(t.numel()) +
                      " fp32 values for shape " + shape_str(shape));
  return t;
}

void write_raw_tensor(const TensorF& tensor, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write tensor file: " + path);
  out << "shape:";
  for (int d : tensor.shape) out << " " << d;
  out << "\n";
  out.write(reinterpret_cast<const char*>(tensor.ptr()),
            static_cast<std::streamsize>(tensor.numel() * sizeof(float)));
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write file: " + path);
  out << content;
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open file: " + path);
  std::stringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

}  // namespace turbovit
