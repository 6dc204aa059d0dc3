#pragma once

#include <map>
#include <string>

#include "rdm/matrix.hpp"

namespace rdm::numerics {

// Named tensor container backing the weight checkpoint file. The file layout
// is: magic "RDMW", u32 version, then per-tensor records until end of file.
// Each record: u32 name length, UTF-8 name bytes, u32 rank, u64 dims, then
// little-endian IEEE-754 64-bit values in row-major order. Round trips are
// bit-exact.
struct ParamSet {
  std::map<std::string, Matrix> tensors;

  bool has(const std::string& name) const { return tensors.count(name) > 0; }
  Matrix& at(const std::string& name);
  const Matrix& at(const std::string& name) const;

  void save(const std::string& path) const;
  static ParamSet load(const std::string& path);
};

}  // namespace rdm::numerics
