#include "rdm/checkpoint.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <vector>

#include "rdm/errors.hpp"

namespace rdm::numerics {

namespace {

constexpr char kMagic[4] = {'R', 'D', 'M', 'W'};
constexpr uint32_t kVersion = 1;

void put_u32(std::ostream& os, uint32_t v) {
  unsigned char b[4];
  for (int i = 0; i < 4; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 4);
}

void put_u64(std::ostream& os, uint64_t v) {
  unsigned char b[8];
  for (int i = 0; i < 8; ++i) b[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xFF);
  os.write(reinterpret_cast<const char*>(b), 8);
}

void put_f64(std::ostream& os, double v) {
  uint64_t bits;
  std::memcpy(&bits, &v, sizeof(bits));
  put_u64(os, bits);
}

bool get_u32(std::istream& is, uint32_t& v) {
  unsigned char b[4];
  if (!is.read(reinterpret_cast<char*>(b), 4)) return false;
  v = 0;
  for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(b[i]) << (8 * i);
  return true;
}

bool get_u64(std::istream& is, uint64_t& v) {
  unsigned char b[8];
  if (!is.read(reinterpret_cast<char*>(b), 8)) return false;
  v = 0;
  for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(b[i]) << (8 * i);
  return true;
}

}  // namespace

Matrix& ParamSet::at(const std::string& name) {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("missing tensor: " + name);
  return it->second;
}

const Matrix& ParamSet::at(const std::string& name) const {
  auto it = tensors.find(name);
  if (it == tensors.end()) throw std::invalid_argument("missing tensor: " + name);
  return it->second;
}

void ParamSet::save(const std::string& path) const {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open checkpoint for writing: " + path);
  os.write(kMagic, 4);
  put_u32(os, kVersion);
  for (const auto& [name, m] : tensors) {
    put_u32(os, static_cast<uint32_t>(name.size()));
    os.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(os, 2);
    put_u64(os, static_cast<uint64_t>(m.rows()));
    put_u64(os, static_cast<uint64_t>(m.cols()));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) put_f64(os, m(r, c));
    }
  }
  if (!os) throw IoError("write failure: " + path);
}

ParamSet ParamSet::load(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open checkpoint: " + path);
  char magic[4];
  if (!is.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) {
    throw ParseError("bad checkpoint magic: " + path);
  }
  uint32_t version = 0;
  if (!get_u32(is, version) || version != kVersion) {
    throw ParseError("unsupported checkpoint version in " + path);
  }
  ParamSet out;
  for (;;) {
    uint32_t name_len = 0;
    if (!get_u32(is, name_len)) break;  // clean end of file
    std::string name(name_len, '\0');
    if (!is.read(name.data(), name_len)) throw ParseError("truncated tensor name in " + path);
    uint32_t rank = 0;
    if (!get_u32(is, rank) || rank != 2) throw ParseError("unsupported tensor rank in " + path);
    uint64_t rows = 0, cols = 0;
    if (!get_u64(is, rows) || !get_u64(is, cols)) throw ParseError("truncated dims in " + path);
    Matrix m(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
      for (Eigen::Index c = 0; c < m.cols(); ++c) {
        uint64_t bits = 0;
        if (!get_u64(is, bits)) throw ParseError("truncated values in " + path);
        double v;
        std::memcpy(&v, &bits, sizeof(v));
        m(r, c) = v;
      }
    }
    out.tensors.emplace(std::move(name), std::move(m));
  }
  return out;
}

}  // namespace rdm::numerics
