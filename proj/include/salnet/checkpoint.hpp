#pragma once

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "salnet/autodiff.hpp"
#include "salnet/core.hpp"

namespace salnet {

// Checkpoint layout: magic "SALNET01", little-endian u32 parameter count,
// then per parameter (lexicographic by name): u16 name length, UTF-8 name,
// u8 rank, u32 dims, raw little-endian float32 row-major data.
inline constexpr char kCheckpointMagic[8] = {'S', 'A', 'L', 'N', 'E', 'T', '0', '1'};

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}
inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}
inline void put_f32(std::string& out, float v) {
  uint32_t bits;
  std::memcpy(&bits, &v, 4);
  put_u32(out, bits);
}

class ByteReader {
 public:
  ByteReader(const std::string& bytes, const std::string& path) : bytes_(bytes), path_(path) {}
  uint8_t u8() { return static_cast<uint8_t>(take(1)[0]); }
  uint16_t u16() {
    const char* p = take(2);
    return static_cast<uint16_t>(static_cast<uint8_t>(p[0]) |
                                 (static_cast<uint8_t>(p[1]) << 8));
  }
  uint32_t u32() {
    const char* p = take(4);
    uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(p[i])) << (8 * i);
    return v;
  }
  float f32() {
    uint32_t bits = u32();
    float v;
    std::memcpy(&v, &bits, 4);
    return v;
  }
  std::string str(std::size_t n) {
    const char* p = take(n);
    return std::string(p, n);
  }
  bool exhausted() const { return pos_ == bytes_.size(); }

 private:
  const char* take(std::size_t n) {
    if (pos_ + n > bytes_.size()) throw data_error("truncated checkpoint: " + path_);
    const char* p = bytes_.data() + pos_;
    pos_ += n;
    return p;
  }
  const std::string& bytes_;
  std::string path_;
  std::size_t pos_ = 0;
};

}  // namespace detail

inline std::string checkpoint_bytes(const ParamStore& store) {
  std::string out(kCheckpointMagic, 8);
  detail::put_u32(out, static_cast<uint32_t>(store.size()));
  for (const auto& [name, p] : store.all()) {
    detail::put_u16(out, static_cast<uint16_t>(name.size()));
    out += name;
    out.push_back(static_cast<char>(p.shape.size()));
    for (int d : p.shape) detail::put_u32(out, static_cast<uint32_t>(d));
    for (double v : p.data) detail::put_f32(out, static_cast<float>(v));
  }
  return out;
}

inline void save_checkpoint(const ParamStore& store, const std::string& path) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot write checkpoint: " + path);
  std::string bytes = checkpoint_bytes(store);
  f.write(bytes.data(), static_cast<long>(bytes.size()));
  if (!f) throw data_error("short write on checkpoint: " + path);
}

// Loads into an existing store whose parameter names and shapes must match.
inline void load_checkpoint(ParamStore& store, const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw data_error("cannot read checkpoint: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  detail::ByteReader r(bytes, path);
  if (r.str(8) != std::string(kCheckpointMagic, 8))
    throw data_error("bad checkpoint magic: " + path);
  uint32_t count = r.u32();
  if (count != store.size())
    throw data_error("checkpoint-shape mismatch: " + path + " holds " + std::to_string(count) +
                     " parameters, model expects " + std::to_string(store.size()));
  for (uint32_t k = 0; k < count; ++k) {
    uint16_t len = r.u16();
    std::string name = r.str(len);
    if (!store.has(name)) throw data_error("checkpoint-shape mismatch: unknown parameter " + name);
    ParamTensor& p = store.at(name);
    uint8_t rank = r.u8();
    Shape shape(rank);
    for (uint8_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32());
    if (shape != p.shape)
      throw data_error("checkpoint-shape mismatch on " + name + ": " + shape_str(shape) +
                       " vs " + shape_str(p.shape));
    for (std::size_t i = 0; i < p.data.size(); ++i)
      p.data[i] = static_cast<double>(r.f32());
    std::fill(p.grad.begin(), p.grad.end(), 0.0);
  }
  if (!r.exhausted()) throw data_error("trailing bytes in checkpoint: " + path);
  store.touch();
}

}  // namespace salnet
