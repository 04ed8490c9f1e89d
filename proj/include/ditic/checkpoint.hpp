#pragma once

#include <algorithm>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <map>
#include <string>
#include <vector>

#include "ditic/params.hpp"

namespace ditic {

// Parameter checkpoint container.
//
//   magic "DTCK" | version u8 | records...
//   record: name_len u16 LE | name bytes | rank u8 | extents u32 LE each |
//           payload f32 LE (row-major)
//
// Records are written in sorted name order so identical parameter sets
// produce byte-identical files.

inline constexpr uint8_t kCheckpointVersion = 1;

namespace detail {

inline void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

inline void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

inline uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

inline uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace detail

template <typename S>
std::string serialize_checkpoint(const std::vector<std::pair<std::string, Tensor<S>>>& records) {
  std::vector<std::pair<std::string, Tensor<S>>> sorted = records;
  std::sort(sorted.begin(), sorted.end(),
            [](const auto& a, const auto& b) { return a.first < b.first; });
  std::string out = "DTCK";
  out.push_back(static_cast<char>(kCheckpointVersion));
  for (const auto& [name, t] : sorted) {
    if (name.size() > 0xffff) throw TensorError("checkpoint: name too long: " + name);
    detail::put_u16(out, static_cast<uint16_t>(name.size()));
    out.append(name);
    out.push_back(static_cast<char>(t.rank()));
    for (int i = 0; i < t.rank(); ++i) detail::put_u32(out, static_cast<uint32_t>(t.dim(i)));
    for (int64_t i = 0; i < t.size(); ++i) {
      float f = static_cast<float>(t[i]);
      uint32_t bits;
      std::memcpy(&bits, &f, 4);
      detail::put_u32(out, bits);
    }
  }
  return out;
}

inline std::map<std::string, Tensor<float>> parse_checkpoint(const std::string& bytes) {
  if (bytes.size() < 5 || bytes.compare(0, 4, "DTCK") != 0)
    throw TensorError("checkpoint: bad magic");
  if (static_cast<uint8_t>(bytes[4]) != kCheckpointVersion)
    throw TensorError("checkpoint: unknown version " + std::to_string(bytes[4]));
  std::map<std::string, Tensor<float>> out;
  const uint8_t* p = reinterpret_cast<const uint8_t*>(bytes.data());
  size_t pos = 5, n = bytes.size();
  while (pos < n) {
    if (pos + 2 > n) throw TensorError("checkpoint: truncated record header");
    uint16_t name_len = detail::get_u16(p + pos);
    pos += 2;
    if (pos + name_len + 1 > n) throw TensorError("checkpoint: truncated name");
    std::string name(bytes, pos, name_len);
    pos += name_len;
    int rank = p[pos++];
    if (pos + 4u * rank > n) throw TensorError("checkpoint: truncated extents for " + name);
    Shape shape;
    for (int i = 0; i < rank; ++i) {
      shape.push_back(static_cast<int>(detail::get_u32(p + pos)));
      pos += 4;
    }
    int64_t count = shape_numel(shape);
    if (pos + 4u * count > n) throw TensorError("checkpoint: truncated payload for " + name);
    Tensor<float> t(shape);
    float* d = t.mutable_data();
    for (int64_t i = 0; i < count; ++i) {
      uint32_t bits = detail::get_u32(p + pos);
      pos += 4;
      std::memcpy(&d[i], &bits, 4);
    }
    out.emplace(std::move(name), std::move(t));
  }
  return out;
}

template <typename S>
void save_checkpoint_file(const std::string& path,
                          const std::vector<std::pair<std::string, Tensor<S>>>& records) {
  std::string bytes = serialize_checkpoint(records);
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw TensorError("checkpoint: cannot open for write: " + path);
  f.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
}

inline std::string read_file_bytes(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw TensorError("cannot open file: " + path);
  std::string bytes((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
  return bytes;
}

inline std::map<std::string, Tensor<float>> load_checkpoint_file(const std::string& path) {
  return parse_checkpoint(read_file_bytes(path));
}

template <typename S>
std::vector<std::pair<std::string, Tensor<S>>> store_records(const ParamStore<S>& store) {
  std::vector<std::pair<std::string, Tensor<S>>> out;
  for (const auto& e : store.entries()) out.emplace_back(e.name, e.value);
  return out;
}

// Loads matching records into the store. Unknown record names are an error
// unless `allow_extra`; store parameters without a record keep their values
// (LoRA slots attach after a base checkpoint is restored).
template <typename S>
void load_into_store(const std::map<std::string, Tensor<float>>& records, ParamStore<S>& store,
                     bool allow_extra = false) {
  for (const auto& [name, t] : records) {
    int h = store.find(name);
    if (h < 0) {
      if (allow_extra) continue;
      throw TensorError("checkpoint: unknown parameter " + name);
    }
    if (t.shape() != store.value(h).shape())
      throw TensorError("checkpoint: shape mismatch for " + name + ": " + shape_str(t.shape()) +
                        " vs " + shape_str(store.value(h).shape()));
    store.set_value(h, t.template cast<S>());
  }
}

}  // namespace ditic
