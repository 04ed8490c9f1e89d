#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ditic {

class ContainerError : public std::runtime_error {
 public:
  explicit ContainerError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr uint8_t kContainerVersion = 1;
inline constexpr uint8_t kFlagTScaled = 0x01;  // flow_mode bit

// Coded image container:
//   "DITC" | version u8 | flags u8 | width u16 LE | height u16 LE |
//   pad_right u8 | pad_bottom u8 | lambda_index u8 | model_hash u32 LE |
//   z_len u32 LE | z bytes | y_len u32 LE | y bytes
// Fixed fields total 25 bytes; the file length is 25 + z_len + y_len.
struct BitstreamContainer {
  uint8_t version = kContainerVersion;
  uint8_t flags = 0;
  uint16_t width = 0, height = 0;
  uint8_t pad_right = 0, pad_bottom = 0;
  uint8_t lambda_index = 0;
  uint32_t model_hash = 0;
  std::vector<uint8_t> z_stream;
  std::vector<uint8_t> y_stream;
};

inline constexpr size_t kContainerHeaderBytes = 25;

std::string container_serialize(const BitstreamContainer& c);
BitstreamContainer container_parse(const std::string& bytes);

}  // namespace ditic
