#include "ditic/container.hpp"

namespace ditic {

namespace {

void put_u16(std::string& out, uint16_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

uint16_t get_u16(const uint8_t* p) { return static_cast<uint16_t>(p[0] | (p[1] << 8)); }

uint32_t get_u32(const uint8_t* p) {
  return static_cast<uint32_t>(p[0]) | (static_cast<uint32_t>(p[1]) << 8) |
         (static_cast<uint32_t>(p[2]) << 16) | (static_cast<uint32_t>(p[3]) << 24);
}

}  // namespace

std::string container_serialize(const BitstreamContainer& c) {
  std::string out = "DITC";
  out.push_back(static_cast<char>(c.version));
  out.push_back(static_cast<char>(c.flags));
  put_u16(out, c.width);
  put_u16(out, c.height);
  out.push_back(static_cast<char>(c.pad_right));
  out.push_back(static_cast<char>(c.pad_bottom));
  out.push_back(static_cast<char>(c.lambda_index));
  put_u32(out, c.model_hash);
  put_u32(out, static_cast<uint32_t>(c.z_stream.size()));
  out.append(reinterpret_cast<const char*>(c.z_stream.data()), c.z_stream.size());
  put_u32(out, static_cast<uint32_t>(c.y_stream.size()));
  out.append(reinterpret_cast<const char*>(c.y_stream.data()), c.y_stream.size());
  return out;
}

BitstreamContainer container_parse(const std::string& bytes) {
  const uint8_t* p = reinterpret_cast<const uint8_t*>(bytes.data());
  if (bytes.size() < kContainerHeaderBytes || bytes.compare(0, 4, "DITC") != 0)
    throw ContainerError("container: bad magic");
  BitstreamContainer c;
  c.version = p[4];
  if (c.version != kContainerVersion)
    throw ContainerError("container: unknown version " + std::to_string(c.version));
  c.flags = p[5];
  c.width = get_u16(p + 6);
  c.height = get_u16(p + 8);
  c.pad_right = p[10];
  c.pad_bottom = p[11];
  c.lambda_index = p[12];
  c.model_hash = get_u32(p + 13);
  size_t pos = 17;
  const uint32_t z_len = get_u32(p + pos);
  pos += 4;
  if (pos + z_len + 4 > bytes.size()) throw ContainerError("container: truncated z stream");
  c.z_stream.assign(p + pos, p + pos + z_len);
  pos += z_len;
  const uint32_t y_len = get_u32(p + pos);
  pos += 4;
  if (pos + y_len != bytes.size()) throw ContainerError("container: truncated y stream");
  c.y_stream.assign(p + pos, p + pos + y_len);
  return c;
}

}  // namespace ditic
