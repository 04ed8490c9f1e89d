#include "ditic/range_coder.hpp"

#include <algorithm>
#include <cmath>

// 32-bit range coder with 16-bit probability precision. Carries are handled
// LZMA-style: low is kept in 33 bits and a cache byte plus a run of 0xff
// bytes absorb the propagation. After renormalization range >= 2^24, so
// range/2^16 >= 2^8 and every bin with mass >= 1 stays codable.

namespace ditic {

namespace {
constexpr uint32_t kTopValue = 1u << 24;
constexpr int kRawBias = 32768;  // raw escape payload covers [-32768, 32767]
}  // namespace

void CdfTable::validate() const {
  if (num_values < 1 || cum.size() != static_cast<size_t>(num_bins()) + 1)
    throw CoderError("cdf table: bad bin count");
  if (cum.front() != 0 || cum.back() != kCdfTotal)
    throw CoderError("cdf table: endpoints must span [0, 2^16]");
  for (size_t i = 1; i < cum.size(); ++i)
    if (cum[i] <= cum[i - 1]) throw CoderError("cdf table: not strictly increasing");
}

struct StreamEncoder::Impl {
  uint64_t low = 0;
  uint32_t range = 0xffffffffu;
  uint8_t cache = 0;
  uint64_t pending = 0;
  bool started = false;
  std::vector<uint8_t> out;

  void shift_low() {
    if (static_cast<uint32_t>(low) < 0xff000000u || (low >> 32) != 0) {
      const uint8_t carry = static_cast<uint8_t>(low >> 32);
      if (started) out.push_back(static_cast<uint8_t>(cache + carry));
      for (; pending > 0; --pending) out.push_back(static_cast<uint8_t>(0xff + carry));
      cache = static_cast<uint8_t>(low >> 24);
      started = true;
    } else {
      ++pending;
    }
    low = (low & 0x00ffffffull) << 8;
  }

  void encode(uint32_t cum_low, uint32_t mass, uint32_t total) {
    range /= total;
    low += static_cast<uint64_t>(cum_low) * range;
    range *= mass;
    while (range < kTopValue) {
      shift_low();
      range <<= 8;
    }
  }
};

StreamEncoder::StreamEncoder() : impl_(std::make_unique<Impl>()) {}
StreamEncoder::~StreamEncoder() = default;
StreamEncoder::StreamEncoder(StreamEncoder&&) noexcept = default;
StreamEncoder& StreamEncoder::operator=(StreamEncoder&&) noexcept = default;

void StreamEncoder::put(int symbol, const CdfTable& t) {
  if (t.contains(symbol)) {
    const int bin = t.bin_of(symbol);
    impl_->encode(t.cum[static_cast<size_t>(bin)], t.mass(bin), kCdfTotal);
  } else {
    if (symbol < -kRawBias || symbol > kRawBias - 1)
      throw CoderError("encode_symbols: symbol outside extended support at index " +
                       std::to_string(count_));
    const int bin = symbol < t.offset ? 0 : t.num_bins() - 1;
    impl_->encode(t.cum[static_cast<size_t>(bin)], t.mass(bin), kCdfTotal);
    impl_->encode(static_cast<uint32_t>(symbol + kRawBias), 1, kCdfTotal);
  }
  ++count_;
}

Bitstream StreamEncoder::finish() {
  for (int i = 0; i < 5; ++i) impl_->shift_low();
  Bitstream out;
  out.bytes = std::move(impl_->out);
  out.bit_len = 8 * out.bytes.size();
  return out;
}

struct StreamDecoder::Impl {
  const std::vector<uint8_t>* bytes = nullptr;
  size_t pos = 0;
  uint32_t code = 0;
  uint32_t range = 0xffffffffu;

  uint8_t next_byte() {
    if (pos >= bytes->size()) throw CoderError("range decoder: truncated stream");
    return (*bytes)[pos++];
  }

  uint32_t decode_target(uint32_t total) {
    range /= total;
    const uint32_t t = code / range;
    return t < total ? t : total - 1;
  }

  void consume(uint32_t cum_low, uint32_t mass) {
    code -= cum_low * range;
    range *= mass;
    while (range < kTopValue) {
      code = (code << 8) | next_byte();
      range <<= 8;
    }
  }
};

StreamDecoder::StreamDecoder(const Bitstream& stream) : impl_(std::make_unique<Impl>()) {
  impl_->bytes = &stream.bytes;
  for (int i = 0; i < 4; ++i) impl_->code = (impl_->code << 8) | impl_->next_byte();
}
StreamDecoder::~StreamDecoder() = default;
StreamDecoder::StreamDecoder(StreamDecoder&&) noexcept = default;
StreamDecoder& StreamDecoder::operator=(StreamDecoder&&) noexcept = default;

int StreamDecoder::get(const CdfTable& t) {
  const uint32_t target = impl_->decode_target(kCdfTotal);
  auto it = std::upper_bound(t.cum.begin() + 1, t.cum.end(), target);
  const int bin = static_cast<int>(it - t.cum.begin()) - 1;
  impl_->consume(t.cum[static_cast<size_t>(bin)], t.mass(bin));
  if (bin == 0 || bin == t.num_bins() - 1) {
    const uint32_t raw = impl_->decode_target(kCdfTotal);
    impl_->consume(raw, 1);
    return static_cast<int>(raw) - kRawBias;
  }
  return t.offset + bin - 1;
}

CdfTable gaussian_cdf_table(double mu_frac, double sigma, int max_half_support) {
  if (!(sigma >= 0.11)) throw CoderError("gaussian_cdf_table: sigma below floor");
  if (!(mu_frac >= -0.5 && mu_frac < 0.5))
    throw CoderError("gaussian_cdf_table: mu_frac out of range");
  const int half = std::min(static_cast<int>(std::ceil(12.0 * sigma)) + 1, max_half_support);
  CdfTable t;
  t.offset = -half;
  t.num_values = 2 * half + 1;
  const int bins = t.num_bins();
  t.cum.assign(static_cast<size_t>(bins) + 1, 0);
  const double inv_sqrt2_sigma = 1.0 / (sigma * 1.4142135623730950488016887242097);
  for (int i = 1; i < bins; ++i) {
    // Lower boundary of value bin i-1, i.e. symbol (offset + i - 1) - 1/2.
    const double b = static_cast<double>(t.offset + i - 1) - 0.5 - mu_frac;
    const double phi = 0.5 * (1.0 + std::erf(b * inv_sqrt2_sigma));
    t.cum[static_cast<size_t>(i)] = static_cast<uint32_t>(std::lround(phi * kCdfTotal));
  }
  t.cum[0] = 0;
  t.cum[static_cast<size_t>(bins)] = kCdfTotal;
  for (int i = 1; i <= bins; ++i)
    t.cum[static_cast<size_t>(i)] =
        std::max(t.cum[static_cast<size_t>(i)], t.cum[static_cast<size_t>(i - 1)] + 1);
  t.cum[static_cast<size_t>(bins)] = kCdfTotal;
  for (int i = bins - 1; i >= 1; --i)
    t.cum[static_cast<size_t>(i)] =
        std::min(t.cum[static_cast<size_t>(i)], t.cum[static_cast<size_t>(i + 1)] - 1);
  t.validate();
  return t;
}

CdfTable quantized_cdf_table(int offset, const std::vector<double>& cdf_points) {
  if (cdf_points.size() < 2) throw CoderError("quantized_cdf_table: needs >= 2 boundary points");
  CdfTable t;
  t.offset = offset;
  t.num_values = static_cast<int>(cdf_points.size()) - 1;
  const int bins = t.num_bins();
  t.cum.assign(static_cast<size_t>(bins) + 1, 0);
  for (int i = 1; i < bins; ++i) {
    double p = cdf_points[static_cast<size_t>(i - 1)];
    p = std::min(1.0, std::max(0.0, p));
    t.cum[static_cast<size_t>(i)] = static_cast<uint32_t>(std::lround(p * kCdfTotal));
  }
  t.cum[static_cast<size_t>(bins)] = kCdfTotal;
  for (int i = 1; i <= bins; ++i)
    t.cum[static_cast<size_t>(i)] =
        std::max(t.cum[static_cast<size_t>(i)], t.cum[static_cast<size_t>(i - 1)] + 1);
  t.cum[static_cast<size_t>(bins)] = kCdfTotal;
  for (int i = bins - 1; i >= 1; --i)
    t.cum[static_cast<size_t>(i)] =
        std::min(t.cum[static_cast<size_t>(i)], t.cum[static_cast<size_t>(i + 1)] - 1);
  t.validate();
  return t;
}

Bitstream encode_symbols(const std::vector<int>& symbols,
                         const std::vector<const CdfTable*>& tables) {
  if (symbols.size() != tables.size())
    throw CoderError("encode_symbols: symbol/table count mismatch");
  StreamEncoder enc;
  for (size_t i = 0; i < symbols.size(); ++i) enc.put(symbols[i], *tables[i]);
  return enc.finish();
}

std::vector<int> decode_symbols(const Bitstream& stream,
                                const std::vector<const CdfTable*>& tables) {
  StreamDecoder dec(stream);
  std::vector<int> out;
  out.reserve(tables.size());
  for (const CdfTable* t : tables) out.push_back(dec.get(*t));
  return out;
}

double table_code_length_bits(const std::vector<int>& symbols,
                              const std::vector<const CdfTable*>& tables) {
  if (symbols.size() != tables.size())
    throw CoderError("table_code_length_bits: symbol/table count mismatch");
  const double log2_total = static_cast<double>(kCdfPrecision);
  double bits = 0.0;
  for (size_t i = 0; i < symbols.size(); ++i) {
    const CdfTable& t = *tables[i];
    const int sym = symbols[i];
    if (t.contains(sym)) {
      bits += log2_total - std::log2(static_cast<double>(t.mass(t.bin_of(sym))));
    } else {
      const int bin = sym < t.offset ? 0 : t.num_bins() - 1;
      bits += log2_total - std::log2(static_cast<double>(t.mass(bin)));
      bits += log2_total;  // raw 16-bit payload
    }
  }
  return bits;
}

}  // namespace ditic
