#pragma once

#include <cstdint>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace ditic {

class CoderError : public std::runtime_error {
 public:
  explicit CoderError(const std::string& msg) : std::runtime_error(msg) {}
};

inline constexpr int kCdfPrecision = 16;
inline constexpr uint32_t kCdfTotal = 1u << kCdfPrecision;

// Quantized CDF over a finite symbol window plus two escape bins.
//
// Bin layout: [escape_low | offset .. offset+num_values-1 | escape_high].
// cum has num_bins()+1 entries, cum[0] = 0, cum.back() = 2^16, strictly
// increasing (every bin keeps mass >= 1). Symbols outside the window are
// coded through an escape bin followed by a raw 16-bit value.
struct CdfTable {
  int offset = 0;      // symbol value of the first in-window bin
  int num_values = 0;  // in-window symbol count
  std::vector<uint32_t> cum;

  int num_bins() const { return num_values + 2; }
  bool contains(int sym) const { return sym >= offset && sym < offset + num_values; }
  int bin_of(int sym) const { return 1 + (sym - offset); }
  uint32_t mass(int bin) const {
    return cum[static_cast<size_t>(bin) + 1] - cum[static_cast<size_t>(bin)];
  }
  void validate() const;
};

struct Bitstream {
  std::vector<uint8_t> bytes;
  uint64_t bit_len = 0;
};

// Builds a quantized Gaussian CDF table: window +-S around zero where
// S = ceil(12*sigma)+1 clamped to `max_half_support`, boundaries at
// Phi((k - S - 1/2 - mu_frac)/sigma), with monotonicity repair so every bin
// (including the escapes) keeps mass >= 1.
CdfTable gaussian_cdf_table(double mu_frac, double sigma, int max_half_support = 64);

// Builds a table from arbitrary bin boundary probabilities `cdf_points`
// (nondecreasing, in [0,1], one entry per boundary). Used by the factorized
// prior.
CdfTable quantized_cdf_table(int offset, const std::vector<double>& cdf_points);

// Streaming 32-bit range coder, 16-bit probability precision. One instance
// per stream, strictly sequential; escape symbols fall back to a raw 16-bit
// payload covering [-32768, 32767].
class StreamEncoder {
 public:
  StreamEncoder();
  ~StreamEncoder();
  StreamEncoder(StreamEncoder&&) noexcept;
  StreamEncoder& operator=(StreamEncoder&&) noexcept;

  void put(int symbol, const CdfTable& table);  // throws on out-of-range symbols
  Bitstream finish();

  uint64_t symbols_put() const { return count_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  uint64_t count_ = 0;
};

class StreamDecoder {
 public:
  explicit StreamDecoder(const Bitstream& stream);
  ~StreamDecoder();
  StreamDecoder(StreamDecoder&&) noexcept;
  StreamDecoder& operator=(StreamDecoder&&) noexcept;

  int get(const CdfTable& table);  // throws CoderError on truncated input

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

Bitstream encode_symbols(const std::vector<int>& symbols,
                         const std::vector<const CdfTable*>& tables);
std::vector<int> decode_symbols(const Bitstream& stream,
                                const std::vector<const CdfTable*>& tables);

// Ideal code length in bits of `symbols` under the table-quantized model;
// the coder's output length tracks this within a small constant.
double table_code_length_bits(const std::vector<int>& symbols,
                              const std::vector<const CdfTable*>& tables);

}  // namespace ditic
