#pragma once

// On-disk MSMCR container. Byte layout is documented in docs/msmcr_format.md.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "msmc/msmcr.hpp"

namespace msmc {

inline constexpr char kMsmcrMagic[4] = {'M', 'S', 'M', 'C'};
inline constexpr std::uint16_t kMsmcrVersion = 1;

struct MsmcrFileHeader {
  std::uint16_t version = kMsmcrVersion;
  std::uint16_t stages = 0;
  std::uint16_t heads = 0;
  std::uint32_t length = 0;        // stage-1 frames, padded
  std::uint32_t valid_length = 0;  // stage-1 frames before padding
  std::uint64_t fingerprint = 0;
  std::vector<std::uint32_t> codebook_sizes;
  std::vector<std::uint32_t> rates;
  std::uint64_t payload_bits = 0;

  std::size_t header_bytes() const;
};

/// sum_j L_j * sum_k ceil(log2 M_jk).
std::uint64_t payload_bits(const Msmcr& m);

std::vector<std::uint8_t> msmcr_pack(const Msmcr& m);
MsmcrFileHeader msmcr_read_header(std::span<const std::uint8_t> bytes);
/// Indices only; vectors are left empty.
Msmcr msmcr_unpack_indices(std::span<const std::uint8_t> bytes);
/// Checks the fingerprint and rebuilds vectors from `codebooks`.
Msmcr msmcr_unpack(std::span<const std::uint8_t> bytes, const Codebooks& codebooks, std::uint64_t expected_fingerprint);

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes);
std::vector<std::uint8_t> read_bytes(const std::string& path);

}  // namespace msmc
