#include "msmc/msmcr_file.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace msmc {

namespace {

class ByteWriter {
 public:
  template <typename T>
  void put(T v) {
    for (std::size_t i = 0; i < sizeof(T); ++i) bytes_.push_back(static_cast<std::uint8_t>((static_cast<std::uint64_t>(v) >> (8 * i)) & 0xFF));
  }
  void raw(const void* data, std::size_t n) {
    const auto* p = static_cast<const std::uint8_t*>(data);
    bytes_.insert(bytes_.end(), p, p + n);
  }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
};

class ByteReader {
 public:
  explicit ByteReader(std::span<const std::uint8_t> b) : b_(b) {}
  template <typename T>
  T get() {
    need(sizeof(T));
    std::uint64_t v = 0;
    for (std::size_t i = 0; i < sizeof(T); ++i) v |= static_cast<std::uint64_t>(b_[pos_ + i]) << (8 * i);
    pos_ += sizeof(T);
    return static_cast<T>(v);
  }
  void need(std::size_t n) const {
    if (pos_ + n > b_.size()) throw InputError("truncated MSMCR file");
  }
  std::size_t pos() const { return pos_; }
  void skip(std::size_t n) {
    need(n);
    pos_ += n;
  }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

// Little-endian bit stream: bit b lives in byte b / 8 at position b % 8.
class BitWriter {
 public:
  void put(std::uint32_t value, int bits) {
    for (int i = 0; i < bits; ++i) {
      if (pos_ % 8 == 0) bytes_.push_back(0);
      if ((value >> i) & 1U) bytes_.back() |= static_cast<std::uint8_t>(1U << (pos_ % 8));
      ++pos_;
    }
  }
  std::uint64_t bit_count() const { return pos_; }
  std::vector<std::uint8_t>& bytes() { return bytes_; }

 private:
  std::vector<std::uint8_t> bytes_;
  std::uint64_t pos_ = 0;
};

class BitReader {
 public:
  BitReader(std::span<const std::uint8_t> bytes, std::uint64_t bits) : bytes_(bytes), bits_(bits) {}
  std::uint32_t get(int bits) {
    if (pos_ + static_cast<std::uint64_t>(bits) > bits_) throw InputError("truncated MSMCR payload");
    std::uint32_t v = 0;
    for (int i = 0; i < bits; ++i) {
      if ((bytes_[pos_ / 8] >> (pos_ % 8)) & 1U) v |= 1U << i;
      ++pos_;
    }
    return v;
  }

 private:
  std::span<const std::uint8_t> bytes_;
  std::uint64_t bits_;
  std::uint64_t pos_ = 0;
};

std::vector<std::uint32_t> stage_lengths(const MsmcrFileHeader& h) {
  std::vector<std::uint32_t> len(h.stages);
  std::uint64_t cumulative = 1;
  for (std::size_t j = 0; j < h.stages; ++j) {
    if (h.rates[j] < 1) throw InputError("MSMCR file has a zero down-sampling rate");
    if (j > 0) cumulative *= h.rates[j];
    if (h.length % cumulative != 0) throw InputError("MSMCR file length is inconsistent with its rates");
    len[j] = static_cast<std::uint32_t>(h.length / cumulative);
  }
  return len;
}

}  // namespace

std::size_t MsmcrFileHeader::header_bytes() const { return 4 + 2 + 2 + 2 + 2 + 4 + 4 + 8 + 8 * stages + 8; }

std::uint64_t payload_bits(const Msmcr& m) {
  std::uint64_t bits = 0;
  for (std::size_t j = 0; j < m.stages.size(); ++j)
    bits += static_cast<std::uint64_t>(m.stages[j].indices.rows()) * static_cast<std::uint64_t>(m.heads) *
            static_cast<std::uint64_t>(index_bits(m.codebook_sizes[j]));
  return bits;
}

std::vector<std::uint8_t> msmcr_pack(const Msmcr& m) {
  m.validate();
  BitWriter bits;
  for (std::size_t j = 0; j < m.stages.size(); ++j) {
    const int w = index_bits(m.codebook_sizes[j]);
    const IndexMatrix& idx = m.stages[j].indices;
    for (Eigen::Index k = 0; k < idx.cols(); ++k)
      for (Eigen::Index i = 0; i < idx.rows(); ++i) bits.put(static_cast<std::uint32_t>(idx(i, k)), w);
  }
  ByteWriter out;
  out.raw(kMsmcrMagic, 4);
  out.put<std::uint16_t>(kMsmcrVersion);
  out.put<std::uint16_t>(static_cast<std::uint16_t>(m.stages.size()));
  out.put<std::uint16_t>(static_cast<std::uint16_t>(m.heads));
  out.put<std::uint16_t>(0);
  out.put<std::uint32_t>(static_cast<std::uint32_t>(m.length()));
  out.put<std::uint32_t>(static_cast<std::uint32_t>(m.valid_length));
  out.put<std::uint64_t>(m.fingerprint);
  for (int mj : m.codebook_sizes) out.put<std::uint32_t>(static_cast<std::uint32_t>(mj));
  for (int d : m.rates) out.put<std::uint32_t>(static_cast<std::uint32_t>(d));
  out.put<std::uint64_t>(bits.bit_count());
  out.raw(bits.bytes().data(), bits.bytes().size());
  return std::move(out.bytes());
}

MsmcrFileHeader msmcr_read_header(std::span<const std::uint8_t> bytes) {
  ByteReader r(bytes);
  r.need(4);
  if (std::memcmp(bytes.data(), kMsmcrMagic, 4) != 0) throw InputError("not an MSMCR file (bad magic)");
  r.skip(4);
  MsmcrFileHeader h;
  h.version = r.get<std::uint16_t>();
  if (h.version != kMsmcrVersion) throw InputError("unsupported MSMCR file version " + std::to_string(h.version));
  h.stages = r.get<std::uint16_t>();
  h.heads = r.get<std::uint16_t>();
  r.get<std::uint16_t>();
  h.length = r.get<std::uint32_t>();
  h.valid_length = r.get<std::uint32_t>();
  h.fingerprint = r.get<std::uint64_t>();
  if (h.stages < 1 || h.heads < 1) throw InputError("MSMCR file declares no stages or heads");
  for (std::size_t j = 0; j < h.stages; ++j) h.codebook_sizes.push_back(r.get<std::uint32_t>());
  for (std::size_t j = 0; j < h.stages; ++j) h.rates.push_back(r.get<std::uint32_t>());
  h.payload_bits = r.get<std::uint64_t>();
  return h;
}

Msmcr msmcr_unpack_indices(std::span<const std::uint8_t> bytes) {
  const MsmcrFileHeader h = msmcr_read_header(bytes);
  const std::size_t start = h.header_bytes();
  const std::uint64_t payload_bytes = (h.payload_bits + 7) / 8;
  if (bytes.size() < start + payload_bytes) throw InputError("truncated MSMCR payload");
  const auto lengths = stage_lengths(h);

  std::uint64_t expected = 0;
  for (std::size_t j = 0; j < h.stages; ++j) {
    if (h.codebook_sizes[j] < 2) throw InputError("MSMCR file declares a codebook smaller than 2");
    expected += static_cast<std::uint64_t>(lengths[j]) * h.heads * static_cast<std::uint64_t>(index_bits(static_cast<int>(h.codebook_sizes[j])));
  }
  if (expected != h.payload_bits) throw InputError("MSMCR payload size disagrees with its header");

  Msmcr m;
  m.heads = h.heads;
  m.valid_length = static_cast<int>(h.valid_length);
  m.fingerprint = h.fingerprint;
  BitReader bits(bytes.subspan(start, payload_bytes), h.payload_bits);
  for (std::size_t j = 0; j < h.stages; ++j) {
    const int mj = static_cast<int>(h.codebook_sizes[j]);
    m.codebook_sizes.push_back(mj);
    m.rates.push_back(static_cast<int>(h.rates[j]));
    const int w = index_bits(mj);
    MsmcrStage st;
    st.indices.resize(lengths[j], h.heads);
    for (Eigen::Index k = 0; k < h.heads; ++k)
      for (Eigen::Index i = 0; i < lengths[j]; ++i) {
        const std::uint32_t v = bits.get(w);
        if (v >= static_cast<std::uint32_t>(mj)) throw InputError("MSMCR index exceeds its codebook size");
        st.indices(i, k) = static_cast<int>(v);
      }
    m.stages.push_back(std::move(st));
  }
  return m;
}

Msmcr msmcr_unpack(std::span<const std::uint8_t> bytes, const Codebooks& codebooks, std::uint64_t expected_fingerprint) {
  Msmcr m = msmcr_unpack_indices(bytes);
  if (m.fingerprint != expected_fingerprint) throw ConfigError("MSMCR file fingerprint does not match the analyzer");
  if (codebooks.size() != m.stages.size()) throw ConfigError("MSMCR file stage count does not match the codebooks");
  for (std::size_t j = 0; j < codebooks.size(); ++j)
    if (codebooks[j].size() != m.codebook_sizes[j] || codebooks[j].head_count() != m.heads)
      throw ConfigError("MSMCR file codebook layout does not match the analyzer");
  rematerialize(m, codebooks);
  m.validate(&codebooks);
  return m;
}

void write_bytes(const std::string& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw InputError("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
}

std::vector<std::uint8_t> read_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw InputError("cannot read '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>());
}

}  // namespace msmc
