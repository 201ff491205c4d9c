#include "tscodec/bitstream.hpp"

#include <limits>
#include <string>

#include "tscodec/error.hpp"

namespace tscodec::bitstream {

namespace {

constexpr std::uint8_t kMagic[4] = {'T', 'S', 'C', '1'};

void put_le(std::vector<std::uint8_t>& out, std::uint64_t v, int bytes) {
  for (int i = 0; i < bytes; ++i) out.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
}

std::uint64_t get_le(std::span<const std::uint8_t> in, std::size_t at, int bytes) {
  std::uint64_t v = 0;
  for (int i = 0; i < bytes; ++i) v |= static_cast<std::uint64_t>(in[at + static_cast<std::size_t>(i)]) << (8 * i);
  return v;
}

void check_bits(int bits) {
  if (bits < 1 || bits > 16) throw InvalidArgument("bits_per_index must be in [1, 16]");
}

}  // namespace

std::vector<std::uint8_t> pack(const rvq::CodeFrames& codes, Header header) {
  check_bits(header.bits_per_index);
  if (codes.nq_used() > 255) throw InvalidArgument("at most 255 quantizer stages fit the header");
  if (codes.frames() > std::numeric_limits<std::uint32_t>::max()) throw InvalidArgument("too many frames");
  header.nq = static_cast<std::uint8_t>(codes.nq_used());
  header.frames = static_cast<std::uint32_t>(codes.frames());

  std::vector<std::uint8_t> out(kMagic, kMagic + 4);
  out.push_back(kVersion);
  put_le(out, header.sample_rate, 4);
  put_le(out, header.hop, 2);
  out.push_back(header.nq);
  out.push_back(header.bits_per_index);
  put_le(out, header.frames, 4);

  const std::int64_t limit = std::int64_t{1} << header.bits_per_index;
  out.reserve(out.size() + (header.payload_bits() + 7) / 8);
  std::uint32_t acc = 0;
  int filled = 0;
  for (Index f = 0; f < codes.frames(); ++f) {
    for (int k = 0; k < codes.nq_used(); ++k) {
      const std::int32_t idx = codes.indices(f, k);
      if (idx < 0 || idx >= limit) {
        throw InvalidArgument("index " + std::to_string(idx) + " at frame " + std::to_string(f) + ", stage " +
                              std::to_string(k) + " does not fit in " + std::to_string(header.bits_per_index) +
                              " bits");
      }
      acc = (acc << header.bits_per_index) | static_cast<std::uint32_t>(idx);
      filled += header.bits_per_index;
      while (filled >= 8) {
        filled -= 8;
        out.push_back(static_cast<std::uint8_t>(acc >> filled));
      }
      acc &= (1u << filled) - 1u;
    }
  }
  if (filled > 0) out.push_back(static_cast<std::uint8_t>(acc << (8 - filled)));
  return out;
}

Bitstream unpack(std::span<const std::uint8_t> bytes, bool strict) {
  if (bytes.size() < kHeaderBytes) {
    throw FormatError("bitstream has " + std::to_string(bytes.size()) + " bytes, header needs " +
                      std::to_string(kHeaderBytes));
  }
  for (int i = 0; i < 4; ++i) {
    if (bytes[static_cast<std::size_t>(i)] != kMagic[i]) throw FormatError("bad bitstream magic");
  }
  if (bytes[4] != kVersion) throw FormatError("unsupported bitstream version " + std::to_string(bytes[4]));
  Bitstream b;
  Header& h = b.header;
  h.sample_rate = static_cast<std::uint32_t>(get_le(bytes, 5, 4));
  h.hop = static_cast<std::uint16_t>(get_le(bytes, 9, 2));
  h.nq = bytes[11];
  h.bits_per_index = bytes[12];
  h.frames = static_cast<std::uint32_t>(get_le(bytes, 13, 4));
  if (h.bits_per_index < 1 || h.bits_per_index > 16) throw FormatError("bits_per_index must be in [1, 16]");
  if (h.sample_rate == 0 || h.hop == 0) throw FormatError("sample rate and hop must be positive");

  const std::uint64_t need = h.payload_bits();
  const std::uint64_t have = static_cast<std::uint64_t>(bytes.size() - kHeaderBytes) * 8;
  if (have < need) {
    throw FormatError("truncated payload: expected " + std::to_string(need) + " bits, found " +
                      std::to_string(have));
  }
  const std::uint64_t padded = (need + 7) / 8 * 8;
  if (strict && have > padded) throw FormatError("trailing bytes after payload");

  b.codes.indices.resize(h.frames, h.nq);
  const auto payload = bytes.subspan(kHeaderBytes);
  std::size_t pos = 0;
  std::uint32_t acc = 0;
  int filled = 0;
  const std::uint32_t mask = (1u << h.bits_per_index) - 1u;
  for (std::uint32_t f = 0; f < h.frames; ++f) {
    for (int k = 0; k < h.nq; ++k) {
      while (filled < h.bits_per_index) {
        acc = (acc << 8) | payload[pos++];
        filled += 8;
      }
      filled -= h.bits_per_index;
      b.codes.indices(f, k) = static_cast<std::int32_t>((acc >> filled) & mask);
      acc &= (1u << filled) - 1u;
    }
  }
  if (strict && filled > 0 && acc != 0) throw FormatError("nonzero padding bits");
  return b;
}

double payload_bitrate(const Header& h) {
  if (h.frames == 0) return 0.0;
  const double seconds = static_cast<double>(h.frames) * h.hop / h.sample_rate;
  return static_cast<double>(h.payload_bits()) / seconds;
}

}  // namespace tscodec::bitstream
