#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "tscodec/rvq.hpp"

namespace tscodec::bitstream {

// 17-byte header: "TSC1", version, sample rate (u32 LE), hop (u16 LE),
// nq, bits per index, frame count (u32 LE). Indices follow MSB-first,
// frame-major then stage-major, zero-padded to a byte boundary.
inline constexpr std::uint8_t kVersion = 1;
inline constexpr std::size_t kHeaderBytes = 17;

struct Header {
  std::uint32_t sample_rate = 24000;
  std::uint16_t hop = 320;
  std::uint8_t nq = 0;
  std::uint8_t bits_per_index = 10;
  std::uint32_t frames = 0;

  std::uint64_t payload_bits() const {
    return static_cast<std::uint64_t>(frames) * nq * bits_per_index;
  }
  bool operator==(const Header&) const = default;
};

struct Bitstream {
  Header header;
  rvq::CodeFrames codes;
};

// header.nq and header.frames are taken from the codes.
std::vector<std::uint8_t> pack(const rvq::CodeFrames& codes, Header header);

// strict rejects nonzero padding bits and trailing bytes.
Bitstream unpack(std::span<const std::uint8_t> bytes, bool strict = true);

// Payload bits per second of audio (header excluded).
double payload_bitrate(const Header& h);

}  // namespace tscodec::bitstream
