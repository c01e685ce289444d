#pragma once

// TBT1 trace files. Little-endian, packed:
//
//   offset  size  field
//   0       4     magic "TBT1"
//   4       2     version (u16, currently 1)
//   6       8     sample_rate_hz (f64)
//   14      8     pulse_period_s (f64)
//   22      8     first_pulse_offset_s (f64)
//   30      8     n_samples (u64)
//   38      4*n   samples in volts (f32)

#include <algorithm>
#include <array>
#include <bit>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <string>
#include <vector>

#include "twinbeam/detector_sim.hpp"
#include "twinbeam/errors.hpp"

namespace twinbeam {

inline constexpr std::array<char, 4> kTraceMagic{'T', 'B', 'T', '1'};
inline constexpr std::uint16_t kTraceVersion = 1;
inline constexpr std::size_t kTraceHeaderBytes = 38;

namespace detail {

template <class T>
void put_le(std::vector<unsigned char>& out, T value) {
  static_assert(std::is_trivially_copyable_v<T>);
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  out.insert(out.end(), bytes.begin(), bytes.end());
}

template <class T>
T get_le(const unsigned char* p) {
  std::array<unsigned char, sizeof(T)> bytes;
  std::memcpy(bytes.data(), p, sizeof(T));
  if constexpr (std::endian::native == std::endian::big)
    std::reverse(bytes.begin(), bytes.end());
  T value;
  std::memcpy(&value, bytes.data(), sizeof(T));
  return value;
}

}  // namespace detail

inline std::vector<unsigned char> encode_trace(const VoltageTrace& t) {
  std::vector<unsigned char> out;
  out.reserve(kTraceHeaderBytes + 4 * t.samples.size());
  out.insert(out.end(), kTraceMagic.begin(), kTraceMagic.end());
  detail::put_le<std::uint16_t>(out, kTraceVersion);
  detail::put_le<double>(out, t.sample_rate_hz);
  detail::put_le<double>(out, t.pulse_period_s);
  detail::put_le<double>(out, t.first_pulse_offset_s);
  detail::put_le<std::uint64_t>(out, t.samples.size());
  for (double v : t.samples) detail::put_le<float>(out, static_cast<float>(v));
  return out;
}

inline VoltageTrace decode_trace(const std::vector<unsigned char>& bytes) {
  if (bytes.size() < kTraceHeaderBytes) throw IoError("trace file: truncated header");
  if (!std::equal(kTraceMagic.begin(), kTraceMagic.end(), bytes.begin()))
    throw IoError("trace file: bad magic (expected TBT1)");
  const auto version = detail::get_le<std::uint16_t>(bytes.data() + 4);
  if (version != kTraceVersion)
    throw IoError("trace file: unsupported version " + std::to_string(version));
  VoltageTrace t;
  t.sample_rate_hz = detail::get_le<double>(bytes.data() + 6);
  t.pulse_period_s = detail::get_le<double>(bytes.data() + 14);
  t.first_pulse_offset_s = detail::get_le<double>(bytes.data() + 22);
  const auto n = detail::get_le<std::uint64_t>(bytes.data() + 30);
  if (bytes.size() != kTraceHeaderBytes + 4 * n)
    throw IoError("trace file: sample count does not match file size");
  t.samples.resize(n);
  for (std::uint64_t i = 0; i < n; ++i)
    t.samples[i] = detail::get_le<float>(bytes.data() + kTraceHeaderBytes + 4 * i);
  return t;
}

inline void write_trace(const std::filesystem::path& path, const VoltageTrace& t) {
  const auto bytes = encode_trace(t);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw IoError("failed writing " + path.string());
}

inline VoltageTrace read_trace(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
  return decode_trace(bytes);
}

}  // namespace twinbeam
