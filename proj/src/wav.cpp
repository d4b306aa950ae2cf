#include "egodir/wav.hpp"

#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <vector>

#include "egodir/error.hpp"

namespace egodir {

namespace {

std::uint32_t u32(const unsigned char* p) { return p[0] | (p[1] << 8) | (p[2] << 16) | (static_cast<std::uint32_t>(p[3]) << 24); }
std::uint16_t u16(const unsigned char* p) { return static_cast<std::uint16_t>(p[0] | (p[1] << 8)); }

void put32(std::ofstream& out, std::uint32_t v) {
  const unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                              static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
  out.write(reinterpret_cast<const char*>(b), 4);
}
void put16(std::ofstream& out, std::uint16_t v) {
  const unsigned char b[2] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8)};
  out.write(reinterpret_cast<const char*>(b), 2);
}

}  // namespace

WavData read_wav(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(ErrorKind::MissingInput, "WAV file not found: " + path.string());
  const std::vector<unsigned char> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  require(bytes.size() >= 12 && std::memcmp(bytes.data(), "RIFF", 4) == 0 && std::memcmp(bytes.data() + 8, "WAVE", 4) == 0,
          ErrorKind::Config, "not a RIFF/WAVE file: " + path.string());
  int format = 0, channels = 0, bits = 0;
  double rate = 0.0;
  const unsigned char* data = nullptr;
  size_t data_len = 0;
  size_t pos = 12;
  while (pos + 8 <= bytes.size()) {
    const std::string id(reinterpret_cast<const char*>(bytes.data() + pos), 4);
    const size_t len = u32(bytes.data() + pos + 4);
    const unsigned char* body = bytes.data() + pos + 8;
    require(pos + 8 + len <= bytes.size() || id == "data", ErrorKind::Config, "truncated WAV chunk: " + path.string());
    if (id == "fmt ") {
      format = u16(body);
      channels = u16(body + 2);
      rate = u32(body + 4);
      bits = u16(body + 14);
      if (format == 0xFFFE && len >= 26) format = u16(body + 24);  // WAVE_FORMAT_EXTENSIBLE subformat
    } else if (id == "data") {
      data = body;
      data_len = std::min(len, bytes.size() - pos - 8);
    }
    pos += 8 + len + (len & 1);
  }
  require(data != nullptr && channels > 0, ErrorKind::Config, "WAV file missing fmt or data chunk: " + path.string());
  require((format == 1 && (bits == 16 || bits == 24 || bits == 32)) || (format == 3 && bits == 32), ErrorKind::Config,
          "unsupported WAV encoding in " + path.string());
  const size_t stride = static_cast<size_t>(bits / 8);
  const size_t frames = data_len / (stride * static_cast<size_t>(channels));
  WavData wav;
  wav.sample_rate = rate;
  wav.channels.assign(static_cast<size_t>(channels), Signal(frames));
  for (size_t f = 0; f < frames; ++f) {
    for (int c = 0; c < channels; ++c) {
      const unsigned char* p = data + (f * static_cast<size_t>(channels) + static_cast<size_t>(c)) * stride;
      double v = 0.0;
      if (format == 3) {
        float x;
        std::memcpy(&x, p, 4);
        v = x;
      } else if (bits == 16) {
        v = static_cast<std::int16_t>(u16(p)) / 32768.0;
      } else if (bits == 24) {
        std::int32_t x = p[0] | (p[1] << 8) | (p[2] << 16);
        if (x & 0x800000) x |= ~0xFFFFFF;
        v = x / 8388608.0;
      } else {
        v = static_cast<std::int32_t>(u32(p)) / 2147483648.0;
      }
      wav.channels[static_cast<size_t>(c)][f] = v;
    }
  }
  return wav;
}

void write_wav(const std::filesystem::path& path, const WavData& wav) {
  require(!wav.channels.empty(), ErrorKind::Config, "write_wav: no channels");
  const size_t frames = wav.channels.front().size();
  for (const auto& ch : wav.channels) require(ch.size() == frames, ErrorKind::Shape, "write_wav: channel lengths differ");
  const auto channels = static_cast<std::uint16_t>(wav.channels.size());
  const std::uint32_t data_len = static_cast<std::uint32_t>(frames * channels * 4);
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(ErrorKind::MissingInput, "cannot write WAV: " + path.string());
  out.write("RIFF", 4);
  put32(out, 36 + data_len);
  out.write("WAVEfmt ", 8);
  put32(out, 16);
  put16(out, 3);
  put16(out, channels);
  put32(out, static_cast<std::uint32_t>(wav.sample_rate));
  put32(out, static_cast<std::uint32_t>(wav.sample_rate) * channels * 4);
  put16(out, static_cast<std::uint16_t>(channels * 4));
  put16(out, 32);
  out.write("data", 4);
  put32(out, data_len);
  std::vector<float> interleaved(frames * channels);
  for (size_t f = 0; f < frames; ++f)
    for (size_t c = 0; c < channels; ++c) interleaved[f * channels + c] = static_cast<float>(wav.channels[c][f]);
  out.write(reinterpret_cast<const char*>(interleaved.data()), static_cast<std::streamsize>(interleaved.size() * 4));
}

}  // namespace egodir
