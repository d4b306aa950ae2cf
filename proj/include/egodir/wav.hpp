#pragma once

#include <filesystem>

#include "egodir/stft.hpp"

namespace egodir {

struct WavData {
  double sample_rate = 48000.0;
  MultiSignal channels;  // channel-major
};

/// Reads 16/24/32-bit integer PCM or 32-bit float WAV.
WavData read_wav(const std::filesystem::path& path);
/// Writes 32-bit float WAV. All channels must have the same length.
void write_wav(const std::filesystem::path& path, const WavData& wav);

}  // namespace egodir
