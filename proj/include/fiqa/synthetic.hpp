#pragma once

#include <cstdint>
#include <filesystem>
#include <vector>

#include "fiqa/data.hpp"

namespace fiqa {

// Labeled stand-in dataset: textured scenes degraded by Gaussian blur and a
// brightness offset, with MOS a smooth function of both.
struct SyntheticOptions {
  int count = 256;
  std::uint64_t seed = 0;
  ImageSize size{};
};

struct SyntheticSample {
  ManifestEntry entry;
  double blur = 0.0;        // in [0,1], sigma = 0.3 + 3.7 * blur
  double brightness = 0.0;  // in [0,1], offset = 128 * (brightness - 0.5)
};

// MOS on a 1..5 scale: sharper and brighter is better.
double synthetic_mos(double blur, double brightness);

// Writes <dir>/images/syn_XXXX.png and <dir>/manifest.csv (relative paths).
std::vector<SyntheticSample> generate_synthetic(const std::filesystem::path& dir,
                                                const SyntheticOptions& options);

}  // namespace fiqa
