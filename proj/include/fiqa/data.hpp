#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include <opencv2/core/mat.hpp>

#include "fiqa/tensor.hpp"

namespace fiqa {

struct ManifestEntry {
  std::string image_id;
  std::filesystem::path path;
  double mos = 0.0;
};

struct SplitSpec {
  double train_fraction = 0.8;
  std::uint64_t seed = 0;
};

struct Split {
  std::vector<ManifestEntry> train;
  std::vector<ManifestEntry> val;
  // Positions in the input list, aligned with train / val.
  std::vector<std::size_t> train_index;
  std::vector<std::size_t> val_index;
};

// Channel-standardized image, stored as a 1 x 3 x H x W tensor (CHW).
struct PreprocessedImage {
  Tensor pixels;
  std::string source_id;
};

struct ImageSize {
  int height = 600;
  int width = 416;
};

inline constexpr float kImageNetMean[3] = {0.485f, 0.456f, 0.406f};
inline constexpr float kImageNetStd[3] = {0.229f, 0.224f, 0.225f};

// CSV with header `image_id,path,mos`. Relative paths resolve against the
// manifest's directory. Blank lines are skipped.
std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path);
void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries);

// Seeded Fisher-Yates shuffle, then the first round(fraction * N) go to train.
Split split_dataset(std::span<const ManifestEntry> entries, const SplitSpec& spec);

// Decode (as 3-channel color), resize bilinearly to size, scale to [0,1],
// standardize with ImageNet statistics.
PreprocessedImage load_and_preprocess(const ManifestEntry& entry, ImageSize size = {});
// Same pipeline on an already decoded 8-bit BGR image.
Tensor preprocess(const cv::Mat& bgr, ImageSize size = {}, const std::string& id = "");

// Loads entries[indices[i]] into sample i of one N x 3 x H x W tensor.
Tensor load_batch(std::span<const ManifestEntry> entries, std::span<const std::size_t> indices,
                  ImageSize size = {});

// Uniform integer in [0, bound) from raw engine output, by rejection; the
// result does not depend on the standard library's distribution code.
std::uint64_t uniform_index(std::uint64_t bound, std::uint64_t (*next)(void*), void* state);

template <typename Engine>
std::uint64_t uniform_index(std::uint64_t bound, Engine& engine) {
  return uniform_index(
      bound, [](void* s) -> std::uint64_t { return (*static_cast<Engine*>(s))(); }, &engine);
}

// In-place Fisher-Yates with uniform_index.
template <typename T, typename Engine>
void shuffle(std::vector<T>& items, Engine& engine) {
  for (std::size_t i = items.size(); i > 1; --i) {
    const auto j = static_cast<std::size_t>(uniform_index(i, engine));
    std::swap(items[i - 1], items[j]);
  }
}

}  // namespace fiqa
