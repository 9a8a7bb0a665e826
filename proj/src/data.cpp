#include "fiqa/data.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <numeric>
#include <random>
#include <sstream>
#include <unordered_set>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fiqa/error.hpp"

namespace fiqa {

namespace {

std::string trim(std::string_view s) {
  std::size_t b = 0;
  std::size_t e = s.size();
  while (b < e && std::isspace(static_cast<unsigned char>(s[b]))) ++b;
  while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1]))) --e;
  return std::string(s.substr(b, e - b));
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> fields;
  std::size_t start = 0;
  while (true) {
    const std::size_t comma = line.find(',', start);
    if (comma == std::string::npos) {
      fields.push_back(trim(std::string_view(line).substr(start)));
      return fields;
    }
    fields.push_back(trim(std::string_view(line).substr(start, comma - start)));
    start = comma + 1;
  }
}

}  // namespace

std::vector<ManifestEntry> load_manifest(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw Error(ErrorKind::MissingFile, "manifest not found: " + path.string());
  const std::filesystem::path base = path.parent_path();

  std::string line;
  if (!std::getline(is, line) || split_csv(line) != std::vector<std::string>{"image_id", "path", "mos"}) {
    throw Error(ErrorKind::MalformedRow, path.string() + ":1: expected header image_id,path,mos");
  }
  std::vector<ManifestEntry> entries;
  std::unordered_set<std::string> seen;
  int line_no = 1;
  while (std::getline(is, line)) {
    ++line_no;
    if (trim(line).empty()) continue;
    const auto fields = split_csv(line);
    const std::string where = path.string() + ":" + std::to_string(line_no);
    if (fields.size() != 3 || fields[0].empty() || fields[1].empty()) {
      throw Error(ErrorKind::MalformedRow, where + ": expected 3 non-empty fields");
    }
    double mos = 0.0;
    const std::string& text = fields[2];
    const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), mos);
    if (ec != std::errc() || end != text.data() + text.size()) {
      throw Error(ErrorKind::MalformedRow, where + ": mos '" + text + "' is not a number");
    }
    if (!std::isfinite(mos)) throw Error(ErrorKind::NonFiniteScore, fields[0]);
    if (!seen.insert(fields[0]).second) throw Error(ErrorKind::DuplicateId, fields[0]);
    std::filesystem::path p = fields[1];
    if (p.is_relative()) p = base / p;
    entries.push_back({fields[0], p, mos});
  }
  return entries;
}

void write_manifest(const std::filesystem::path& path, std::span<const ManifestEntry> entries) {
  std::ofstream os(path);
  if (!os) throw Error(ErrorKind::Io, "cannot write " + path.string());
  os << "image_id,path,mos\n";
  char buf[32];
  for (const auto& e : entries) {
    auto [end, ec] = std::to_chars(buf, buf + sizeof buf, e.mos);
    (void)ec;
    os << e.image_id << ',' << e.path.string() << ',' << std::string_view(buf, end - buf) << '\n';
  }
}

std::uint64_t uniform_index(std::uint64_t bound, std::uint64_t (*next)(void*), void* state) {
  // Reject the top partial block so every residue is equally likely.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % bound;
  std::uint64_t v;
  do {
    v = next(state);
  } while (v >= limit);
  return v % bound;
}

Split split_dataset(std::span<const ManifestEntry> entries, const SplitSpec& spec) {
  if (entries.empty()) throw Error(ErrorKind::EmptyManifest, "cannot split an empty manifest");
  if (!(spec.train_fraction > 0.0 && spec.train_fraction < 1.0)) {
    throw Error(ErrorKind::InvalidConfig, "train_fraction must lie in (0, 1)");
  }
  std::vector<std::size_t> order(entries.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 rng(spec.seed);
  shuffle(order, rng);

  const auto n_train = static_cast<std::size_t>(
      std::llround(spec.train_fraction * static_cast<double>(entries.size())));
  Split split;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (i < n_train) {
      split.train_index.push_back(order[i]);
      split.train.push_back(entries[order[i]]);
    } else {
      split.val_index.push_back(order[i]);
      split.val.push_back(entries[order[i]]);
    }
  }
  return split;
}

Tensor preprocess(const cv::Mat& bgr, ImageSize size, const std::string& id) {
  if (bgr.empty() || bgr.rows == 0 || bgr.cols == 0) {
    throw Error(ErrorKind::ZeroAreaImage, id.empty() ? "empty image" : id);
  }
  if (bgr.type() != CV_8UC3) {
    throw Error(ErrorKind::DecodeFailure, id + ": expected an 8-bit 3-channel image");
  }
  cv::Mat rgb;
  cv::cvtColor(bgr, rgb, cv::COLOR_BGR2RGB);
  cv::Mat unit;
  rgb.convertTo(unit, CV_32FC3, 1.0 / 255.0);
  cv::Mat resized;
  if (unit.rows == size.height && unit.cols == size.width) {
    resized = unit;
  } else {
    cv::resize(unit, resized, cv::Size(size.width, size.height), 0, 0, cv::INTER_LINEAR);
  }

  Tensor out = Tensor::uninitialized({1, 3, size.height, size.width});
  for (int y = 0; y < size.height; ++y) {
    const float* row = resized.ptr<float>(y);
    for (int c = 0; c < 3; ++c) {
      float* dst = out.channel(0, c) + static_cast<std::size_t>(y) * size.width;
      const float mean = kImageNetMean[c];
      const float inv_std = 1.0f / kImageNetStd[c];
      for (int x = 0; x < size.width; ++x) dst[x] = (row[3 * x + c] - mean) * inv_std;
    }
  }
  return out;
}

PreprocessedImage load_and_preprocess(const ManifestEntry& entry, ImageSize size) {
  std::error_code ec;
  if (!std::filesystem::is_regular_file(entry.path, ec)) {
    throw Error(ErrorKind::DecodeFailure, entry.image_id + ": no file at " + entry.path.string());
  }
  cv::Mat bgr;
  try {
    bgr = cv::imread(entry.path.string(), cv::IMREAD_COLOR);
  } catch (const cv::Exception& e) {
    throw Error(ErrorKind::DecodeFailure, entry.image_id + ": " + e.what());
  }
  if (bgr.empty()) {
    throw Error(ErrorKind::DecodeFailure, entry.image_id + ": cannot decode " + entry.path.string());
  }
  return {preprocess(bgr, size, entry.image_id), entry.image_id};
}

Tensor load_batch(std::span<const ManifestEntry> entries, std::span<const std::size_t> indices,
                  ImageSize size) {
  Tensor batch = Tensor::uninitialized(
      {static_cast<int>(indices.size()), 3, size.height, size.width});
  const std::size_t stride = batch.shape().sample_size();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    const Tensor img = load_and_preprocess(entries[indices[i]], size).pixels;
    std::copy(img.data(), img.data() + stride, batch.data() + i * stride);
  }
  return batch;
}

}  // namespace fiqa
