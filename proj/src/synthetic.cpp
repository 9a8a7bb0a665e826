#include "fiqa/synthetic.hpp"

#include <cmath>
#include <cstdio>
#include <random>

#include <opencv2/imgcodecs.hpp>
#include <opencv2/imgproc.hpp>

#include "fiqa/error.hpp"

namespace fiqa {

namespace {

double unit(std::mt19937_64& rng) { return static_cast<double>(rng() >> 11) * 0x1.0p-53; }

cv::Mat render_scene(std::mt19937_64& rng, ImageSize size) {
  cv::Mat img(size.height, size.width, CV_32FC3);
  // Smooth two-color gradient background.
  const cv::Vec3f a(60 + 120 * unit(rng), 60 + 120 * unit(rng), 60 + 120 * unit(rng));
  const cv::Vec3f b(60 + 120 * unit(rng), 60 + 120 * unit(rng), 60 + 120 * unit(rng));
  const double angle = 2.0 * M_PI * unit(rng);
  const double ca = std::cos(angle), sa = std::sin(angle);
  const double diag = std::hypot(size.width, size.height);
  for (int y = 0; y < size.height; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size.width; ++x) {
      const double t = 0.5 + ((x - size.width / 2.0) * ca + (y - size.height / 2.0) * sa) / diag;
      row[x] = a * static_cast<float>(1.0 - t) + b * static_cast<float>(t);
    }
  }
  // Face-sized ellipse plus clutter.
  const int shapes = 12 + static_cast<int>(unit(rng) * 12);
  for (int i = 0; i < shapes; ++i) {
    const cv::Point center(static_cast<int>(unit(rng) * size.width),
                           static_cast<int>(unit(rng) * size.height));
    const cv::Size axes(8 + static_cast<int>(unit(rng) * size.width / 4),
                        8 + static_cast<int>(unit(rng) * size.height / 4));
    const cv::Scalar color(40 + 180 * unit(rng), 40 + 180 * unit(rng), 40 + 180 * unit(rng));
    cv::ellipse(img, center, axes, 360.0 * unit(rng), 0, 360, color, cv::FILLED, cv::LINE_AA);
  }
  cv::ellipse(img, cv::Point(size.width / 2, size.height * 2 / 5),
              cv::Size(size.width / 4, size.height / 4), 0, 0, 360,
              cv::Scalar(120 + 60 * unit(rng), 140 + 60 * unit(rng), 170 + 60 * unit(rng)),
              cv::FILLED, cv::LINE_AA);
  // Pin mean intensity so brightness is set by the offset alone.
  const cv::Scalar m = cv::mean(img);
  img += cv::Scalar::all(128.0 - (m[0] + m[1] + m[2]) / 3.0);
  // Fine texture that blur removes.
  const int period = 3 + static_cast<int>(unit(rng) * 4);
  for (int y = 0; y < size.height; ++y) {
    auto* row = img.ptr<cv::Vec3f>(y);
    for (int x = 0; x < size.width; ++x) {
      const float stripe = ((x / period + y / period) % 2 == 0) ? 14.0f : -14.0f;
      const float noise = static_cast<float>(24.0 * (unit(rng) - 0.5));
      row[x] += cv::Vec3f(stripe + noise, stripe + noise, stripe + noise);
    }
  }
  return img;
}

}  // namespace

double synthetic_mos(double blur, double brightness) {
  return 1.0 + 4.0 * (0.6 * (1.0 - blur) + 0.4 * brightness);
}

std::vector<SyntheticSample> generate_synthetic(const std::filesystem::path& dir,
                                                const SyntheticOptions& options) {
  if (options.count <= 0) throw Error(ErrorKind::InvalidConfig, "synthetic count must be positive");
  const std::filesystem::path images = dir / "images";
  std::filesystem::create_directories(images);

  std::mt19937_64 rng(options.seed);
  std::vector<SyntheticSample> samples;
  std::vector<ManifestEntry> relative;
  for (int i = 0; i < options.count; ++i) {
    const double blur = unit(rng);
    const double brightness = unit(rng);
    cv::Mat scene = render_scene(rng, options.size);
    cv::Mat blurred;
    cv::GaussianBlur(scene, blurred, cv::Size(0, 0), 0.3 + 3.7 * blur, 0.0, cv::BORDER_REFLECT);
    cv::Mat out;
    blurred.convertTo(out, CV_8UC3, 1.0, 128.0 * (brightness - 0.5));

    char name[32];
    std::snprintf(name, sizeof name, "syn_%04d", i);
    const std::filesystem::path file = images / (std::string(name) + ".png");
    if (!cv::imwrite(file.string(), out, {cv::IMWRITE_PNG_COMPRESSION, 1})) {
      throw Error(ErrorKind::Io, "cannot write " + file.string());
    }
    const double mos = synthetic_mos(blur, brightness);
    samples.push_back({{name, file, mos}, blur, brightness});
    relative.push_back({name, std::filesystem::path("images") / (std::string(name) + ".png"), mos});
  }
  write_manifest(dir / "manifest.csv", relative);
  return samples;
}

}  // namespace fiqa
