#include <doctest.h>

#include <fstream>
#include <functional>
#include <set>

#include <opencv2/imgcodecs.hpp>

#include "fiqa/data.hpp"
#include "fiqa/error.hpp"
#include "oracles.hpp"

using namespace fiqa;
namespace fs = std::filesystem;

namespace {

fs::path write_file(const fs::path& p, const std::string& text) {
  std::ofstream(p) << text;
  return p;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  return ErrorKind::Io;
}

std::vector<ManifestEntry> numbered(int n) {
  std::vector<ManifestEntry> v;
  for (int i = 0; i < n; ++i) v.push_back({"img" + std::to_string(i), "x.png", double(i)});
  return v;
}

}  // namespace

TEST_CASE("load_manifest keeps file order") {
  const auto dir = testing_support::temp_dir("manifest");
  const auto p = write_file(dir / "m.csv", "image_id,path,mos\na,a.png,1.5\nb,/abs/b.png,2\nc,sub/c.png,-3e-1\n");
  const auto e = load_manifest(p);
  REQUIRE(e.size() == 3);
  CHECK(e[0].image_id == "a");
  CHECK(e[0].path == dir / "a.png");
  CHECK(e[1].path == fs::path("/abs/b.png"));
  CHECK(e[2].mos == doctest::Approx(-0.3));
  fs::remove_all(dir);
}

TEST_CASE("load_manifest errors") {
  const auto dir = testing_support::temp_dir("manifest_err");
  CHECK(kind_of([&] { load_manifest(dir / "missing.csv"); }) == ErrorKind::MissingFile);
  const auto bad = write_file(dir / "bad.csv", "image_id,path,mos\na,a.png,1\nb,b.png,abc\n");
  try {
    load_manifest(bad);
    FAIL("expected MalformedRow");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::MalformedRow);
    CHECK(std::string(e.what()).find(":3:") != std::string::npos);
  }
  const auto dup = write_file(dir / "dup.csv", "image_id,path,mos\nx1,a.png,1\nx1,b.png,2\n");
  try {
    load_manifest(dup);
    FAIL("expected DuplicateId");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::DuplicateId);
    CHECK(std::string(e.what()).find("x1") != std::string::npos);
  }
  const auto nan = write_file(dir / "nan.csv", "image_id,path,mos\nq,a.png,nan\n");
  CHECK(kind_of([&] { load_manifest(nan); }) == ErrorKind::NonFiniteScore);
  const auto header = write_file(dir / "hdr.csv", "id,path,mos\n");
  CHECK(kind_of([&] { load_manifest(header); }) == ErrorKind::MalformedRow);
  fs::remove_all(dir);
}

TEST_CASE("split_dataset sizes and determinism") {
  const auto entries = numbered(10);
  const auto a = split_dataset(entries, {0.8, 7});
  CHECK(a.train.size() == 8);
  CHECK(a.val.size() == 2);
  std::set<std::string> all;
  for (const auto& e : a.train) all.insert(e.image_id);
  for (const auto& e : a.val) CHECK(all.insert(e.image_id).second);
  CHECK(all.size() == 10);

  const auto again = split_dataset(entries, {0.8, 7});
  CHECK(again.train_index == a.train_index);
  const auto other = split_dataset(entries, {0.8, 8});
  CHECK(other.train.size() == 8);
  CHECK(other.val_index != a.val_index);

  for (int n = 1; n <= 40; ++n) {
    for (double f : {0.01, 0.3, 0.5, 0.8, 0.99}) {
      const auto s = split_dataset(numbered(n), {f, 1});
      CHECK(s.train.size() + s.val.size() == static_cast<std::size_t>(n));
      CHECK(s.train.size() == static_cast<std::size_t>(std::llround(f * n)));
    }
  }
  CHECK(kind_of([] { split_dataset({}, {0.8, 0}); }) == ErrorKind::EmptyManifest);
}

TEST_CASE("preprocessing resizes and standardizes") {
  const auto dir = testing_support::temp_dir("pre");
  cv::Mat big(1000, 700, CV_8UC3, cv::Scalar(10, 200, 90));
  cv::randu(big, cv::Scalar::all(0), cv::Scalar::all(255));
  cv::imwrite((dir / "big.png").string(), big);
  const auto img = load_and_preprocess({"big", dir / "big.png", 1.0});
  CHECK(img.pixels.shape() == Shape{1, 3, 600, 416});
  CHECK(img.pixels.all_finite());
  CHECK(img.source_id == "big");
  const auto again = load_and_preprocess({"big", dir / "big.png", 1.0});
  CHECK(std::equal(img.pixels.data(), img.pixels.data() + img.pixels.size(), again.pixels.data()));

  cv::Mat small(200, 300, CV_8UC3, cv::Scalar(1, 2, 3));
  cv::imwrite((dir / "small.png").string(), small);
  const auto s = load_and_preprocess({"small", dir / "small.png", 1.0});
  CHECK(s.pixels.shape() == Shape{1, 3, 600, 416});
  CHECK(s.pixels.all_finite());

  const Tensor zero = preprocess(cv::Mat(600, 416, CV_8UC3, cv::Scalar::all(0)));
  for (int c = 0; c < 3; ++c) {
    const float expected = (0.0f - kImageNetMean[c]) / kImageNetStd[c];
    CHECK(zero.at(0, c, 0, 0) == doctest::Approx(expected));
    CHECK(zero.at(0, c, 599, 415) == doctest::Approx(expected));
  }
  // BGR on disk, RGB in the tensor.
  const Tensor red = preprocess(cv::Mat(600, 416, CV_8UC3, cv::Scalar(0, 0, 255)));
  CHECK(red.at(0, 0, 5, 5) == doctest::Approx((1.0f - kImageNetMean[0]) / kImageNetStd[0]));

  write_file(dir / "junk.png", "not an image");
  CHECK(kind_of([&] { load_and_preprocess({"junk", dir / "junk.png", 1.0}); }) == ErrorKind::DecodeFailure);
  CHECK(kind_of([&] { load_and_preprocess({"gone", dir / "gone.png", 1.0}); }) == ErrorKind::DecodeFailure);
  CHECK(kind_of([] { preprocess(cv::Mat()); }) == ErrorKind::ZeroAreaImage);
  fs::remove_all(dir);
}
