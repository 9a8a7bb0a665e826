#include <doctest.h>

#include <algorithm>
#include <fstream>
#include <random>
#include <sstream>

#include <opencv2/imgcodecs.hpp>

#include "fiqa/error.hpp"
#include "fiqa/inference.hpp"
#include "oracles.hpp"

using namespace fiqa;

namespace {

Tensor pattern(int h, int w) {
  Tensor t({1, 3, h, w});
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < h; ++y) {
      for (int x = 0; x < w; ++x) t.at(0, c, y, x) = static_cast<float>(x * 0.01 + y * 0.1 + c);
    }
  }
  return t;
}

PredictionRecord with_grid(std::vector<std::vector<double>> grid) {
  PredictionRecord r;
  r.grid = std::move(grid);
  fuse(r);
  return r;
}

std::string slurp(const std::filesystem::path& p) {
  std::ifstream is(p, std::ios::binary);
  std::stringstream ss;
  ss << is.rdbuf();
  return ss.str();
}

}  // namespace

TEST_CASE("default views are identity, hflip, vflip") {
  const Tensor img = pattern(5, 4);
  const auto views = make_views(img, TtaPolicy{});
  REQUIRE(views.size() == 3);
  CHECK(std::equal(img.data(), img.data() + img.size(), views[0].data()));
  for (int c = 0; c < 3; ++c) {
    for (int y = 0; y < 5; ++y) {
      for (int x = 0; x < 4; ++x) {
        CHECK(views[1].at(0, c, y, x) == img.at(0, c, y, 3 - x));
        CHECK(views[2].at(0, c, y, x) == img.at(0, c, 4 - y, x));
      }
    }
  }
  CHECK_FALSE(std::equal(img.data(), img.data() + img.size(), views[1].data()));
  const Tensor back = apply_view(views[1], ViewKind::HorizontalFlip);
  CHECK(std::equal(img.data(), img.data() + img.size(), back.data()));
  CHECK(TtaPolicy::none().count() == 1);
  CHECK(TtaPolicy::with_color().count() == 4);
}

TEST_CASE("brighten view scales pixels and clips at white") {
  Tensor t({1, 3, 1, 2});
  for (int c = 0; c < 3; ++c) {
    t.at(0, c, 0, 0) = (0.5f - kImageNetMean[c]) / kImageNetStd[c];
    t.at(0, c, 0, 1) = (0.95f - kImageNetMean[c]) / kImageNetStd[c];
  }
  const Tensor b = apply_view(t, ViewKind::Brighten);
  for (int c = 0; c < 3; ++c) {
    CHECK(b.at(0, c, 0, 0) * kImageNetStd[c] + kImageNetMean[c] == doctest::Approx(0.55f));
    CHECK(b.at(0, c, 0, 1) * kImageNetStd[c] + kImageNetMean[c] == doctest::Approx(1.0f));
  }
}

TEST_CASE("fusion arithmetic") {
  const auto r = with_grid({{0.80, 0.82, 0.78}, {0.60, 0.60, 0.60}});
  CHECK(r.per_model[0] == doctest::Approx(0.80));
  CHECK(r.per_model[1] == doctest::Approx(0.60));
  CHECK(r.fused == doctest::Approx(0.70));
  CHECK(with_grid({{0.123456789}}).fused == 0.123456789);
  CHECK(with_grid({{2.5, 2.5}, {2.5, 2.5}}).fused == 2.5);
  PredictionRecord empty;
  CHECK_THROWS_AS(fuse(empty), Error);
}

TEST_CASE("fusion is order-free and bounded") {
  std::mt19937_64 rng(17);
  std::uniform_int_distribution<int> dim(1, 6);
  std::normal_distribution<double> d(3.0, 2.0);
  for (int trial = 0; trial < 200; ++trial) {
    const int m = dim(rng), t = dim(rng);
    std::vector<std::vector<double>> grid(m, std::vector<double>(t));
    for (auto& row : grid) {
      for (double& v : row) v = d(rng);
    }
    const auto r = with_grid(grid);
    auto shuffled = grid;
    std::shuffle(shuffled.begin(), shuffled.end(), rng);
    for (auto& row : shuffled) std::shuffle(row.begin(), row.end(), rng);
    CHECK(std::fabs(with_grid(shuffled).fused - r.fused) <= 1e-9);
    double lo = grid[0][0], hi = grid[0][0];
    for (const auto& row : grid) {
      lo = std::min(lo, *std::min_element(row.begin(), row.end()));
      hi = std::max(hi, *std::max_element(row.begin(), row.end()));
    }
    CHECK(r.fused >= lo);
    CHECK(r.fused <= hi);
  }
}

TEST_CASE("ensemble of one model with one view returns the raw score") {
  auto model = build_model(default_spec(BackboneKind::ShuffleNetV2), 4);
  QualityModel* models[] = {&model};
  Tensor img({1, 3, kInputHeight, kInputWidth});
  std::mt19937_64 rng(2);
  std::normal_distribution<float> d;
  for (float& v : img.values()) v = d(rng);
  const auto rec = ensemble_predict(models, PreprocessedImage{img, "a"}, TtaPolicy::none());
  CHECK(rec.fused == model.forward(img, nn::Mode::Eval)[0]);
  CHECK(rec.grid.size() == 1);
  CHECK(rec.grid[0].size() == 1);
  CHECK_THROWS_AS(ensemble_predict({}, PreprocessedImage{img, "a"}, TtaPolicy{}), Error);
}

TEST_CASE("batch prediction isolates bad images and is reproducible") {
  const auto dir = testing_support::temp_dir("predict");
  std::vector<ManifestEntry> entries;
  for (int i = 0; i < 5; ++i) {
    const auto p = dir / ("im" + std::to_string(i) + ".png");
    if (i == 2) {
      std::ofstream(p) << "garbage";
    } else {
      cv::Mat m(120 + 40 * i, 90, CV_8UC3);
      cv::randu(m, cv::Scalar::all(0), cv::Scalar::all(255));
      cv::imwrite(p.string(), m);
    }
    entries.push_back({"im" + std::to_string(i), p, double(i)});
  }
  auto a = build_model(default_spec(BackboneKind::MobileNetV3Small), 1);
  auto b = build_model(default_spec(BackboneKind::ShuffleNetV2), 2);
  QualityModel* models[] = {&a, &b};
  const auto recs = batch_predict(models, entries, TtaPolicy{}, dir / "p1.csv", 2);
  batch_predict(models, entries, TtaPolicy{}, dir / "p2.csv", 3);
  REQUIRE(recs.size() == 5);
  CHECK_FALSE(recs[2].ok());
  for (int i : {0, 1, 3, 4}) CHECK(recs[i].ok());
  CHECK(slurp(dir / "p1.csv") == slurp(dir / "p2.csv"));

  std::istringstream csv(slurp(dir / "p1.csv"));
  std::string line;
  std::getline(csv, line);
  CHECK(line ==
        "image_id,fused,model_1_mean,model_2_mean,model_1_view_1,model_1_view_2,model_1_view_3,"
        "model_2_view_1,model_2_view_2,model_2_view_3,error");
  int rows = 0;
  while (std::getline(csv, line)) {
    ++rows;
    CHECK(std::count(line.begin(), line.end(), ',') == 10);
  }
  CHECK(rows == 5);
  const auto back = read_predictions(dir / "p1.csv");
  CHECK(back[0].fused == recs[0].fused);
  CHECK_FALSE(back[2].error.empty());
  std::filesystem::remove_all(dir);
}

TEST_CASE("averaging reduces prediction variance") {
  // Two models, three views, each view score = truth + independent noise.
  std::mt19937_64 rng(23);
  std::normal_distribution<double> noise(0.0, 0.3);
  const int trials = 2000;
  std::vector<double> fused, single;
  for (int i = 0; i < trials; ++i) {
    std::vector<std::vector<double>> grid(2, std::vector<double>(3));
    for (auto& row : grid) {
      for (double& v : row) v = 1.0 + noise(rng);
    }
    const auto r = with_grid(grid);
    fused.push_back(r.fused);
    single.push_back(grid[0][0]);
  }
  auto var = [](const std::vector<double>& v) {
    const double m = static_cast<double>(oracle::mean(v));
    double s = 0.0;
    for (double x : v) s += (x - m) * (x - m);
    return s / (v.size() - 1);
  };
  CHECK(var(fused) <= var(single) * 1.1);
  CHECK(var(fused) == doctest::Approx(0.09 / 6).epsilon(0.15));
}

TEST_CASE("ensemble manifest round trip") {
  const auto dir = testing_support::temp_dir("ens");
  auto a = build_model(default_spec(BackboneKind::MobileNetV3Small), 1);
  save_checkpoint(a, dir / "a.fiqa", {"h", 0, 0.0});
  write_ensemble_manifest(dir / "ensemble.json",
                          {{{"a.fiqa", "mobilenet_v3_small", file_digest(dir / "a.fiqa")}},
                           TtaPolicy{}.views, "h"});
  const auto m = read_ensemble_manifest(dir / "ensemble.json");
  CHECK(m.members.size() == 1);
  CHECK(m.tta == TtaPolicy{}.views);
  CHECK(load_ensemble(dir).size() == 1);
  CHECK(load_ensemble(dir / "a.fiqa").size() == 1);
  std::ofstream(dir / "a.fiqa", std::ios::app) << "x";
  CHECK_THROWS_AS(load_ensemble(dir), Error);
  std::filesystem::remove_all(dir);
}
