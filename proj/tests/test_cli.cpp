#include <doctest.h>

#include <fstream>
#include <sstream>

#include <json.hpp>

#include "fiqa/cli.hpp"
#include "fiqa/data.hpp"
#include "oracles.hpp"

using namespace fiqa;
namespace fs = std::filesystem;

namespace {

struct Run {
  int code;
  std::string out;
  std::string err;
};

Run run(std::vector<std::string> args) {
  args.insert(args.begin(), "fiqa");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

}  // namespace

TEST_CASE("missing manifest is a config error") {
  const auto dir = testing_support::temp_dir("cli");
  const auto r = run({"train", "--manifest", (dir / "nope.csv").string(), "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(r.err.rfind("error: CONFIG_ERROR: ", 0) == 0);
  CHECK(std::count(r.err.begin(), r.err.end(), '\n') == 1);
  fs::remove_all(dir);
}

TEST_CASE("dry run prints the resolved config and writes nothing") {
  const auto dir = testing_support::temp_dir("cli_dry");
  std::ofstream(dir / "m.csv") << "image_id,path,mos\n";
  std::ofstream(dir / "c.txt") << "batch_size = 8\nalpha = 0.25\n";
  const auto r = run({"train", "--config", (dir / "c.txt").string(), "--manifest", (dir / "m.csv").string(),
                      "--out", (dir / "out").string(), "--alpha", "0.75", "--dry-run"});
  CHECK(r.code == 0);
  CHECK(r.out.find("batch_size = 8") != std::string::npos);
  CHECK(r.out.find("alpha = 0.75") != std::string::npos);
  CHECK_FALSE(fs::exists(dir / "out"));
  fs::remove_all(dir);
}

TEST_CASE("bad flags and bad config values exit with 2") {
  CHECK(run({"train", "--no-such-flag"}).code == 2);
  CHECK(run({}).code == 2);
  const auto dir = testing_support::temp_dir("cli_cfg");
  std::ofstream(dir / "c.txt") << "batch_size = 1\n";
  std::ofstream(dir / "m.csv") << "image_id,path,mos\n";
  const auto r = run({"train", "--config", (dir / "c.txt").string(), "--manifest", (dir / "m.csv").string(),
                      "--out", (dir / "o").string()});
  CHECK(r.code == 2);
  CHECK(run({"--help"}).code == 0);
  fs::remove_all(dir);
}

TEST_CASE("evaluate on perfect predictions") {
  const auto dir = testing_support::temp_dir("cli_eval");
  std::ofstream(dir / "m.csv") << "image_id,path,mos\na,a.png,1\nb,b.png,2.5\nc,c.png,2\nd,d.png,4\n";
  std::ofstream(dir / "p.csv") << "image_id,fused,error\na,1,\nb,2.5,\nc,2,\nd,4,\n";
  const auto r = run({"evaluate", (dir / "p.csv").string(), "--manifest", (dir / "m.csv").string(), "--out",
                      (dir / "metrics.json").string()});
  CHECK(r.code == 0);
  CHECK(r.out.find("1.0000  1.0000  1.0000") != std::string::npos);
  CHECK(fs::exists(dir / "metrics.json"));

  std::ofstream(dir / "flat.csv") << "image_id,fused,error\na,1,\nb,1,\nc,1,\nd,1,\n";
  const auto flat = run({"evaluate", (dir / "flat.csv").string(), "--manifest", (dir / "m.csv").string()});
  CHECK(flat.code == 3);
  CHECK(flat.err.rfind("error: DATA_ERROR: ", 0) == 0);
  fs::remove_all(dir);
}

TEST_CASE("audit reports both conventions") {
  const auto dir = testing_support::temp_dir("cli_audit");
  const auto r = run({"audit", "--out", (dir / "audit.json").string()});
  CHECK(r.code == 0);
  std::ifstream is(dir / "audit.json");
  const auto j = nlohmann::json::parse(is);
  CHECK(j.contains("total_params"));
  CHECK(j["gflops"].contains("MAC_AS_ONE_FLOP"));
  CHECK(j["gflops"].contains("MAC_AS_TWO_FLOPS"));
  fs::remove_all(dir);
}
