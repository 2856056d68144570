#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "topoforge/train.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

const fs::path kDir = fs::temp_directory_path() / "topoforge_test_cli";

int run(const std::string& args) {
  const std::string cmd = "cd '" + kDir.string() + "' && TOPOFORGE_DATA_DIR='" + (kDir / "artifacts").string() + "' '" +
                          TOPOFORGE_CLI + "' " + args + " >> log.txt 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

}  // namespace

TEST_CASE("cli end to end") {
  fs::remove_all(kDir);
  fs::create_directories(kDir);

  REQUIRE(run("generate --n 10 --seed 7 --out d.bin --workers 1") == 0);
  REQUIRE(run("generate --n 10 --seed 7 --out d2.bin --workers 1") == 0);
  CHECK(slurp(kDir / "d.bin") == slurp(kDir / "d2.bin"));
  CHECK(!slurp(kDir / "d.bin").empty());

  CHECK(run("generate --seed 7") == 2);
  CHECK(run("train --variant unet") == 2);
  CHECK(run("frobnicate") == 2);
  CHECK(run("train --epochs 0") == 2);
  CHECK(run("evaluate --data missing.bin --ckpt x.ckpt") == 1);
  CHECK(run("--help") == 0);

  REQUIRE(run("train --data d.bin --variant yu-baseline --epochs 2 --batch 4 --seed 3") == 0);
  const fs::path ckpt = kDir / "artifacts" / "checkpoints" / "yu-baseline.ckpt";
  CHECK(fs::exists(ckpt));
  CHECK(fs::exists(ckpt.string() + ".loss.csv"));
  CHECK(slurp(ckpt.string() + ".loss.svg").rfind("<svg", 0) == 0);
  const auto curve = topoforge::train::read_loss_csv(ckpt.string() + ".loss.csv");

  // Same seed, same curve.
  REQUIRE(run("train --data d.bin --variant yu-baseline --epochs 2 --batch 4 --seed 3 --ckpt again.ckpt") == 0);
  const auto again = topoforge::train::read_loss_csv(kDir / "again.ckpt.loss.csv");
  REQUIRE(again.size() == curve.size());
  for (std::size_t i = 0; i < curve.size(); ++i) CHECK(again[i].train_mae == curve[i].train_mae);

  REQUIRE(run("evaluate --data d.bin --ckpt '" + ckpt.string() + "' --report r.json --workers 1") == 0);
  const json report = json::parse(slurp(kDir / "r.json"));
  CHECK(topoforge::train::check_report(report).empty());
  CHECK(report["variant"] == "yu-baseline");
  CHECK(fs::exists(kDir / "r.csv"));
  CHECK(fs::exists(kDir / "r.threshold.svg"));
  CHECK(fs::exists(kDir / "r.rank.svg"));

  REQUIRE(run("predict --ckpt '" + ckpt.string() + "' --data d.bin --index 0 --out p.json") == 0);
  const json p = json::parse(slurp(kDir / "p.json"));
  CHECK(p["density"].size() == 32);
  CHECK(p["elapsed_ms"].get<double>() > 0.0);
  CHECK(run("predict --ckpt '" + ckpt.string() + "'") == 1);

  REQUIRE(run("bench --n 2 --ckpt '" + ckpt.string() + "' --report t.json") == 0);
  const json t = json::parse(slurp(kDir / "t.json"));
  CHECK(t["cases"] == 2);
  CHECK(t["simp_mean_ms"].get<double>() > 0.0);
  CHECK(t["hardware"].is_string());
}
