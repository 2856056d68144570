#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>

#include "doctest.h"
#include "topoforge/datagen.hpp"
#include "topoforge/errors.hpp"

using namespace topoforge;
using namespace topoforge::datagen;

namespace fs = std::filesystem;

namespace {

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "topoforge_test_datagen";
  fs::create_directories(dir);
  return dir / name;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

// A small, fast configuration for round-trip and determinism checks.
GenerateOptions quick_options() {
  GenerateOptions o;
  o.simp.max_iterations = 15;
  o.workers = 2;
  return o;
}

bool same_sample(const Sample& a, const Sample& b) {
  return (a.spec.mask == b.spec.mask).all() && (a.spec.fx == b.spec.fx).all() &&
         (a.spec.fy == b.spec.fy).all() && a.spec.volfrac == b.spec.volfrac &&
         (a.label == b.label).all() && a.label_compliance == b.label_compliance &&
         a.meta.seed == b.meta.seed && a.meta.iterations == b.meta.iterations &&
         a.meta.converged == b.meta.converged;
}

}  // namespace

TEST_CASE("design area rasterization") {
  CHECK((rasterize_void({16, 16, 0.0}, 32, 32) == 1).all());
  CHECK((rasterize_void({16, 16, 1e-9}, 32, 32) == 1).all());

  const IntField mask = rasterize_void({16.0, 16.0, 4.0}, 32, 32);
  int brute = 0;
  for (int y = 0; y < 32; ++y) {
    for (int x = 0; x < 32; ++x) {
      const double px = x + 0.5, py = y + 0.5;
      if (std::sqrt((px - 16) * (px - 16) + (py - 16) * (py - 16)) < 4.0) ++brute;
    }
  }
  CHECK(brute > 0);
  CHECK((mask == 0).count() == brute);

  Rng rng(1);
  const double bound = M_PI * 64.0 / 1024.0;
  for (int i = 0; i < 2000; ++i) {
    const IntField m = sample_design_area(rng);
    CHECK((m == 0).count() / 1024.0 < bound + 0.03);
    CHECK(m.col(0).any());
  }
}

TEST_CASE("load sampling") {
  Rng rng(2);
  ConditionSampler one;
  one.min_loads = one.max_loads = 1;
  const IntField full = IntField::Ones(32, 32);
  for (int i = 0; i < 100; ++i) {
    const LoadDraw d = sample_loads(rng, full, one);
    CHECK(d.count == 1);
    CHECK(((d.fx != 0) || (d.fy != 0)).count() == 1);
  }

  std::map<std::pair<int, int>, int> hist;
  std::map<int, int> counts;
  int total = 0;
  for (int i = 0; i < 10000; ++i) {
    const IntField mask = sample_design_area(rng);
    const LoadDraw d = sample_loads(rng, mask);
    counts[d.count]++;
    const Eigen::Array<bool, Eigen::Dynamic, Eigen::Dynamic> loaded = (d.fx != 0) || (d.fy != 0);
    CHECK(loaded.count() == d.count);
    CHECK(!(loaded && (mask == 0)).any());
    for (int c = 0; c < mask.size(); ++c) {
      if (loaded.data()[c]) {
        hist[{d.fx.data()[c], d.fy.data()[c]}]++;
        ++total;
      }
    }
  }
  CHECK(hist.size() == 24);
  const double p = 1.0 / 24.0;
  const double sigma = std::sqrt(total * p * (1 - p));
  for (const auto& [pair, n] : hist) CHECK(std::abs(n - total * p) <= 3 * sigma);
  for (int k = 1; k <= 4; ++k) CHECK(std::abs(counts[k] - 2500) <= 3 * std::sqrt(10000 * 0.25 * 0.75));
}

TEST_CASE("fixed-edge connectivity") {
  simp::DesignSpec s = simp::DesignSpec::blank(32, 32, 0.5);
  // Wall off the top-right corner.
  for (int x = 25; x < 32; ++x) s.mask(5, x) = 0;
  for (int y = 0; y < 5; ++y) s.mask(y, 25) = 0;
  s.fy(2, 30) = 1;
  CHECK_FALSE(loads_reach_fixed_edge(s));
  s.fy(2, 30) = 0;
  s.fy(20, 30) = 1;
  CHECK(loads_reach_fixed_edge(s));
  // A circle overlapping the top and right edges cuts the corner off.
  s = simp::DesignSpec::blank(32, 32, 0.5);
  s.mask = rasterize_void({26.0, 6.0, 6.5}, 32, 32);
  CHECK(s.mask(0, 31) == 1);
  s.fx(0, 31) = 1;
  CHECK_FALSE(loads_reach_fixed_edge(s));
}

TEST_CASE("sampled specs satisfy the design-spec invariants") {
  Rng rng(3);
  for (int i = 0; i < 500; ++i) {
    const simp::DesignSpec s = sample_spec(rng);
    CHECK_NOTHROW(s.validate());
    CHECK(loads_reach_fixed_edge(s));
    CHECK(static_cast<double>(static_cast<float>(s.volfrac)) == s.volfrac);
  }
}

TEST_CASE("split counts") {
  const auto c = split_counts(10);
  CHECK(c.train == 8);
  CHECK(c.validation == 1);
  CHECK(c.test == 1);
  const auto d = split_counts(5000);
  CHECK(d.train == 4000);
  CHECK(d.validation == 500);
  CHECK(d.test == 500);
  CHECK_THROWS_AS(generate(9, 1), ParameterError);
}

TEST_CASE("generate, write and read back") {
  const GenerateOptions opts = quick_options();
  GenerateStats stats;
  const DatasetSplit a = generate(10, 7, opts, &stats);
  CHECK(a.train.size() == 8);
  CHECK(a.validation.size() == 1);
  CHECK(a.test.size() == 1);
  CHECK(stats.mean_iterations > 0);
  for (const auto* part : {&a.train, &a.validation, &a.test}) {
    for (const Sample& s : *part) CHECK_NOTHROW(validate_sample(s));
  }

  const fs::path p1 = temp_path("a.bin"), p2 = temp_path("b.bin");
  write_dataset(p1, a);
  GenerateOptions serial = opts;
  serial.workers = 1;
  write_dataset(p2, generate(10, 7, serial));
  CHECK(slurp(p1) == slurp(p2));
  CHECK(fs::file_size(p1) == 64 + 10 * 6300);

  const DatasetSplit back = read_dataset(p1);
  CHECK(back.seed == 7);
  REQUIRE(back.train.size() == 8);
  REQUIRE(back.validation.size() == 1);
  REQUIRE(back.test.size() == 1);
  for (size_t i = 0; i < 8; ++i) CHECK(same_sample(back.train[i], a.train[i]));
  CHECK(same_sample(back.validation[0], a.validation[0]));
  CHECK(same_sample(back.test[0], a.test[0]));

  // Splits are disjoint: every per-sample seed appears once.
  std::set<std::uint64_t> seeds;
  for (const auto* part : {&back.train, &back.validation, &back.test})
    for (const Sample& s : *part) seeds.insert(s.meta.seed);
  CHECK(seeds.size() == 10);

  const DatasetSplit other = generate(10, 8, opts);
  write_dataset(p2, other);
  CHECK(slurp(p1) != slurp(p2));

  write_manifest(temp_path("a.bin.json"), a, opts, stats);
  CHECK(slurp(temp_path("a.bin.json")).find("\"mean_iterations\"") != std::string::npos);
}

TEST_CASE("corrupt dataset files are rejected") {
  const DatasetSplit a = generate(10, 9, quick_options());
  const fs::path good = temp_path("good.bin");
  write_dataset(good, a);
  const std::string bytes = slurp(good);

  const fs::path bad = temp_path("bad.bin");
  auto write_bytes = [&](const std::string& b) {
    std::ofstream out(bad, std::ios::binary | std::ios::trunc);
    out.write(b.data(), static_cast<std::streamsize>(b.size()));
  };

  write_bytes(bytes.substr(0, bytes.size() - 100));
  CHECK_THROWS_WITH_AS(read_dataset(bad), doctest::Contains("declares 10 records but the file holds 9"),
                       FormatError);

  std::string v2 = bytes;
  v2[8] = 2;
  write_bytes(v2);
  CHECK_THROWS_WITH_AS(read_dataset(bad), doctest::Contains("unsupported dataset version 2"), FormatError);

  std::string magic = bytes;
  magic[0] = 'X';
  write_bytes(magic);
  CHECK_THROWS_WITH_AS(read_dataset(bad), doctest::Contains("bad magic"), FormatError);

  write_bytes(bytes.substr(0, 30));
  CHECK_THROWS_AS(read_dataset(bad), FormatError);
  CHECK_THROWS_AS(read_dataset(temp_path("missing.bin")), FormatError);
}
