#pragma once

// Random problem generation, SIMP labelling and the on-disk dataset format.
//
// Dataset file (little-endian), version 1:
//
//   offset  size  field
//   0       8     magic "TOPODS\0\0"
//   8       4     u32 version (= 1)
//   12      4     u32 nely
//   16      4     u32 nelx
//   20      4     u32 record size in bytes
//   24      8     u64 generation seed
//   32      8     u64 train count
//   40      8     u64 validation count
//   48      8     u64 test count
//   56      8     reserved, zero
//
// followed by train, validation and test records in that order. A record for
// an nely x nelx grid (cells in row-major order, row = y from the top):
//
//   u64  per-sample seed
//   u32  SIMP iterations
//   u8   converged flag
//   u8x3 reserved, zero
//   ceil(cells / 8) bytes  design mask, bit (cell % 8) of byte (cell / 8), LSB first
//   cells x i8   fx
//   cells x i8   fy
//   f32  volume fraction
//   f64  compliance of the stored label
//   cells x f32  label densities
//
// A JSON manifest with seed, counts, SIMP configuration and run statistics is
// written next to the file (path + ".json").

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "topoforge/rng.hpp"
#include "topoforge/simp.hpp"

namespace topoforge::datagen {

using simp::DesignSpec;
using simp::Field;
using simp::IntField;

inline constexpr std::uint32_t kDatasetVersion = 1;

struct ConditionSampler {
  int nely = 32;
  int nelx = 32;
  double volfrac_lo = 0.2;
  double volfrac_hi = 0.8;
  double max_radius = 8.0;  ///< 25% of the square side
  int min_loads = 1;
  int max_loads = 4;
  int max_component = 2;
};

struct Circle {
  double cx = 0.0;  ///< element units, x to the right
  double cy = 0.0;  ///< element units, y downwards (row direction)
  double radius = 0.0;
};

/// Void cells are those whose centre (x + 0.5, y + 0.5) lies strictly inside the circle.
IntField rasterize_void(const Circle& circle, int nely, int nelx);

IntField sample_design_area(Rng& rng, const ConditionSampler& cfg = {});

struct LoadDraw {
  IntField fx;
  IntField fy;
  int count = 0;
};

LoadDraw sample_loads(Rng& rng, const IntField& mask, const ConditionSampler& cfg = {});

/// True when every loaded element reaches a left-column design element
/// through 4-connected design elements.
bool loads_reach_fixed_edge(const DesignSpec& spec);

/// Volume fraction representable as f32 and inside [lo, hi].
double sample_volfrac(Rng& rng, const ConditionSampler& cfg = {});

/// Rejection-samples a full problem statement.
DesignSpec sample_spec(Rng& rng, const ConditionSampler& cfg = {});

struct SampleMeta {
  std::uint64_t seed = 0;
  std::uint32_t iterations = 0;
  bool converged = false;
};

struct Sample {
  DesignSpec spec;
  Field label;
  double label_compliance = 0.0;
  SampleMeta meta;
};

struct DatasetSplit {
  std::uint64_t seed = 0;
  std::vector<Sample> train;
  std::vector<Sample> validation;
  std::vector<Sample> test;

  std::size_t size() const { return train.size() + validation.size() + test.size(); }
};

struct GenerateStats {
  double mean_iterations = 0.0;
  std::size_t non_converged = 0;
  std::size_t solver_failures = 0;  ///< specs replaced after a SIMP error
  double mean_seconds = 0.0;
  double wall_seconds = 0.0;
};

struct GenerateOptions {
  ConditionSampler sampler{};
  simp::SimpConfig simp{};
  unsigned workers = 0;  ///< 0 = hardware concurrency
  std::function<void(std::size_t done, std::size_t total)> progress;
};

/// Split sizes for n samples: validation = test = n / 10, train = the rest.
struct SplitCounts {
  std::size_t train, validation, test;
};
SplitCounts split_counts(std::size_t n);

/// Samples and labels one problem from a per-sample seed.
Sample make_sample(std::uint64_t sample_seed, const ConditionSampler& sampler,
                   const simp::SimpConfig& config, std::size_t* failures = nullptr);

DatasetSplit generate(std::size_t n, std::uint64_t seed, const GenerateOptions& options = {},
                      GenerateStats* stats = nullptr);

/// Throws ParameterError describing the first violated spec or label invariant.
void validate_sample(const Sample& sample);

void write_dataset(const std::filesystem::path& path, const DatasetSplit& data);
DatasetSplit read_dataset(const std::filesystem::path& path);

void write_manifest(const std::filesystem::path& path, const DatasetSplit& data,
                    const GenerateOptions& options, const GenerateStats& stats);

}  // namespace topoforge::datagen
