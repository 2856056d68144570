#pragma once

// Training loop, evaluation metrics and timing comparison.

#include <cstdint>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "topoforge/datagen.hpp"
#include "topoforge/net.hpp"

namespace topoforge::train {

using datagen::Sample;
using simp::DesignSpec;
using simp::Field;

struct EpochRecord {
  int epoch = 0;  ///< 1-based
  double train_mae = 0.0;
  double validation_mae = 0.0;
  double seconds = 0.0;
};

struct TrainConfig {
  net::Variant variant = net::Variant::proposed;
  int batch = 64;
  int epochs = 100;
  double lr = 0.01;
  std::uint64_t seed = 1;
  double target_train_mae = 0.0;     ///< stop early once an epoch's training MAE is below this (0 = off)
  std::filesystem::path checkpoint;  ///< best-validation model is written here
  std::function<void(const EpochRecord&)> progress;

  void validate() const;
  nlohmann::json to_json() const;
};

struct TrainResult {
  std::vector<EpochRecord> curve;
  int best_epoch = 0;
  double best_validation_mae = 0.0;
  std::filesystem::path checkpoint;
};

/// Trains on data.train, selects on data.validation. Throws NumericalError on a non-finite loss.
TrainResult train(const datagen::DatasetSplit& data, const TrainConfig& config);

/// Training on an explicit list; validation may be empty (then the latest epoch is kept).
TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& validation,
                  const TrainConfig& config);

/// Eval-mode mean absolute error of the network over samples.
double mean_absolute_error(net::TopoNet<float>& model, const std::vector<Sample>& samples, int batch = 64);

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result);
std::vector<EpochRecord> read_loss_csv(const std::filesystem::path& path);

// ---- metrics

/// FEM compliance of a predicted field under the spec's loads (raw densities, SIMP interpolation).
double compliance_of_output(const DesignSpec& spec, const Field& rho_pred,
                            const fem::MaterialModel& material = {});

/// |c_pred - c_truth| / c_truth * 100; zero when both are zero.
double relative_compliance_error(double predicted, double truth);

/// |mean(rho over mask-1) - volfrac| / volfrac * 100.
double volume_error(const Field& rho, const simp::IntField& mask, double volfrac);

/// Largest density on mask-0 cells; 0 when there is no void.
double max_density_in_void(const Field& rho, const simp::IntField& mask);

struct RankSplit {
  std::size_t top_count = 0;
  double top80 = 0.0;     ///< mean of the ceil(0.8 n) smallest errors
  double bottom20 = 0.0;  ///< mean of the rest; 0 when empty
};
RankSplit rank_split(std::vector<double> errors);

/// Fraction of samples whose max void density is below t.
double design_area_rate(const std::vector<double>& max_void_density, double t);

/// Threshold grid of the design-area sweep.
const std::vector<double>& threshold_grid();

struct SampleRecord {
  std::uint64_t seed = 0;
  double mae = 0.0;
  double compliance_pred = 0.0;
  double compliance_truth = 0.0;
  double compliance_rel_error = 0.0;
  double volume_error = 0.0;
  double max_density_in_void = 0.0;
};

struct EvalReport {
  std::string variant;
  std::string checkpoint;
  std::vector<SampleRecord> records;
  double mae_mean = 0.0;
  double compliance_error_top80 = 0.0;
  double compliance_error_bottom20 = 0.0;
  double volume_error_mean = 0.0;
  std::vector<std::pair<double, double>> design_area_rate;  ///< (threshold, rate)

  double rate_at(double threshold) const;
  nlohmann::json to_json() const;
  void write_json(const std::filesystem::path& path) const;
  void write_csv(const std::filesystem::path& path) const;
};

/// Aggregates per-sample records into a report.
EvalReport summarize(std::vector<SampleRecord> records, std::string variant = {}, std::string checkpoint = {});

/// Record for one prediction against its labelled sample.
SampleRecord score_sample(const Sample& sample, const Field& prediction);

/// Predicts every sample, then scores them (FEM work spread over `workers`; 0 = all cores).
EvalReport evaluate(net::Predictor& predictor, const std::vector<Sample>& samples, unsigned workers = 0);

/// JSON schema of EvalReport::to_json().
const nlohmann::json& report_schema();

/// Returns an empty string when j conforms to report_schema(), else the first violation.
std::string check_report(const nlohmann::json& j);

// ---- timing

struct TimingReport {
  std::size_t cases = 0;
  double simp_mean_seconds = 0.0;
  double cnn_mean_seconds = 0.0;
  std::string hardware;

  double reduction_percent() const { return 100.0 * (1.0 - cnn_mean_seconds / simp_mean_seconds); }
  nlohmann::json to_json() const;
};

/// Mean single-threaded wall clock per case of SIMP optimize() and CNN predict().
TimingReport bench_timing(const std::vector<DesignSpec>& specs, net::Predictor& predictor,
                          const simp::SimpConfig& simp_config = {});

std::string hardware_descriptor();

// ---- plots

struct Series {
  std::string label;
  std::vector<double> x, y;
};

/// Minimal line chart written as standalone SVG.
void write_svg_chart(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<Series>& series, bool log_x = false);

}  // namespace topoforge::train
