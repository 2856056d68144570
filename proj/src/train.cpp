#include "topoforge/train.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

namespace topoforge::train {

using nlohmann::json;
using Clock = std::chrono::steady_clock;

namespace {

double since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::vector<DesignSpec> specs_of(const std::vector<Sample>& samples, std::size_t lo, std::size_t hi) {
  std::vector<DesignSpec> out;
  for (std::size_t i = lo; i < hi; ++i) out.push_back(samples[i].spec);
  return out;
}

nn::Tensor4 labels_of(const std::vector<const Sample*>& batch) {
  const int h = static_cast<int>(batch.front()->label.rows());
  const int w = static_cast<int>(batch.front()->label.cols());
  nn::Tensor4 t(static_cast<int>(batch.size()), 1, h, w);
  for (std::size_t n = 0; n < batch.size(); ++n) {
    for (int y = 0; y < h; ++y)
      for (int x = 0; x < w; ++x) t.at(static_cast<int>(n), 0, y, x) = static_cast<float>(batch[n]->label(y, x));
  }
  return t;
}

template <typename F>
void parallel_for(std::size_t n, unsigned workers, F&& body) {
  if (workers == 0) workers = std::max(1u, std::thread::hardware_concurrency());
  workers = static_cast<unsigned>(std::min<std::size_t>(workers, n));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) body(i);
    return;
  }
  std::atomic<std::size_t> next{0};
  std::exception_ptr error;
  std::mutex error_mutex;
  {
    std::vector<std::jthread> pool;
    for (unsigned t = 0; t < workers; ++t) {
      pool.emplace_back([&] {
        for (std::size_t i; (i = next++) < n;) {
          try {
            body(i);
          } catch (...) {
            std::lock_guard lock(error_mutex);
            if (!error) error = std::current_exception();
          }
        }
      });
    }
  }
  if (error) std::rethrow_exception(error);
}

}  // namespace

void TrainConfig::validate() const {
  if (batch < 1) throw ParameterError("batch size must be >= 1, got " + std::to_string(batch));
  if (epochs < 1) throw ParameterError("epochs must be >= 1, got " + std::to_string(epochs));
  if (!(lr > 0.0)) throw ParameterError("learning rate must be positive");
}

json TrainConfig::to_json() const {
  return {{"variant", net::to_string(variant)}, {"batch", batch}, {"epochs", epochs},
          {"lr", lr},           {"seed", seed},   {"target_train_mae", target_train_mae}};
}

TrainResult train(const datagen::DatasetSplit& data, const TrainConfig& config) {
  return train(data.train, data.validation, config);
}

TrainResult train(const std::vector<Sample>& train_set, const std::vector<Sample>& validation,
                  const TrainConfig& config) {
  config.validate();
  if (train_set.empty()) throw ParameterError("training set is empty");
  net::TopoNet<float> model({config.variant}, splitmix64(config.seed));
  nn::Adam<float> adam(model.parameters(), config.lr);

  TrainResult result;
  result.checkpoint = config.checkpoint;
  result.best_validation_mae = std::numeric_limits<double>::infinity();
  std::vector<std::size_t> order(train_set.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto t0 = Clock::now();
    Rng rng(splitmix64(config.seed ^ (0x51afd7ed558ccd00ULL + static_cast<std::uint64_t>(epoch))));
    for (std::size_t i = order.size(); i > 1; --i) std::swap(order[i - 1], order[rng.below(i)]);

    model.set_training(true);
    double loss_sum = 0.0;
    for (std::size_t lo = 0; lo < order.size(); lo += config.batch) {
      const std::size_t hi = std::min(order.size(), lo + config.batch);
      std::vector<const Sample*> batch;
      std::vector<DesignSpec> specs;
      for (std::size_t k = lo; k < hi; ++k) {
        batch.push_back(&train_set[order[k]]);
        specs.push_back(train_set[order[k]].spec);
      }
      adam.zero_grad();
      const nn::Tensor4 out = model.forward(net::make_input<float>(specs));
      const auto loss = nn::mae_loss(out, labels_of(batch));
      if (!std::isfinite(loss.loss)) {
        std::ostringstream msg;
        msg << "non-finite training loss (" << loss.loss << ") for variant " << net::to_string(config.variant)
            << " at epoch " << epoch << ", batch starting at " << lo << ", after " << adam.steps()
            << " optimizer steps";
        throw NumericalError(msg.str());
      }
      model.backward(loss.grad);
      adam.step();
      loss_sum += loss.loss * static_cast<double>(hi - lo);
    }

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_mae = loss_sum / static_cast<double>(order.size());
    rec.validation_mae = validation.empty() ? rec.train_mae : mean_absolute_error(model, validation, config.batch);
    rec.seconds = since(t0);
    result.curve.push_back(rec);

    const bool improved = validation.empty() || rec.validation_mae < result.best_validation_mae;
    if (improved) {
      result.best_epoch = epoch;
      result.best_validation_mae = rec.validation_mae;
      if (!config.checkpoint.empty()) {
        json meta = {{"best_epoch", epoch},
                     {"validation_mae", rec.validation_mae},
                     {"train_mae", rec.train_mae},
                     {"train", config.to_json()}};
        net::save_model(config.checkpoint, model, meta);
      }
    }
    if (config.progress) config.progress(rec);
    if (config.target_train_mae > 0.0 && rec.train_mae < config.target_train_mae) break;
  }
  return result;
}

double mean_absolute_error(net::TopoNet<float>& model, const std::vector<Sample>& samples, int batch) {
  if (samples.empty()) throw ParameterError("mean_absolute_error: no samples");
  const bool was_training = model.training();
  model.set_training(false);
  double total = 0.0;
  for (std::size_t lo = 0; lo < samples.size(); lo += batch) {
    const std::size_t hi = std::min(samples.size(), lo + static_cast<std::size_t>(batch));
    std::vector<const Sample*> ptrs;
    for (std::size_t k = lo; k < hi; ++k) ptrs.push_back(&samples[k]);
    const nn::Tensor4 out = model.forward(net::make_input<float>(specs_of(samples, lo, hi)));
    total += nn::mae_loss(out, labels_of(ptrs)).loss * static_cast<double>(hi - lo);
  }
  model.set_training(was_training);
  return total / static_cast<double>(samples.size());
}

void write_loss_csv(const std::filesystem::path& path, const TrainResult& result) {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "epoch,train_mae,validation_mae,seconds\n" << std::setprecision(17);
  for (const auto& r : result.curve) {
    out << r.epoch << ',' << r.train_mae << ',' << r.validation_mae << ',' << r.seconds << '\n';
  }
}

std::vector<EpochRecord> read_loss_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw FormatError("cannot open " + path.string());
  std::string line;
  std::getline(in, line);
  std::vector<EpochRecord> out;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    EpochRecord r;
    char c1, c2, c3;
    std::istringstream s(line);
    if (!(s >> r.epoch >> c1 >> r.train_mae >> c2 >> r.validation_mae >> c3 >> r.seconds)) {
      throw FormatError(path.string() + ": malformed row '" + line + "'");
    }
    out.push_back(r);
  }
  return out;
}

// ---- metrics

double compliance_of_output(const DesignSpec& spec, const Field& rho_pred, const fem::MaterialModel& material) {
  if (rho_pred.rows() != spec.mask.rows() || rho_pred.cols() != spec.mask.cols()) {
    throw ParameterError("compliance_of_output: prediction shape differs from the spec grid");
  }
  return simp::compliance_of(spec, rho_pred, material);
}

double relative_compliance_error(double predicted, double truth) {
  if (truth == 0.0) return predicted == 0.0 ? 0.0 : std::numeric_limits<double>::infinity();
  return std::abs(predicted - truth) / std::abs(truth) * 100.0;
}

double volume_error(const Field& rho, const simp::IntField& mask, double volfrac) {
  return std::abs(simp::design_volume(rho, mask) - volfrac) / volfrac * 100.0;
}

double max_density_in_void(const Field& rho, const simp::IntField& mask) {
  double m = 0.0;
  for (Eigen::Index i = 0; i < rho.size(); ++i) {
    if (mask.data()[i] == 0) m = std::max(m, rho.data()[i]);
  }
  return m;
}

RankSplit rank_split(std::vector<double> errors) {
  RankSplit r;
  if (errors.empty()) return r;
  std::sort(errors.begin(), errors.end());
  const std::size_t n = errors.size();
  r.top_count = (8 * n + 9) / 10;  // ceil(0.8 n) in integers
  double top = 0.0, bottom = 0.0;
  for (std::size_t i = 0; i < n; ++i) (i < r.top_count ? top : bottom) += errors[i];
  r.top80 = top / static_cast<double>(r.top_count);
  r.bottom20 = r.top_count < n ? bottom / static_cast<double>(n - r.top_count) : 0.0;
  return r;
}

double design_area_rate(const std::vector<double>& max_void_density, double t) {
  if (max_void_density.empty()) return 0.0;
  std::size_t ok = 0;
  for (double v : max_void_density) ok += v < t ? 1 : 0;
  return static_cast<double>(ok) / static_cast<double>(max_void_density.size());
}

const std::vector<double>& threshold_grid() {
  static const std::vector<double> grid{0.001, 0.002, 0.005, 0.01, 0.02, 0.05, 0.1, 0.2, 0.5, 1.0};
  return grid;
}

SampleRecord score_sample(const Sample& sample, const Field& prediction) {
  SampleRecord r;
  r.seed = sample.meta.seed;
  r.mae = (prediction - sample.label).abs().mean();
  r.compliance_pred = compliance_of_output(sample.spec, prediction);
  r.compliance_truth = sample.label_compliance;
  r.compliance_rel_error = relative_compliance_error(r.compliance_pred, r.compliance_truth);
  r.volume_error = volume_error(prediction, sample.spec.mask, sample.spec.volfrac);
  r.max_density_in_void = max_density_in_void(prediction, sample.spec.mask);
  return r;
}

EvalReport summarize(std::vector<SampleRecord> records, std::string variant, std::string checkpoint) {
  EvalReport rep;
  rep.variant = std::move(variant);
  rep.checkpoint = std::move(checkpoint);
  std::vector<double> errors, voids;
  double mae = 0.0, vol = 0.0;
  for (const auto& r : records) {
    errors.push_back(r.compliance_rel_error);
    voids.push_back(r.max_density_in_void);
    mae += r.mae;
    vol += r.volume_error;
  }
  const double n = std::max<double>(1.0, static_cast<double>(records.size()));
  rep.mae_mean = mae / n;
  rep.volume_error_mean = vol / n;
  const RankSplit split = rank_split(errors);
  rep.compliance_error_top80 = split.top80;
  rep.compliance_error_bottom20 = split.bottom20;
  for (double t : threshold_grid()) rep.design_area_rate.emplace_back(t, design_area_rate(voids, t));
  rep.records = std::move(records);
  return rep;
}

EvalReport evaluate(net::Predictor& predictor, const std::vector<Sample>& samples, unsigned workers) {
  if (samples.empty()) throw ParameterError("evaluate: no samples");
  std::vector<Field> predictions;
  constexpr std::size_t kBatch = 64;
  for (std::size_t lo = 0; lo < samples.size(); lo += kBatch) {
    const auto specs = specs_of(samples, lo, std::min(samples.size(), lo + kBatch));
    for (auto& f : predictor.predict_batch(specs)) predictions.push_back(std::move(f));
  }
  std::vector<SampleRecord> records(samples.size());
  parallel_for(samples.size(), workers, [&](std::size_t i) { records[i] = score_sample(samples[i], predictions[i]); });
  return summarize(std::move(records), net::to_string(predictor.net().config().variant));
}

double EvalReport::rate_at(double threshold) const {
  for (const auto& [t, r] : design_area_rate) {
    if (t == threshold) return r;
  }
  throw ParameterError("threshold " + std::to_string(threshold) + " is not on the report grid");
}

namespace {

// JSON has no infinity; an unbounded relative error (zero truth, nonzero prediction) is written as null.
json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

}  // namespace

json EvalReport::to_json() const {
  json rates = json::array();
  for (const auto& [t, r] : design_area_rate) rates.push_back({{"threshold", t}, {"rate", r}});
  json rows = json::array();
  for (const auto& r : records) {
    rows.push_back({{"seed", r.seed},
                    {"mae", r.mae},
                    {"compliance_pred", number_or_null(r.compliance_pred)},
                    {"compliance_truth", r.compliance_truth},
                    {"compliance_rel_error", number_or_null(r.compliance_rel_error)},
                    {"volume_error", r.volume_error},
                    {"max_density_in_void", r.max_density_in_void}});
  }
  return {{"format", "topoforge-eval-report"},
          {"version", 1},
          {"variant", variant},
          {"checkpoint", checkpoint},
          {"samples", records.size()},
          {"definitions",
           {{"compliance_rel_error", "|c_pred - c_truth| / c_truth * 100 (absolute value)"},
            {"volume_error", "|mean(pred over design area) - volfrac| / volfrac * 100"},
            {"max_density_in_void", "max raw predicted density over non-design cells"},
            {"top80", "mean of the ceil(0.8 n) smallest compliance errors"}}},
          {"aggregates",
           {{"mae_mean", mae_mean},
            {"compliance_error_top80", number_or_null(compliance_error_top80)},
            {"compliance_error_bottom20", number_or_null(compliance_error_bottom20)},
            {"volume_error_mean", volume_error_mean},
            {"design_area_rate", rates}}},
          {"records", rows}};
}

void EvalReport::write_json(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << to_json().dump(2) << '\n';
}

void EvalReport::write_csv(const std::filesystem::path& path) const {
  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << "seed,mae,compliance_pred,compliance_truth,compliance_rel_error,volume_error,max_density_in_void\n"
      << std::setprecision(10);
  for (const auto& r : records) {
    out << r.seed << ',' << r.mae << ',' << r.compliance_pred << ',' << r.compliance_truth << ','
        << r.compliance_rel_error << ',' << r.volume_error << ',' << r.max_density_in_void << '\n';
  }
}

const json& report_schema() {
  static const json schema = json::parse(R"({
  "$schema": "https://json-schema.org/draft/2020-12/schema",
  "title": "topoforge evaluation report",
  "type": "object",
  "required": ["format", "version", "variant", "checkpoint", "samples", "definitions", "aggregates", "records"],
  "properties": {
    "format": {"const": "topoforge-eval-report"},
    "version": {"const": 1},
    "variant": {"type": "string"},
    "checkpoint": {"type": "string"},
    "samples": {"type": "integer", "minimum": 0},
    "definitions": {"type": "object"},
    "aggregates": {
      "type": "object",
      "required": ["mae_mean", "compliance_error_top80", "compliance_error_bottom20",
                   "volume_error_mean", "design_area_rate"],
      "properties": {
        "mae_mean": {"type": "number", "minimum": 0},
        "compliance_error_top80": {"type": ["number", "null"]},
        "compliance_error_bottom20": {"type": ["number", "null"]},
        "volume_error_mean": {"type": "number", "minimum": 0},
        "design_area_rate": {
          "type": "array",
          "items": {
            "type": "object",
            "required": ["threshold", "rate"],
            "properties": {
              "threshold": {"type": "number", "exclusiveMinimum": 0},
              "rate": {"type": "number", "minimum": 0, "maximum": 1}
            }
          }
        }
      }
    },
    "records": {
      "type": "array",
      "items": {
        "type": "object",
        "required": ["seed", "mae", "compliance_pred", "compliance_truth", "compliance_rel_error",
                     "volume_error", "max_density_in_void"],
        "properties": {
          "seed": {"type": "integer", "minimum": 0},
          "mae": {"type": "number", "minimum": 0},
          "compliance_pred": {"type": ["number", "null"], "minimum": 0},
          "compliance_truth": {"type": "number", "minimum": 0},
          "compliance_rel_error": {"type": ["number", "null"], "minimum": 0},
          "volume_error": {"type": "number", "minimum": 0},
          "max_density_in_void": {"type": "number", "minimum": 0, "maximum": 1}
        }
      }
    }
  }
})");
  return schema;
}

namespace {

bool type_ok(const json& v, const json& type) {
  if (type.is_array()) {
    return std::any_of(type.begin(), type.end(), [&](const json& t) { return type_ok(v, t); });
  }
  const std::string t = type.get<std::string>();
  if (t == "object") return v.is_object();
  if (t == "array") return v.is_array();
  if (t == "string") return v.is_string();
  if (t == "integer") return v.is_number_integer();
  if (t == "number") return v.is_number();
  if (t == "null") return v.is_null();
  if (t == "boolean") return v.is_boolean();
  return false;
}

// Checks the subset of JSON Schema keywords used by report_schema().
std::string check_node(const json& v, const json& s, const std::string& where) {
  if (s.contains("const") && v != s["const"]) return where + ": expected " + s["const"].dump();
  if (s.contains("type") && !type_ok(v, s["type"])) return where + ": expected type " + s["type"].dump();
  if (v.is_number()) {
    const double x = v.get<double>();
    if (s.contains("minimum") && x < s["minimum"].get<double>()) return where + ": below minimum";
    if (s.contains("maximum") && x > s["maximum"].get<double>()) return where + ": above maximum";
    if (s.contains("exclusiveMinimum") && x <= s["exclusiveMinimum"].get<double>()) return where + ": not above minimum";
  }
  if (v.is_object()) {
    if (s.contains("required")) {
      for (const auto& k : s["required"]) {
        if (!v.contains(k.get<std::string>())) return where + ": missing '" + k.get<std::string>() + "'";
      }
    }
    if (s.contains("properties")) {
      for (const auto& [k, sub] : s["properties"].items()) {
        if (v.contains(k)) {
          if (auto e = check_node(v[k], sub, where + "." + k); !e.empty()) return e;
        }
      }
    }
  }
  if (v.is_array() && s.contains("items")) {
    for (std::size_t i = 0; i < v.size(); ++i) {
      if (auto e = check_node(v[i], s["items"], where + "[" + std::to_string(i) + "]"); !e.empty()) return e;
    }
  }
  return {};
}

}  // namespace

std::string check_report(const json& j) { return check_node(j, report_schema(), "$"); }

// ---- timing

json TimingReport::to_json() const {
  return {{"cases", cases},
          {"simp_mean_ms", simp_mean_seconds * 1e3},
          {"cnn_mean_ms", cnn_mean_seconds * 1e3},
          {"reduction_percent", reduction_percent()},
          {"hardware", hardware}};
}

TimingReport bench_timing(const std::vector<DesignSpec>& specs, net::Predictor& predictor,
                          const simp::SimpConfig& simp_config) {
  if (specs.empty()) throw ParameterError("bench_timing: no specs");
  TimingReport rep;
  rep.cases = specs.size();
  rep.hardware = hardware_descriptor();
  predictor.predict(specs.front());  // warm-up allocations
  double simp_total = 0.0, cnn_total = 0.0;
  for (const auto& s : specs) {
    auto t0 = Clock::now();
    simp::optimize(s, simp_config);
    simp_total += since(t0);
    t0 = Clock::now();
    predictor.predict(s);
    cnn_total += since(t0);
  }
  rep.simp_mean_seconds = simp_total / static_cast<double>(specs.size());
  rep.cnn_mean_seconds = cnn_total / static_cast<double>(specs.size());
  return rep;
}

std::string hardware_descriptor() {
  std::string model = "unknown cpu";
  std::ifstream cpu("/proc/cpuinfo");
  for (std::string line; std::getline(cpu, line);) {
    if (line.rfind("model name", 0) == 0) {
      model = line.substr(line.find(':') + 2);
      break;
    }
  }
  return model + ", " + std::to_string(std::thread::hardware_concurrency()) +
         " hardware threads, single-threaded measurement";
}

// ---- plots

namespace {

std::string esc(const std::string& s) {
  std::string o;
  for (char c : s) {
    if (c == '<') o += "&lt;";
    else if (c == '>') o += "&gt;";
    else if (c == '&') o += "&amp;";
    else o += c;
  }
  return o;
}

}  // namespace

void write_svg_chart(const std::filesystem::path& path, const std::string& title, const std::string& xlabel,
                     const std::string& ylabel, const std::vector<Series>& series, bool log_x) {
  constexpr double W = 640, H = 400, L = 70, R = 150, T = 40, B = 50;
  auto fx = [&](double x) { return log_x ? std::log10(x) : x; };
  double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!std::isfinite(s.y[i])) continue;
      x0 = std::min(x0, fx(s.x[i]));
      x1 = std::max(x1, fx(s.x[i]));
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x0 > x1) x0 = 0, x1 = 1, y0 = 0, y1 = 1;
  if (x1 == x0) x1 = x0 + 1;
  if (y1 == y0) y1 = y0 + 1;
  y0 = std::min(y0, 0.0);
  auto px = [&](double x) { return L + (fx(x) - x0) / (x1 - x0) * (W - L - R); };
  auto py = [&](double y) { return H - B - (y - y0) / (y1 - y0) * (H - T - B); };
  static const char* colors[] = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"};

  std::ofstream out(path);
  if (!out) throw FormatError("cannot write " + path.string());
  out << std::setprecision(6);
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H
      << "\" font-family=\"sans-serif\" font-size=\"12\">\n"
      << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
      << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << esc(title) << "</text>\n"
      << "<line x1=\"" << L << "\" y1=\"" << H - B << "\" x2=\"" << W - R << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n"
      << "<line x1=\"" << L << "\" y1=\"" << T << "\" x2=\"" << L << "\" y2=\"" << H - B << "\" stroke=\"black\"/>\n";
  for (int k = 0; k <= 4; ++k) {
    const double yv = y0 + (y1 - y0) * k / 4.0;
    const double xv = x0 + (x1 - x0) * k / 4.0;
    out << "<text x=\"" << L - 6 << "\" y=\"" << py(yv) + 4 << "\" text-anchor=\"end\">" << yv << "</text>\n";
    const double xl = log_x ? std::pow(10.0, xv) : xv;
    out << "<text x=\"" << L + (xv - x0) / (x1 - x0) * (W - L - R) << "\" y=\"" << H - B + 16
        << "\" text-anchor=\"middle\">" << xl << "</text>\n";
  }
  out << "<text x=\"" << (L + W - R) / 2 << "\" y=\"" << H - 12 << "\" text-anchor=\"middle\">" << esc(xlabel)
      << "</text>\n"
      << "<text transform=\"translate(16," << (T + H - B) / 2 << ") rotate(-90)\" text-anchor=\"middle\">"
      << esc(ylabel) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* c = colors[k % 6];
    out << "<polyline fill=\"none\" stroke=\"" << c << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (std::isfinite(s.y[i])) out << px(s.x[i]) << ',' << py(s.y[i]) << ' ';
    }
    out << "\"/>\n<text x=\"" << W - R + 10 << "\" y=\"" << T + 16 * (k + 1) << "\" fill=\"" << c << "\">"
        << esc(s.label) << "</text>\n";
  }
  out << "</svg>\n";
}

}  // namespace topoforge::train
