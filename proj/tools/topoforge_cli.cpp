// topoforge command line: generate, train, evaluate, bench, predict, serve.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <optional>

#include "CLI11.hpp"
#include "topoforge/datagen.hpp"
#include "topoforge/errors.hpp"
#include "topoforge/net.hpp"
#include "topoforge/service.hpp"
#include "topoforge/train.hpp"

namespace fs = std::filesystem;
using namespace topoforge;
using nlohmann::json;

namespace {

fs::path data_dir() {
  const char* env = std::getenv("TOPOFORGE_DATA_DIR");
  return env && *env ? fs::path(env) : fs::path("topoforge-data");
}

void ensure_parent(const fs::path& p) {
  if (p.has_parent_path()) fs::create_directories(p.parent_path());
}

fs::path with_suffix(const fs::path& p, const std::string& suffix) { return fs::path(p.string() + suffix); }

std::vector<std::string> variant_names() { return {"proposed", "proposed-no-bn", "yu-baseline"}; }

// Mean of the smallest p% of errors, p = 5, 10, ..., 100.
train::Series ranked_curve(std::vector<double> errors, const std::string& label) {
  train::Series s{label, {}, {}};
  std::sort(errors.begin(), errors.end());
  for (int p = 5; p <= 100; p += 5) {
    const std::size_t k = std::max<std::size_t>(1, (errors.size() * p + 99) / 100);
    double sum = 0.0;
    for (std::size_t i = 0; i < k; ++i) sum += errors[i];
    s.x.push_back(p);
    s.y.push_back(sum / static_cast<double>(k));
  }
  return s;
}

int cmd_generate(std::size_t n, std::uint64_t seed, fs::path out, unsigned workers) {
  datagen::GenerateOptions opt;
  opt.workers = workers;
  opt.progress = [](std::size_t done, std::size_t total) {
    if (done % 100 == 0 || done == total) std::cerr << "\rgenerated " << done << "/" << total << std::flush;
  };
  datagen::GenerateStats stats;
  const auto data = datagen::generate(n, seed, opt, &stats);
  std::cerr << "\n";
  ensure_parent(out);
  datagen::write_dataset(out, data);
  datagen::write_manifest(with_suffix(out, ".json"), data, opt, stats);
  std::cout << "wrote " << out.string() << ": " << data.train.size() << " train, " << data.validation.size()
            << " validation, " << data.test.size() << " test; mean SIMP iterations " << std::setprecision(4)
            << stats.mean_iterations << ", " << stats.non_converged << " hit the iteration cap\n";
  return 0;
}

int cmd_train(const fs::path& data_path, train::TrainConfig cfg) {
  const auto data = datagen::read_dataset(data_path);
  ensure_parent(cfg.checkpoint);
  cfg.progress = [](const train::EpochRecord& r) {
    std::cout << "epoch " << std::setw(3) << r.epoch << "  train MAE " << std::fixed << std::setprecision(5)
              << r.train_mae << "  validation MAE " << r.validation_mae << "  (" << std::setprecision(1)
              << r.seconds << " s)\n"
              << std::defaultfloat << std::setprecision(6) << std::flush;
  };
  const auto result = train::train(data, cfg);
  const fs::path csv = with_suffix(cfg.checkpoint, ".loss.csv");
  train::write_loss_csv(csv, result);
  train::Series tr{"training", {}, {}}, va{"validation", {}, {}};
  for (const auto& r : result.curve) {
    tr.x.push_back(r.epoch);
    tr.y.push_back(r.train_mae);
    va.x.push_back(r.epoch);
    va.y.push_back(r.validation_mae);
  }
  train::write_svg_chart(with_suffix(cfg.checkpoint, ".loss.svg"), "Loss curves (" + net::to_string(cfg.variant) + ")",
                         "epoch", "MAE", {tr, va});
  std::cout << "best validation MAE " << result.best_validation_mae << " at epoch " << result.best_epoch << "; "
            << cfg.checkpoint.string() << ", " << csv.string() << "\n";
  return 0;
}

int cmd_evaluate(const fs::path& data_path, const fs::path& ckpt, fs::path report, unsigned workers) {
  const auto data = datagen::read_dataset(data_path);
  if (data.test.empty()) throw ParameterError(data_path.string() + " has an empty test split");
  net::Predictor predictor(ckpt);
  train::EvalReport rep = train::evaluate(predictor, data.test, workers);
  rep.checkpoint = ckpt.string();
  if (report.empty()) report = data_dir() / "reports" / (rep.variant + ".json");
  ensure_parent(report);
  rep.write_json(report);
  rep.write_csv(fs::path(report).replace_extension(".csv"));

  std::vector<double> errors;
  for (const auto& r : rep.records) errors.push_back(r.compliance_rel_error);
  train::write_svg_chart(fs::path(report).replace_extension(".rank.svg"), "Compliance error by rank", "top % of samples",
                         "mean compliance error (%)", {ranked_curve(errors, rep.variant)});
  train::Series sweep{rep.variant, {}, {}};
  for (const auto& [t, r] : rep.design_area_rate) {
    sweep.x.push_back(t);
    sweep.y.push_back(100.0 * r);
  }
  train::write_svg_chart(fs::path(report).replace_extension(".threshold.svg"), "Design-area satisfaction",
                         "threshold", "rate (%)", {sweep}, true);

  std::cout << std::setprecision(4) << rep.variant << " on " << rep.records.size() << " test samples\n"
            << "  MAE                         " << rep.mae_mean << "\n"
            << "  compliance error top 80%    " << rep.compliance_error_top80 << " %\n"
            << "  compliance error bottom 20% " << rep.compliance_error_bottom20 << " %\n"
            << "  volume error                " << rep.volume_error_mean << " %\n"
            << "  design-area rate @0.01      " << 100.0 * rep.rate_at(0.01) << " %\n"
            << "  design-area rate @0.05      " << 100.0 * rep.rate_at(0.05) << " %\n"
            << "report: " << report.string() << "\n";
  return 0;
}

int cmd_bench(std::size_t n, std::uint64_t seed, const fs::path& ckpt, const fs::path& report) {
  Rng rng(seed);
  std::vector<simp::DesignSpec> specs;
  for (std::size_t i = 0; i < n; ++i) specs.push_back(datagen::sample_spec(rng));
  net::Predictor predictor(ckpt);
  const auto t = train::bench_timing(specs, predictor);
  std::cout << std::fixed << std::setprecision(3) << "engine   mean ms/case  (" << t.cases << " cases)\n"
            << "simp     " << std::setw(10) << t.simp_mean_seconds * 1e3 << "\n"
            << "cnn      " << std::setw(10) << t.cnn_mean_seconds * 1e3 << "\n"
            << "reduction " << std::setprecision(1) << t.reduction_percent() << " %\n"
            << "hardware: " << t.hardware << "\n";
  if (!report.empty()) {
    ensure_parent(report);
    std::ofstream(report) << t.to_json().dump(2) << "\n";
  }
  return 0;
}

int cmd_predict(const fs::path& ckpt, const fs::path& spec_path, const fs::path& data_path, std::size_t index,
                const fs::path& out) {
  simp::DesignSpec spec;
  if (!spec_path.empty()) {
    std::ifstream in(spec_path);
    if (!in) throw FormatError("cannot open " + spec_path.string());
    try {
      spec = service::parse_spec(json::parse(in));
    } catch (const service::RequestError& e) {
      throw ParameterError(spec_path.string() + ": " + e.field + ": " + e.message);
    }
  } else {
    const auto data = datagen::read_dataset(data_path);
    if (index >= data.test.size()) throw ParameterError("--index beyond the test split");
    spec = data.test[index].spec;
  }
  net::Predictor predictor(ckpt);
  const auto p = predictor.predict(spec);
  const json result = {{"density", service::field_json(p.density)},
                       {"compliance", train::compliance_of_output(spec, p.density)},
                       {"volume", simp::design_volume(p.density, spec.mask)},
                       {"max_density_in_void", train::max_density_in_void(p.density, spec.mask)},
                       {"elapsed_ms", p.seconds * 1e3}};
  if (out.empty()) {
    std::cout << result.dump() << "\n";
  } else {
    ensure_parent(out);
    std::ofstream(out) << result.dump() << "\n";
  }
  return 0;
}

int cmd_serve(const fs::path& ckpt_dir, const std::string& bind, int port) {
  const service::Service svc(ckpt_dir);
  service::HttpServer server(svc);
  const int bound = server.bind(bind, port);
  std::cerr << "topoforge " << service::kVersion << " on http://" << bind << ":" << bound << " (checkpoints in "
            << ckpt_dir.string() << ")\n";
  server.run();
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Topology optimization: SIMP ground truth and CNN surrogate"};
  app.require_subcommand(1);

  std::size_t n = 0;
  std::uint64_t seed = 1;
  std::string out, data, ckpt, variant = "proposed", report, bind = "127.0.0.1", spec;
  int epochs = 100, batch = 64, port = 8080;
  double lr = 0.01;
  unsigned workers = 0;
  std::size_t index = 0;

  auto* gen = app.add_subcommand("generate", "SIMP-labelled dataset");
  gen->add_option("--n", n, "number of samples")->required()->check(CLI::PositiveNumber);
  gen->add_option("--seed", seed, "dataset seed");
  gen->add_option("--out", out, "dataset file (default $TOPOFORGE_DATA_DIR/dataset.bin)");
  gen->add_option("--workers", workers, "threads (0 = all cores)");

  auto* tr = app.add_subcommand("train", "train one architecture variant");
  tr->add_option("--data", data, "dataset file");
  tr->add_option("--variant", variant)->check(CLI::IsMember(variant_names()));
  tr->add_option("--epochs", epochs)->check(CLI::PositiveNumber);
  tr->add_option("--batch", batch)->check(CLI::PositiveNumber);
  tr->add_option("--lr", lr)->check(CLI::PositiveNumber);
  tr->add_option("--seed", seed);
  tr->add_option("--ckpt", ckpt, "output checkpoint (default $TOPOFORGE_DATA_DIR/checkpoints/<variant>.ckpt)");

  auto* ev = app.add_subcommand("evaluate", "score a checkpoint on the test split");
  ev->add_option("--data", data, "dataset file");
  ev->add_option("--ckpt", ckpt, "checkpoint")->required();
  ev->add_option("--report", report, "report JSON (CSV and SVG written alongside)");
  ev->add_option("--workers", workers, "threads for FEM scoring (0 = all cores)");

  auto* be = app.add_subcommand("bench", "SIMP vs CNN wall clock per case");
  be->add_option("--n", n, "number of random specs")->check(CLI::PositiveNumber);
  be->add_option("--seed", seed);
  be->add_option("--ckpt", ckpt, "checkpoint")->required();
  be->add_option("--report", report, "timing JSON");

  auto* pr = app.add_subcommand("predict", "CNN density for one spec");
  pr->add_option("--ckpt", ckpt, "checkpoint")->required();
  auto* spec_opt = pr->add_option("--spec", spec, "spec JSON (mask, fx, fy, volfrac)");
  pr->add_option("--data", data, "dataset file; predicts test sample --index")->excludes(spec_opt);
  pr->add_option("--index", index);
  pr->add_option("--out", out, "output JSON (default stdout)");

  auto* sv = app.add_subcommand("serve", "HTTP API");
  sv->add_option("--bind", bind, "address (default 127.0.0.1)");
  sv->add_option("--port", port)->check(CLI::Range(0, 65535));
  sv->add_option("--ckpt", ckpt, "checkpoint directory (default $TOPOFORGE_DATA_DIR/checkpoints)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : 2;
  }

  const fs::path dir = data_dir();
  const fs::path data_path = data.empty() ? dir / "dataset.bin" : fs::path(data);
  try {
    if (*gen) return cmd_generate(n, seed, out.empty() ? dir / "dataset.bin" : fs::path(out), workers);
    if (*tr) {
      train::TrainConfig cfg;
      cfg.variant = net::parse_variant(variant);
      cfg.epochs = epochs;
      cfg.batch = batch;
      cfg.lr = lr;
      cfg.seed = seed;
      cfg.checkpoint = ckpt.empty() ? dir / "checkpoints" / (variant + ".ckpt") : fs::path(ckpt);
      return cmd_train(data_path, cfg);
    }
    if (*ev) return cmd_evaluate(data_path, ckpt, report, workers);
    if (*be) return cmd_bench(n == 0 ? 100 : n, seed, ckpt, report);
    if (*pr) {
      if (spec.empty() && data.empty()) throw ParameterError("predict needs --spec or --data");
      return cmd_predict(ckpt, spec, data_path, index, out);
    }
    if (*sv) return cmd_serve(ckpt.empty() ? dir / "checkpoints" : fs::path(ckpt), bind, port);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
