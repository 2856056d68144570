#include "topoforge/service.hpp"

#include <algorithm>
#include <cmath>

#include "httplib.h"
#include "topoforge/errors.hpp"
#include "topoforge/net.hpp"
#include "topoforge/train.hpp"

namespace topoforge::service {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

// Threshold at which a CNN void density is worth flagging to the user.
constexpr double kVoidWarning = 0.01;

simp::IntField int_grid(const json& j, const std::string& field) {
  if (!j.contains(field)) throw RequestError{400, field, "missing"};
  const json& rows = j[field];
  if (!rows.is_array() || rows.size() != kGrid) {
    throw RequestError{400, field, "must be an array of " + std::to_string(kGrid) + " rows"};
  }
  simp::IntField out(kGrid, kGrid);
  for (int y = 0; y < kGrid; ++y) {
    const json& row = rows[y];
    if (!row.is_array() || row.size() != kGrid) {
      throw RequestError{400, field, "row " + std::to_string(y) + " must hold " + std::to_string(kGrid) + " entries"};
    }
    for (int x = 0; x < kGrid; ++x) {
      const json& v = row[x];
      if (!v.is_number()) throw RequestError{400, field, "non-numeric entry at [" + std::to_string(y) + "][" + std::to_string(x) + "]"};
      const double d = v.get<double>();
      if (d != std::floor(d) || std::abs(d) > 1e6) {
        throw RequestError{400, field, "entry at [" + std::to_string(y) + "][" + std::to_string(x) + "] is not a small integer"};
      }
      out(y, x) = static_cast<int>(d);
    }
  }
  return out;
}

}  // namespace

json field_json(const simp::Field& f) {
  json rows = json::array();
  for (Eigen::Index y = 0; y < f.rows(); ++y) {
    json row = json::array();
    for (Eigen::Index x = 0; x < f.cols(); ++x) row.push_back(f(y, x));
    rows.push_back(std::move(row));
  }
  return rows;
}

namespace {

ApiResponse error_response(const RequestError& e) {
  json body = {{"error", e.message}};
  if (!e.field.empty()) body["field"] = e.field;
  return {e.status, body};
}

double since_ms(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - t0).count();
}

bool valid_id(const std::string& id) {
  if (id.empty() || id.size() > 200 || id.front() == '.') return false;
  return std::all_of(id.begin(), id.end(),
                     [](char c) { return std::isalnum(static_cast<unsigned char>(c)) || c == '-' || c == '_' || c == '.'; });
}

}  // namespace

simp::DesignSpec parse_spec(const json& j) {
  if (!j.is_object()) throw RequestError{400, "body", "request must be a JSON object"};
  simp::DesignSpec spec;
  spec.mask = int_grid(j, "mask");
  spec.fx = int_grid(j, "fx");
  spec.fy = int_grid(j, "fy");
  if (!j.contains("volfrac") || !j["volfrac"].is_number()) throw RequestError{400, "volfrac", "must be a number"};
  spec.volfrac = j["volfrac"].get<double>();
  try {
    spec.validate();
  } catch (const ParameterError& e) {
    // Messages are "<field>: <reason>".
    const std::string msg = e.what();
    const auto colon = msg.find(':');
    throw RequestError{400, colon == std::string::npos ? "spec" : msg.substr(0, colon), msg};
  }
  return spec;
}

json spec_json(const simp::DesignSpec& spec) {
  auto grid = [](const simp::IntField& f) {
    json rows = json::array();
    for (Eigen::Index y = 0; y < f.rows(); ++y) {
      json row = json::array();
      for (Eigen::Index x = 0; x < f.cols(); ++x) row.push_back(f(y, x));
      rows.push_back(std::move(row));
    }
    return rows;
  };
  return {{"mask", grid(spec.mask)}, {"fx", grid(spec.fx)}, {"fy", grid(spec.fy)}, {"volfrac", spec.volfrac}};
}

OptimizeRequest parse_optimize_request(const json& j) {
  OptimizeRequest r;
  r.spec = parse_spec(j);
  if (!j.contains("engine") || !j["engine"].is_string()) throw RequestError{400, "engine", "must be \"simp\" or \"cnn\""};
  r.engine = j["engine"].get<std::string>();
  if (r.engine != "simp" && r.engine != "cnn") {
    throw RequestError{400, "engine", "unknown engine '" + r.engine + "'; expected \"simp\" or \"cnn\""};
  }
  if (r.engine == "cnn") {
    if (!j.contains("checkpoint") || !j["checkpoint"].is_string()) {
      throw RequestError{400, "checkpoint", "cnn engine needs a checkpoint id (see GET /api/checkpoints)"};
    }
    r.checkpoint = j["checkpoint"].get<std::string>();
    if (!valid_id(r.checkpoint)) throw RequestError{400, "checkpoint", "malformed checkpoint id"};
  }
  return r;
}

Service::Service(fs::path checkpoint_dir, simp::SimpConfig simp)
    : dir_(std::move(checkpoint_dir)), simp_(simp), started_(std::chrono::steady_clock::now()) {
  simp_.validate();
}

fs::path Service::resolve_checkpoint(const std::string& id) const {
  const fs::path p = dir_ / id;
  if (!fs::is_regular_file(p) || !fs::is_regular_file(p.string() + ".json")) {
    throw RequestError{404, "checkpoint", "unknown checkpoint '" + id + "'"};
  }
  return p;
}

ApiResponse Service::optimize(const json& request) const {
  try {
    const OptimizeRequest req = parse_optimize_request(request);
    const auto t0 = std::chrono::steady_clock::now();
    json warnings = json::array();
    simp::Field density;
    double compliance = 0.0;
    if (req.engine == "simp") {
      const simp::SimpResult res = simp::optimize(req.spec, simp_);
      density = res.rho;
      compliance = res.compliance;
      if (!res.converged) {
        warnings.push_back("SIMP stopped at the iteration limit (" + std::to_string(res.iterations) +
                           ") before converging");
      }
    } else {
      const fs::path ckpt = resolve_checkpoint(req.checkpoint);
      net::Predictor predictor(ckpt);  // one engine per request
      density = predictor.predict(req.spec).density;
      compliance = train::compliance_of_output(req.spec, density);
      const double void_max = train::max_density_in_void(density, req.spec.mask);
      if (void_max >= kVoidWarning) {
        warnings.push_back("max density in the non-design area is " + std::to_string(void_max) +
                           " (threshold " + std::to_string(kVoidWarning) + ")");
      }
    }
    const double elapsed = std::max(since_ms(t0), 1e-6);
    return {200,
            {{"density", field_json(density)},
             {"compliance", compliance},
             {"volume", simp::design_volume(density, req.spec.mask)},
             {"elapsed_ms", elapsed},
             {"engine", req.engine},
             {"warnings", warnings}}};
  } catch (const RequestError& e) {
    return error_response(e);
  } catch (const LoadError& e) {
    return error_response({500, "checkpoint", e.what()});
  } catch (const FormatError& e) {
    return error_response({500, "checkpoint", e.what()});
  } catch (const std::exception& e) {
    return error_response({500, "", std::string("solver failure: ") + e.what()});
  }
}

ApiResponse Service::optimize_text(const std::string& body) const {
  json j;
  try {
    j = json::parse(body);
  } catch (const json::parse_error& e) {
    return error_response({400, "body", std::string("malformed JSON: ") + e.what()});
  }
  return optimize(j);
}

ApiResponse Service::checkpoints() const {
  json list = json::array();
  std::error_code ec;
  if (fs::is_directory(dir_, ec)) {
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir_, ec)) {
      if (entry.is_regular_file() && entry.path().extension() == ".ckpt") files.push_back(entry.path());
    }
    std::sort(files.begin(), files.end());
    for (const auto& p : files) {
      try {
        const json meta = net::read_model_meta(p);
        json item = {{"id", p.filename().string()},
                     {"variant", meta.at("architecture").at("variant")},
                     {"validation_mae", meta.value("validation_mae", json(nullptr))},
                     {"best_epoch", meta.value("best_epoch", json(nullptr))},
                     {"trainable_parameters", meta.value("trainable_parameters", json(nullptr))}};
        list.push_back(std::move(item));
      } catch (const std::exception&) {
        // Files without a readable sidecar are not served.
      }
    }
  }
  return {200, {{"checkpoints", list}}};
}

ApiResponse Service::health() const {
  const double uptime = std::chrono::duration<double>(std::chrono::steady_clock::now() - started_).count();
  return {200, {{"status", "ok"}, {"version", kVersion}, {"uptime_seconds", uptime}}};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(const Service& service) : impl_(std::make_unique<Impl>()) {
  auto& server = impl_->server;
  server.new_task_queue = [] { return new httplib::ThreadPool(16); };
  auto send = [](httplib::Response& res, const ApiResponse& r) {
    res.status = r.status;
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_content(r.body.dump(), "application/json");
  };
  server.Post("/api/optimize", [&service, send](const httplib::Request& req, httplib::Response& res) {
    send(res, service.optimize_text(req.body));
  });
  server.Get("/api/checkpoints",
             [&service, send](const httplib::Request&, httplib::Response& res) { send(res, service.checkpoints()); });
  server.Get("/api/health",
             [&service, send](const httplib::Request&, httplib::Response& res) { send(res, service.health()); });
  server.Options(R"(/api/.*)", [](const httplib::Request&, httplib::Response& res) {
    res.set_header("Access-Control-Allow-Origin", "*");
    res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
    res.status = 204;
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int p = impl_->server.bind_to_any_port(host);
    if (p <= 0) throw std::runtime_error("cannot bind " + host);
    return p;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw std::runtime_error("cannot bind " + host + ":" + std::to_string(port));
  }
  return port;
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  if (impl_) impl_->server.stop();
}

}  // namespace topoforge::service
