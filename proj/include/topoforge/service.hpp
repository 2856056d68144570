#pragma once

// HTTP surface for both engines. Handlers are plain functions of JSON so they
// can be exercised without a socket; HttpServer wires them into httplib.

#include <chrono>
#include <filesystem>
#include <memory>
#include <string>

#include "json.hpp"
#include "topoforge/simp.hpp"

namespace topoforge::service {

inline constexpr const char* kVersion = "1.0.0";
inline constexpr int kGrid = 32;

struct ApiResponse {
  int status = 200;
  nlohmann::json body;
};

/// A rejected request: which field, and why.
struct RequestError {
  int status = 400;
  std::string field;
  std::string message;
};

struct OptimizeRequest {
  simp::DesignSpec spec;
  std::string engine;      ///< "simp" or "cnn"
  std::string checkpoint;  ///< registry id, cnn only
};

/// mask/fx/fy/volfrac of a request; row-major 32x32 arrays. Throws RequestError.
simp::DesignSpec parse_spec(const nlohmann::json& j);
nlohmann::json spec_json(const simp::DesignSpec& spec);
nlohmann::json field_json(const simp::Field& f);

/// Parses and validates the wire format. Throws RequestError naming the offending field.
OptimizeRequest parse_optimize_request(const nlohmann::json& j);

class Service {
 public:
  /// checkpoint_dir holds *.ckpt files with their .json sidecars. It may not exist yet.
  explicit Service(std::filesystem::path checkpoint_dir, simp::SimpConfig simp = {});

  ApiResponse optimize(const nlohmann::json& request) const;
  ApiResponse optimize_text(const std::string& body) const;  ///< also handles malformed JSON
  ApiResponse checkpoints() const;
  ApiResponse health() const;

  const std::filesystem::path& checkpoint_dir() const { return dir_; }

 private:
  std::filesystem::path resolve_checkpoint(const std::string& id) const;

  std::filesystem::path dir_;
  simp::SimpConfig simp_;
  std::chrono::steady_clock::time_point started_;
};

/// httplib front end. Requests are handled on a worker pool, so a long SIMP
/// run does not hold up other requests.
class HttpServer {
 public:
  explicit HttpServer(const Service& service);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  /// Returns the bound port; port 0 picks a free one. Throws on failure.
  int bind(const std::string& host, int port);
  void run();   ///< blocks until stop()
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace topoforge::service
