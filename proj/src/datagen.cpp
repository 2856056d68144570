#include "topoforge/datagen.hpp"

#include <algorithm>
#include <array>
#include <atomic>
#include <bit>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <mutex>
#include <sstream>
#include <thread>

#include "json.hpp"
#include "binary_io.hpp"
#include "topoforge/errors.hpp"

namespace topoforge::datagen {

IntField rasterize_void(const Circle& c, int nely, int nelx) {
  IntField mask = IntField::Ones(nely, nelx);
  for (int y = 0; y < nely; ++y) {
    for (int x = 0; x < nelx; ++x) {
      const double dx = x + 0.5 - c.cx;
      const double dy = y + 0.5 - c.cy;
      if (dx * dx + dy * dy < c.radius * c.radius) mask(y, x) = 0;
    }
  }
  return mask;
}

IntField sample_design_area(Rng& rng, const ConditionSampler& cfg) {
  for (;;) {
    Circle c;
    c.cx = rng.uniform(0.0, cfg.nelx);
    c.cy = rng.uniform(0.0, cfg.nely);
    c.radius = rng.uniform(0.0, cfg.max_radius);
    IntField mask = rasterize_void(c, cfg.nely, cfg.nelx);
    if (mask.col(0).any()) return mask;
  }
}

LoadDraw sample_loads(Rng& rng, const IntField& mask, const ConditionSampler& cfg) {
  std::vector<int> cells;
  for (int i = 0; i < mask.size(); ++i) {
    if (mask.data()[i] == 1) cells.push_back(i);
  }
  if (cells.empty()) throw ParameterError("sample_loads: mask has no design elements");

  std::vector<std::pair<int, int>> pairs;
  for (int a = -cfg.max_component; a <= cfg.max_component; ++a) {
    for (int b = -cfg.max_component; b <= cfg.max_component; ++b) {
      if (a != 0 || b != 0) pairs.emplace_back(a, b);
    }
  }

  LoadDraw draw;
  draw.fx = IntField::Zero(mask.rows(), mask.cols());
  draw.fy = IntField::Zero(mask.rows(), mask.cols());
  const int span = cfg.max_loads - cfg.min_loads + 1;
  draw.count = std::min<int>(cfg.min_loads + static_cast<int>(rng.below(span)),
                             static_cast<int>(cells.size()));
  // Partial Fisher-Yates for distinct cells.
  for (int k = 0; k < draw.count; ++k) {
    const auto j = k + static_cast<std::size_t>(rng.below(cells.size() - k));
    std::swap(cells[k], cells[j]);
    const auto& [px, py] = pairs[rng.below(pairs.size())];
    draw.fx.data()[cells[k]] = px;
    draw.fy.data()[cells[k]] = py;
  }
  return draw;
}

bool loads_reach_fixed_edge(const DesignSpec& spec) {
  const int nely = static_cast<int>(spec.mask.rows());
  const int nelx = static_cast<int>(spec.mask.cols());
  IntField seen = IntField::Zero(nely, nelx);
  std::vector<std::pair<int, int>> stack;
  for (int y = 0; y < nely; ++y) {
    if (spec.mask(y, 0) == 1) {
      seen(y, 0) = 1;
      stack.emplace_back(y, 0);
    }
  }
  while (!stack.empty()) {
    const auto [y, x] = stack.back();
    stack.pop_back();
    constexpr std::array<std::pair<int, int>, 4> steps{{{1, 0}, {-1, 0}, {0, 1}, {0, -1}}};
    for (const auto& [dy, dx] : steps) {
      const int ny = y + dy, nx = x + dx;
      if (ny < 0 || ny >= nely || nx < 0 || nx >= nelx) continue;
      if (spec.mask(ny, nx) == 1 && !seen(ny, nx)) {
        seen(ny, nx) = 1;
        stack.emplace_back(ny, nx);
      }
    }
  }
  return !(((spec.fx != 0) || (spec.fy != 0)) && (seen == 0)).any();
}

double sample_volfrac(Rng& rng, const ConditionSampler& cfg) {
  float v = static_cast<float>(rng.uniform(cfg.volfrac_lo, cfg.volfrac_hi));
  while (static_cast<double>(v) > cfg.volfrac_hi) v = std::nextafter(v, 0.0f);
  while (static_cast<double>(v) < cfg.volfrac_lo) v = std::nextafter(v, 1.0f);
  return v;
}

DesignSpec sample_spec(Rng& rng, const ConditionSampler& cfg) {
  for (;;) {
    DesignSpec spec;
    spec.mask = sample_design_area(rng, cfg);
    LoadDraw loads = sample_loads(rng, spec.mask, cfg);
    spec.fx = std::move(loads.fx);
    spec.fy = std::move(loads.fy);
    spec.volfrac = sample_volfrac(rng, cfg);
    if (loads_reach_fixed_edge(spec)) return spec;
  }
}

SplitCounts split_counts(std::size_t n) {
  const std::size_t tenth = n / 10;
  return {n - 2 * tenth, tenth, tenth};
}

Sample make_sample(std::uint64_t sample_seed, const ConditionSampler& sampler,
                   const simp::SimpConfig& config, std::size_t* failures) {
  for (std::uint64_t attempt = 0;; ++attempt) {
    const std::uint64_t seed = attempt == 0 ? sample_seed : splitmix64(sample_seed + attempt);
    Rng rng(seed);
    Sample s;
    s.spec = sample_spec(rng, sampler);
    try {
      const simp::SimpResult r = simp::optimize(s.spec, config);
      // Labels are stored as f32; the stored compliance belongs to the rounded field.
      s.label = r.rho.cast<float>().cast<double>();
      s.label_compliance = simp::compliance_of(s.spec, s.label, config.material);
      s.meta = {seed, static_cast<std::uint32_t>(r.iterations), r.converged};
      return s;
    } catch (const NumericalError&) {
      if (failures) ++*failures;
    }
  }
}

DatasetSplit generate(std::size_t n, std::uint64_t seed, const GenerateOptions& options,
                      GenerateStats* stats) {
  if (n < 10) throw ParameterError("generate: need at least 10 samples");
  const auto start = std::chrono::steady_clock::now();
  std::vector<Sample> samples(n);
  std::vector<std::size_t> failures(n, 0);
  std::atomic<std::size_t> next{0};
  std::atomic<std::size_t> done{0};
  std::mutex progress_mutex;

  unsigned workers = options.workers ? options.workers : std::thread::hardware_concurrency();
  workers = std::max(1u, std::min<unsigned>(workers, static_cast<unsigned>(n)));
  std::exception_ptr error;
  std::mutex error_mutex;
  auto work = [&] {
    for (std::size_t i = next++; i < n; i = next++) {
      try {
        samples[i] = make_sample(splitmix64(seed ^ (0xa0761d6478bd642fULL * (i + 1))),
                                 options.sampler, options.simp, &failures[i]);
      } catch (...) {
        std::lock_guard lock(error_mutex);
        if (!error) error = std::current_exception();
      }
      const std::size_t finished = ++done;
      if (options.progress) {
        std::lock_guard lock(progress_mutex);
        options.progress(finished, n);
      }
    }
  };
  if (workers == 1) {
    work();
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w) pool.emplace_back(work);
  }
  if (error) std::rethrow_exception(error);

  // Seeded permutation assigns samples to splits.
  std::vector<std::size_t> order(n);
  for (std::size_t i = 0; i < n; ++i) order[i] = i;
  Rng shuffle(splitmix64(seed ^ 0x5eed5b11d0c0ffeeULL));
  for (std::size_t i = n - 1; i > 0; --i) std::swap(order[i], order[shuffle.below(i + 1)]);

  const SplitCounts counts = split_counts(n);
  DatasetSplit out;
  out.seed = seed;
  for (std::size_t k = 0; k < n; ++k) {
    Sample& s = samples[order[k]];
    if (k < counts.train) {
      out.train.push_back(std::move(s));
    } else if (k < counts.train + counts.validation) {
      out.validation.push_back(std::move(s));
    } else {
      out.test.push_back(std::move(s));
    }
  }

  if (stats) {
    double iters = 0.0;
    std::size_t non_converged = 0, failed = 0;
    for (const auto* part : {&out.train, &out.validation, &out.test}) {
      for (const Sample& s : *part) {
        iters += s.meta.iterations;
        non_converged += s.meta.converged ? 0 : 1;
      }
    }
    for (std::size_t f : failures) failed += f;
    stats->mean_iterations = iters / static_cast<double>(n);
    stats->non_converged = non_converged;
    stats->solver_failures = failed;
    stats->wall_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    stats->mean_seconds = stats->wall_seconds * workers / static_cast<double>(n);
  }
  return out;
}

void validate_sample(const Sample& s) {
  s.spec.validate();
  const Field& rho = s.label;
  if (rho.rows() != s.spec.mask.rows() || rho.cols() != s.spec.mask.cols()) {
    throw ParameterError("label: shape differs from mask");
  }
  if (!((rho >= 0.0) && (rho <= 1.0)).all()) throw ParameterError("label: entries outside [0, 1]");
  if (((s.spec.mask == 0) && (rho != 0.0)).any()) {
    throw ParameterError("label: nonzero density outside the design area");
  }
  const double vol = simp::design_volume(rho, s.spec.mask);
  if (s.spec.has_loads() && std::abs(vol - s.spec.volfrac) > 1e-3) {
    std::ostringstream msg;
    msg << "label: design-area volume " << vol << " differs from volfrac " << s.spec.volfrac;
    throw ParameterError(msg.str());
  }
  if (!(s.label_compliance >= 0.0) || !std::isfinite(s.label_compliance)) {
    throw ParameterError("label_compliance: must be finite and >= 0");
  }
}

namespace {

constexpr char kMagic[8] = {'T', 'O', 'P', 'O', 'D', 'S', '\0', '\0'};
constexpr std::size_t kHeaderSize = 64;

std::size_t record_size(int nely, int nelx) {
  const std::size_t cells = static_cast<std::size_t>(nely) * nelx;
  return 8 + 4 + 4 + (cells + 7) / 8 + 2 * cells + 4 + 8 + 4 * cells;
}

void encode_record(detail::Writer& w, const Sample& s) {
  const int nely = static_cast<int>(s.spec.mask.rows());
  const int nelx = static_cast<int>(s.spec.mask.cols());
  const int cells = nely * nelx;
  w.put<std::uint64_t>(s.meta.seed);
  w.put<std::uint32_t>(s.meta.iterations);
  w.put<std::uint8_t>(s.meta.converged ? 1 : 0);
  w.put<std::uint8_t>(0);
  w.put<std::uint16_t>(0);
  std::vector<unsigned char> bits((cells + 7) / 8, 0);
  std::vector<std::int8_t> fx(cells), fy(cells);
  for (int y = 0; y < nely; ++y) {
    for (int x = 0; x < nelx; ++x) {
      const int c = y * nelx + x;
      if (s.spec.mask(y, x)) bits[c / 8] |= static_cast<unsigned char>(1u << (c % 8));
      fx[c] = static_cast<std::int8_t>(s.spec.fx(y, x));
      fy[c] = static_cast<std::int8_t>(s.spec.fy(y, x));
    }
  }
  w.raw(bits.data(), bits.size());
  w.raw(fx.data(), fx.size());
  w.raw(fy.data(), fy.size());
  w.put<float>(static_cast<float>(s.spec.volfrac));
  w.put<double>(s.label_compliance);
  for (int y = 0; y < nely; ++y) {
    for (int x = 0; x < nelx; ++x) w.put<float>(static_cast<float>(s.label(y, x)));
  }
}

Sample decode_record(detail::Reader& r, int nely, int nelx) {
  const int cells = nely * nelx;
  Sample s;
  s.meta.seed = r.get<std::uint64_t>();
  s.meta.iterations = r.get<std::uint32_t>();
  s.meta.converged = r.get<std::uint8_t>() != 0;
  r.get<std::uint8_t>();
  r.get<std::uint16_t>();
  const unsigned char* bits = r.take((cells + 7) / 8);
  const auto* fx = reinterpret_cast<const std::int8_t*>(r.take(cells));
  const auto* fy = reinterpret_cast<const std::int8_t*>(r.take(cells));
  s.spec.mask.resize(nely, nelx);
  s.spec.fx.resize(nely, nelx);
  s.spec.fy.resize(nely, nelx);
  for (int y = 0; y < nely; ++y) {
    for (int x = 0; x < nelx; ++x) {
      const int c = y * nelx + x;
      s.spec.mask(y, x) = (bits[c / 8] >> (c % 8)) & 1;
      s.spec.fx(y, x) = fx[c];
      s.spec.fy(y, x) = fy[c];
    }
  }
  s.spec.volfrac = r.get<float>();
  s.label_compliance = r.get<double>();
  s.label.resize(nely, nelx);
  for (int y = 0; y < nely; ++y) {
    for (int x = 0; x < nelx; ++x) s.label(y, x) = r.get<float>();
  }
  return s;
}

}  // namespace

void write_dataset(const std::filesystem::path& path, const DatasetSplit& data) {
  int nely = 32, nelx = 32;
  for (const auto* part : {&data.train, &data.validation, &data.test}) {
    if (!part->empty()) {
      nely = static_cast<int>(part->front().spec.mask.rows());
      nelx = static_cast<int>(part->front().spec.mask.cols());
      break;
    }
  }
  std::vector<unsigned char> buf;
  buf.reserve(kHeaderSize + data.size() * record_size(nely, nelx));
  detail::Writer w(buf);
  w.raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kDatasetVersion);
  w.put<std::uint32_t>(nely);
  w.put<std::uint32_t>(nelx);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(record_size(nely, nelx)));
  w.put<std::uint64_t>(data.seed);
  w.put<std::uint64_t>(data.train.size());
  w.put<std::uint64_t>(data.validation.size());
  w.put<std::uint64_t>(data.test.size());
  w.put<std::uint64_t>(0);
  for (const auto* part : {&data.train, &data.validation, &data.test}) {
    for (const Sample& s : *part) {
      if (s.spec.mask.rows() != nely || s.spec.mask.cols() != nelx) {
        throw ParameterError("write_dataset: samples have different grid sizes");
      }
      encode_record(w, s);
    }
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

DatasetSplit read_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open dataset " + path.string());
  std::vector<unsigned char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < kHeaderSize) {
    std::ostringstream msg;
    msg << path.string() << ": truncated header (" << buf.size() << " of " << kHeaderSize
        << " bytes)";
    throw FormatError(msg.str());
  }
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": bad magic at offset 0, not a dataset file");
  }
  detail::Reader h(buf.data() + 8, kHeaderSize - 8, 8);
  const auto version = h.get<std::uint32_t>();
  if (version != kDatasetVersion) {
    std::ostringstream msg;
    msg << path.string() << ": unsupported dataset version " << version << " (this build reads "
        << kDatasetVersion << ")";
    throw FormatError(msg.str());
  }
  const auto nely = static_cast<int>(h.get<std::uint32_t>());
  const auto nelx = static_cast<int>(h.get<std::uint32_t>());
  const auto rsize = h.get<std::uint32_t>();
  if (nely < 1 || nelx < 1 || rsize != record_size(nely, nelx)) {
    std::ostringstream msg;
    msg << path.string() << ": inconsistent header at offset 12 (grid " << nely << "x" << nelx
        << ", record size " << rsize << ")";
    throw FormatError(msg.str());
  }
  DatasetSplit data;
  data.seed = h.get<std::uint64_t>();
  const auto n_train = h.get<std::uint64_t>();
  const auto n_val = h.get<std::uint64_t>();
  const auto n_test = h.get<std::uint64_t>();
  const std::uint64_t expected = n_train + n_val + n_test;
  const std::uint64_t available = (buf.size() - kHeaderSize) / rsize;
  if (available != expected || (buf.size() - kHeaderSize) % rsize != 0) {
    std::ostringstream msg;
    msg << path.string() << ": truncated or oversized dataset, header declares " << expected
        << " records but the file holds " << available << " complete records ("
        << (buf.size() - kHeaderSize) % rsize << " trailing bytes at offset "
        << kHeaderSize + available * rsize << ")";
    throw FormatError(msg.str());
  }
  std::size_t offset = kHeaderSize;
  auto read_part = [&](std::uint64_t count, std::vector<Sample>& part) {
    part.reserve(count);
    for (std::uint64_t i = 0; i < count; ++i) {
      detail::Reader r(buf.data() + offset, rsize, offset);
      part.push_back(decode_record(r, nely, nelx));
      offset += rsize;
    }
  };
  read_part(n_train, data.train);
  read_part(n_val, data.validation);
  read_part(n_test, data.test);
  return data;
}

void write_manifest(const std::filesystem::path& path, const DatasetSplit& data,
                    const GenerateOptions& options, const GenerateStats& stats) {
  const auto& c = options.simp;
  const auto& s = options.sampler;
  nlohmann::ordered_json j;
  j["format"] = "topoforge dataset";
  j["version"] = kDatasetVersion;
  j["seed"] = data.seed;
  j["counts"] = {{"train", data.train.size()},
                 {"validation", data.validation.size()},
                 {"test", data.test.size()},
                 {"total", data.size()}};
  j["grid"] = {{"nely", s.nely}, {"nelx", s.nelx}};
  j["sampler"] = {{"volfrac", {s.volfrac_lo, s.volfrac_hi}},
                  {"max_radius", s.max_radius},
                  {"loads", {s.min_loads, s.max_loads}},
                  {"max_component", s.max_component}};
  j["simp"] = {{"rmin", c.rmin},          {"move", c.move},
               {"eta", c.eta},            {"tol", c.tol},
               {"max_iterations", c.max_iterations}, {"bisection_tol", c.bisection_tol},
               {"e0", c.material.e0},     {"emin", c.material.emin},
               {"nu", c.material.nu},     {"penal", c.material.penal},
               {"volume_domain", "design area only"}};
  j["stats"] = {{"mean_iterations", stats.mean_iterations},
                {"non_converged", stats.non_converged},
                {"solver_failures", stats.solver_failures},
                {"mean_seconds_per_sample", stats.mean_seconds},
                {"wall_seconds", stats.wall_seconds}};
  std::ofstream out(path);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out << j.dump(2) << "\n";
}

}  // namespace topoforge::datagen
