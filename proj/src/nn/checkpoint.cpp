#include "topoforge/nn/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "../binary_io.hpp"

namespace topoforge::nn {

namespace {

constexpr char kMagic[8] = {'T', 'O', 'P', 'O', 'C', 'K', 'P', 'T'};
constexpr std::size_t kHeaderSize = 24;

struct Fnv1a {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  void bytes(const void* p, std::size_t n) {
    const auto* c = static_cast<const unsigned char*>(p);
    for (std::size_t i = 0; i < n; ++i) {
      h ^= c[i];
      h *= 0x100000001b3ULL;
    }
  }
  void u32(std::uint32_t v) {
    unsigned char b[4] = {static_cast<unsigned char>(v), static_cast<unsigned char>(v >> 8),
                          static_cast<unsigned char>(v >> 16), static_cast<unsigned char>(v >> 24)};
    bytes(b, 4);
  }
  void str(const std::string& s) {
    u32(static_cast<std::uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
};

std::vector<unsigned char> slurp(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open checkpoint " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

std::string hex(std::uint64_t v) {
  std::ostringstream s;
  s << "0x" << std::hex << std::setw(16) << std::setfill('0') << v;
  return s.str();
}

struct Header {
  std::uint32_t entries;
  std::uint64_t hash;
};

Header read_header(const std::vector<unsigned char>& buf, const std::filesystem::path& path) {
  if (buf.size() < kHeaderSize) throw FormatError(path.string() + ": truncated checkpoint header");
  if (std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0) {
    throw FormatError(path.string() + ": bad magic at offset 0, not a checkpoint");
  }
  detail::Reader r(buf.data() + 8, kHeaderSize - 8, 8);
  const auto version = r.get<std::uint32_t>();
  if (version != kCheckpointVersion) {
    throw FormatError(path.string() + ": unsupported checkpoint version " + std::to_string(version) +
                      " (this build reads " + std::to_string(kCheckpointVersion) + ")");
  }
  Header h;
  h.entries = r.get<std::uint32_t>();
  h.hash = r.get<std::uint64_t>();
  return h;
}

}  // namespace

std::uint64_t architecture_hash(const std::string& variant, const ParamList<float>& params) {
  Fnv1a f;
  f.str(variant);
  for (const auto& p : params) {
    f.str(p.name);
    f.u32(p.trainable() ? 0 : 1);
    for (int d : p.value->dims()) f.u32(static_cast<std::uint32_t>(d));
  }
  return f.h;
}

void save_checkpoint(const std::filesystem::path& path, const std::string& variant,
                     const ParamList<float>& params) {
  std::vector<unsigned char> buf;
  detail::Writer w(buf);
  w.raw(kMagic, sizeof(kMagic));
  w.put<std::uint32_t>(kCheckpointVersion);
  w.put<std::uint32_t>(static_cast<std::uint32_t>(params.size()));
  w.put<std::uint64_t>(architecture_hash(variant, params));
  for (const auto& p : params) {
    w.put<std::uint32_t>(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.put<std::uint32_t>(p.trainable() ? 0 : 1);
    for (int d : p.value->dims()) w.put<std::uint32_t>(static_cast<std::uint32_t>(d));
    for (float v : p.value->vec()) w.put<float>(v);
  }
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw FormatError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
  if (!out) throw FormatError("write failed for " + path.string());
}

std::uint64_t read_checkpoint_hash(const std::filesystem::path& path) {
  return read_header(slurp(path), path).hash;
}

void load_checkpoint(const std::filesystem::path& path, const std::string& variant,
                     ParamList<float>& params) {
  const auto buf = slurp(path);
  const Header h = read_header(buf, path);
  const std::uint64_t expected = architecture_hash(variant, params);
  if (h.hash != expected) {
    throw LoadError(path.string() + ": architecture hash " + hex(h.hash) + " does not match variant '" +
                    variant + "' (" + hex(expected) + ")");
  }
  if (h.entries != params.size()) {
    throw LoadError(path.string() + ": " + std::to_string(h.entries) + " entries, model has " +
                    std::to_string(params.size()));
  }
  detail::Reader r(buf.data() + kHeaderSize, buf.size() - kHeaderSize, kHeaderSize);
  for (auto& p : params) {
    const auto len = r.get<std::uint32_t>();
    const auto* name = r.take(len);
    const std::string got(reinterpret_cast<const char*>(name), len);
    r.get<std::uint32_t>();
    std::array<int, 4> dims{};
    for (int& d : dims) d = static_cast<int>(r.get<std::uint32_t>());
    if (got != p.name || dims != p.value->dims()) {
      throw LoadError(path.string() + ": entry '" + got + "' does not match expected '" + p.name + "'");
    }
    for (float& v : p.value->vec()) v = r.get<float>();
  }
  if (!r.done()) {
    throw FormatError(path.string() + ": trailing bytes at offset " + std::to_string(r.position()));
  }
}

}  // namespace topoforge::nn
