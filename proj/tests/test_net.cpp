#include <filesystem>
#include <fstream>
#include <set>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "topoforge/datagen.hpp"
#include "topoforge/net.hpp"

using namespace topoforge;
using namespace topoforge::net;
namespace fs = std::filesystem;

namespace {

std::vector<simp::DesignSpec> random_specs(int n, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<simp::DesignSpec> out;
  for (int i = 0; i < n; ++i) out.push_back(datagen::sample_spec(rng));
  return out;
}

// Runs one training-mode pass so every batchnorm holds running statistics.
void warm_up(TopoNet<float>& net, std::uint64_t seed) {
  net.set_training(true);
  const auto specs = random_specs(4, seed);
  net.forward(make_input<float>(specs));
  net.set_training(false);
}

std::set<std::string> names(TopoNet<float>& net) {
  std::set<std::string> s;
  for (const auto& p : net.parameters()) s.insert(p.name);
  return s;
}

fs::path temp_path(const std::string& name) {
  const fs::path dir = fs::temp_directory_path() / "topoforge_test_net";
  fs::create_directories(dir);
  return dir / name;
}

}  // namespace

TEST_CASE("variant names") {
  for (Variant v : {Variant::proposed, Variant::proposed_no_bn, Variant::yu_baseline}) {
    CHECK(parse_variant(to_string(v)) == v);
  }
  CHECK_THROWS_AS(parse_variant("unet"), ParameterError);
}

TEST_CASE("input encodings") {
  const auto specs = random_specs(3, 11);
  const auto in = make_input<float>(specs);
  CHECK(in.x.dims() == std::array<int, 4>{3, 3, 32, 32});
  const nn::Tensor4 m = mask_stack(in);
  for (int n = 0; n < 3; ++n) {
    for (int y = 0; y < 32; ++y) {
      for (int x = 0; x < 32; ++x) {
        CHECK(m.at(n, 0, y, x) == static_cast<float>(specs[n].mask(y, x) * static_cast<float>(specs[n].volfrac)));
        CHECK(m.at(n, 1, y, x) == specs[n].fx(y, x));
        CHECK(m.at(n, 2, y, x) == specs[n].fy(y, x));
      }
    }
  }
  // Nearest-neighbour downsampling to 4x4 picks every eighth cell.
  const nn::Tensor4 small = nn::resize_nearest(m, 4, 4);
  for (int n = 0; n < 3; ++n)
    for (int c = 0; c < 3; ++c)
      for (int y = 0; y < 4; ++y)
        for (int x = 0; x < 4; ++x) CHECK(small.at(n, c, y, x) == m.at(n, c, 8 * y, 8 * x));

  nn::Tensor4 feat(2, 5, 4, 4, 1.0f);
  const nn::Tensor4 inj = inject_volfrac(feat, {0.5f, 0.25f});
  CHECK(inj.c() == 6);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      CHECK(inj.at(0, 5, y, x) == 0.5f);
      CHECK(inj.at(1, 5, y, x) == 0.25f);
      CHECK(inj.at(1, 4, y, x) == 1.0f);
    }
  }
  CHECK_THROWS_AS(inject_volfrac(feat, {0.5f}), ParameterError);
}

TEST_CASE("encoder") {
  TopoNet<float> net({Variant::proposed}, 3);
  const auto specs = random_specs(2, 12);
  const nn::Tensor4 e = net.encode(make_input<float>(specs).x);
  CHECK(e.dims() == std::array<int, 4>{2, 128, 4, 4});

  const nn::Tensor4 zero = net.encode(nn::Tensor4(2, 3, 32, 32));
  for (float v : zero.vec()) CHECK(v == 0.0f);

  TopoNet<float> twin({Variant::proposed}, 3);
  CHECK(twin.encode(make_input<float>(specs).x) == net.encode(make_input<float>(specs).x));
  CHECK_THROWS_AS(net.encode(nn::Tensor4(1, 3, 16, 16)), ParameterError);
}

TEST_CASE("decoder output range and degenerate masks") {
  for (Variant v : {Variant::proposed, Variant::proposed_no_bn, Variant::yu_baseline}) {
    TopoNet<float> net({v}, 4);
    const auto in = make_input<float>(random_specs(2, 13));
    const nn::Tensor4 out = net.forward(in);
    CHECK(out.dims() == std::array<int, 4>{2, 1, 32, 32});
    for (float p : out.vec()) {
      CHECK(p > 0.0f);
      CHECK(p < 1.0f);
    }
    const nn::Tensor4 feat = inject_volfrac(net.encode(in.x), in.volfrac);
    const nn::Tensor4 a = net.decode(feat, nn::Tensor4(2, 3, 32, 32));
    const nn::Tensor4 b = net.decode(feat, nn::Tensor4(2, 3, 32, 32));
    CHECK(a == b);
    for (float p : a.vec()) CHECK(std::isfinite(p));
  }
}

TEST_CASE("parameter groups differ only where the variants say") {
  TopoNet<float> proposed({Variant::proposed}), no_bn({Variant::proposed_no_bn}), yu({Variant::yu_baseline});
  const auto p = names(proposed), n = names(no_bn), y = names(yu);
  for (const auto& s : n) CHECK(p.count(s) == 1);
  for (const auto& s : p) {
    if (!n.count(s)) CHECK(s.find(".bn.") != std::string::npos);
  }
  for (const auto& s : y) CHECK(n.count(s) == 1);
  int spade = 0;
  for (const auto& s : n) {
    if (y.count(s)) continue;
    const bool grouped = s.find(".spade") != std::string::npos || s.find(".conv_skip.") != std::string::npos;
    CHECK_MESSAGE(grouped, s);
    spade += grouped;
  }
  CHECK(spade > 0);
  CHECK(proposed.trainable_count() > no_bn.trainable_count());
  CHECK(no_bn.trainable_count() > yu.trainable_count());
}

TEST_CASE("eval mode is batch independent and deterministic") {
  const auto specs = random_specs(5, 14);
  for (Variant v : {Variant::proposed, Variant::proposed_no_bn, Variant::yu_baseline}) {
    TopoNet<float> net({v}, 5);
    warm_up(net, 15);
    const nn::Tensor4 batch = net.forward(make_input<float>(specs));
    for (int k = 0; k < 5; ++k) {
      const nn::Tensor4 one = net.forward(make_input<float>(std::span(&specs[k], 1)));
      double diff = 0.0;
      for (int i = 0; i < 32 * 32; ++i) diff = std::max(diff, std::abs(double(one[i]) - batch[k * 1024 + i]));
      CHECK(diff <= 1e-6);
    }
    CHECK(net.forward(make_input<float>(specs)) == batch);
  }
  TopoNet<float> fresh({Variant::proposed}, 6);
  fresh.set_training(false);
  CHECK_THROWS_AS(fresh.forward(make_input<float>(specs)), StateError);
}

TEST_CASE("checkpoint round trip and mismatch detection") {
  const auto specs = random_specs(3, 16);
  const fs::path ckpt = temp_path("model.ckpt");
  TopoNet<float> net({Variant::proposed}, 7);
  warm_up(net, 17);
  save_model(ckpt, net, {{"validation_mae", 0.25}, {"best_epoch", 3}});
  const nn::Tensor4 expect = net.forward(make_input<float>(specs));

  Predictor pred(ckpt, Variant::proposed);
  const auto fields = pred.predict_batch(specs);
  for (int k = 0; k < 3; ++k) CHECK((fields[k] == to_field(expect, k)).all());
  const Prediction a = pred.predict(specs[0]), b = pred.predict(specs[0]);
  CHECK((a.density == b.density).all());
  CHECK(a.seconds > 0.0);
  CHECK(read_model_meta(ckpt)["best_epoch"] == 3);

  CHECK_THROWS_AS(load_model(ckpt, Variant::yu_baseline), LoadError);
  TopoNet<float> other({Variant::proposed_no_bn});
  auto params = other.parameters();
  CHECK_THROWS_AS(nn::load_checkpoint(ckpt, "proposed-no-bn", params), LoadError);

  std::ifstream in(ckpt, std::ios::binary);
  std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  const fs::path bad = temp_path("bad.ckpt");
  auto write = [&](const std::string& b) {
    std::ofstream(bad, std::ios::binary | std::ios::trunc).write(b.data(), static_cast<std::streamsize>(b.size()));
    fs::copy_file(ckpt.string() + ".json", bad.string() + ".json", fs::copy_options::overwrite_existing);
  };
  write(bytes.substr(0, bytes.size() / 2));
  CHECK_THROWS_AS(load_model(bad), FormatError);
  std::string magic = bytes;
  magic[0] = 'X';
  write(magic);
  CHECK_THROWS_AS(load_model(bad), FormatError);
  std::string hash = bytes;
  hash[16] ^= 1;
  write(hash);
  CHECK_THROWS_AS(load_model(bad), LoadError);
  fs::remove(bad.string() + ".json");
  CHECK_THROWS_AS(load_model(bad), LoadError);
}

TEST_CASE("whole-network gradient on a reduced configuration") {
  // Every layer type in sequence at 8x8. A coordinate whose one-sided differences
  // disagree sits on a kink and is skipped (at most 10%). Smaller step than the
  // per-op suite: the whole chain has far more kinks within reach of h.
  constexpr double kNetStep = 1e-5;
  for (Variant v : {Variant::proposed, Variant::proposed_no_bn, Variant::yu_baseline}) {
    ArchitectureConfig cfg{v, {3, 4, 5}, {4, 3, 3, 3}, 3, 8};
    TopoNet<double> net(cfg, 21);
    Rng rng(22);
    // Nonzero biases move most activations off exact zeros.
    for (auto& p : net.parameters())
      if (p.trainable() && p.name.ends_with("bias"))
        for (double& b : p.value->vec()) b = rng.uniform(-0.2, 0.2);
    ModelInput<double> in{gradcheck::random_tensor(rng, 3, 3, 8, 8), {0.3, 0.5, 0.7}};
    const auto r = gradcheck::random_tensor(rng, 3, 1, 8, 8);
    net.zero_grad();
    net.forward(in);
    net.backward(r);
    auto loss = [&] { return gradcheck::project(net.forward(in), r); };
    const double l0 = loss();
    int checked = 0, skipped = 0;
    double worst = 0.0;
    for (auto& p : net.parameters()) {
      if (!p.trainable()) continue;
      for (std::size_t k = 0; k < std::min<std::size_t>(3, p.value->size()); ++k) {
        const std::size_t i = rng.below(p.value->size());
        const double v0 = (*p.value)[i];
        (*p.value)[i] = v0 + kNetStep;
        const double lp = loss();
        (*p.value)[i] = v0 - kNetStep;
        const double lm = loss();
        (*p.value)[i] = v0;
        const double fwd = (lp - l0) / kNetStep, bwd = (l0 - lm) / kNetStep;
        const double n1 = 0.5 * (fwd + bwd);
        if (std::abs(fwd - bwd) / std::max({std::abs(fwd), std::abs(bwd), gradcheck::kGradFloor}) > 1e-3) {
          ++skipped;
          continue;
        }
        const double a = (*p.grad)[i];
        worst = std::max(worst, std::abs(a - n1) / std::max({std::abs(a), std::abs(n1), gradcheck::kGradFloor}));
        ++checked;
      }
    }
    INFO(to_string(v) << ": checked " << checked << ", skipped " << skipped << ", worst " << worst);
    CHECK(worst <= gradcheck::kMaxRelError);
    CHECK(skipped * 10 <= checked + skipped);
  }
}
