#include <cmath>

#include "doctest.h"
#include "support/gradcheck.hpp"
#include "support/reference_nn.hpp"
#include "topoforge/nn/layers.hpp"

using namespace topoforge;
using namespace topoforge::nn;
using T64 = Tensor<double>;

namespace {

double max_abs_diff(const T64& a, const T64& b) {
  REQUIRE(a.same_shape(b));
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

T64 from(std::initializer_list<double> v, int n, int c, int h, int w) {
  T64 t(n, c, h, w);
  std::copy(v.begin(), v.end(), t.data());
  return t;
}

}  // namespace

TEST_CASE("tensor construction") {
  CHECK_THROWS_AS(Tensor4(0, 1, 1, 1), ParameterError);
  const Tensor4 t(2, 3, 4, 5);
  CHECK(t.size() == 120);
  CHECK(t.offset(1, 2, 3, 4) == 119);
}

TEST_CASE("conv2d examples") {
  Rng rng(1);
  const T64 x = gradcheck::random_tensor(rng, 2, 1, 4, 5);
  const T64 one(1, 1, 1, 1, 1.0);
  const T64 zero(1, 1, 1, 1, 0.0);
  CHECK(conv2d_forward(x, one, &zero, 1, 0) == x);

  const T64 ones(1, 1, 3, 3, 1.0);
  const T64 y = conv2d_forward(ones, ones, nullptr, 1, 0);
  CHECK(y.dims() == std::array<int, 4>{1, 1, 1, 1});
  CHECK(y[0] == 9.0);

  CHECK(conv_output_size(32, 3, 1, 1) == 32);
  CHECK(conv_output_size(7, 3, 2, 0) == 3);
  CHECK_THROWS_AS(conv2d_forward(ones, T64(1, 2, 3, 3), nullptr, 1, 0), ParameterError);
  CHECK_THROWS_AS(conv2d_forward(ones, T64(1, 1, 5, 5), nullptr, 1, 0), ParameterError);
}

TEST_CASE("conv2d matches the direct loop, including chunked batches") {
  Rng rng(2);
  for (int trial = 0; trial < 6; ++trial) {
    const int k = trial % 2 ? 3 : 1;
    // 9 samples at 32x32 forces several GEMM chunks.
    const int n = trial < 2 ? 9 : 2, hw = trial < 2 ? 32 : 6;
    const T64 x = gradcheck::random_tensor(rng, n, 3, hw, hw);
    const T64 w = gradcheck::random_tensor(rng, 4, 3, k, k);
    const T64 b = gradcheck::random_tensor(rng, 1, 4, 1, 1);
    const int stride = trial >= 4 ? 2 : 1, pad = k / 2;
    CHECK(max_abs_diff(conv2d_forward(x, w, &b, stride, pad), reference::conv(x, w, &b, stride, pad)) < 1e-12);
  }
  // float path agrees with the double oracle to single precision.
  const T64 x = gradcheck::random_tensor(rng, 5, 8, 32, 32);
  const T64 w = gradcheck::random_tensor(rng, 16, 8, 3, 3, 0.3);
  const Tensor4 yf = conv2d_forward(x.cast<float>(), w.cast<float>(), nullptr, 1, 1);
  CHECK(max_abs_diff(yf.cast<double>(), reference::conv(x, w, nullptr, 1, 1)) < 1e-4);
}

TEST_CASE("batchnorm statistics and modes") {
  std::vector<double> mean, var;
  batch_statistics(from({1, 2, 3}, 1, 1, 1, 3), mean, var);
  CHECK(mean[0] == doctest::Approx(2.0).epsilon(1e-15));
  CHECK(var[0] == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  BatchNormState<double> st(1, true);
  BatchNormCache<double> cache;
  const T64 y = batchnorm_forward(T64(2, 1, 3, 3, 7.0), st, cache);
  for (double v : y.vec()) CHECK(v == 0.0);

  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const int c = 1 + trial % 4;
    const T64 x = gradcheck::random_tensor(rng, 2 + trial % 3, c, 2 + trial % 3, 4, 3.0);
    BatchNormState<double> s(c, true);
    const T64 out = batchnorm_forward(x, s, cache);
    batch_statistics(out, mean, var);
    for (int k = 0; k < c; ++k) {
      CHECK(std::abs(mean[k]) <= 1e-5);
      CHECK(std::abs(var[k] - 1.0) <= 1e-4);
    }
  }

  // Running statistics: momentum 0.1 on the mean and the unbiased variance.
  BatchNormState<double> s(1, false);
  batchnorm_forward(from({1, 2, 3}, 1, 1, 1, 3), s, cache);
  CHECK(s.running_mean[0] == doctest::Approx(0.9 * 0 + 0.1 * 2));
  CHECK(s.running_var[0] == doctest::Approx(0.9 * 1 + 0.1 * 1.0));

  BatchNormState<double> fresh(2, true);
  fresh.training = false;
  CHECK_THROWS_AS(batchnorm_forward(T64(1, 2, 2, 2), fresh, cache), StateError);
  BatchNormState<double> tiny(1, true);
  CHECK_THROWS_AS(batchnorm_forward(T64(1, 1, 1, 1), tiny, cache), ParameterError);
}

TEST_CASE("spade algebra") {
  Rng rng(4);
  SUBCASE("unit gamma and zero beta reduce to parameter-free batchnorm") {
    for (int trial = 0; trial < 10; ++trial) {
      Spade<double> sp(3, 3, 8);
      sp.init(rng);
      sp.gamma.weight.fill(0.0);
      sp.gamma.bias.fill(1.0);
      sp.beta.weight.fill(0.0);
      sp.beta.bias.fill(0.0);
      const T64 h = gradcheck::random_tensor(rng, 2, 3, 4, 4, 2.0);
      const T64 m = gradcheck::random_tensor(rng, 2, 3, 4, 4);
      BatchNormState<double> plain(3, false);
      BatchNormCache<double> cache;
      CHECK(max_abs_diff(sp.forward(h, m), batchnorm_forward(h, plain, cache)) <= 1e-6);
    }
  }
  SUBCASE("zero gamma and beta give zero") {
    Spade<double> sp(2, 3, 4);
    sp.init(rng);
    for (auto* c : {&sp.gamma, &sp.beta}) {
      c->weight.fill(0.0);
      c->bias.fill(0.0);
    }
    const T64 out = sp.forward(gradcheck::random_tensor(rng, 2, 2, 3, 3), gradcheck::random_tensor(rng, 2, 3, 3, 3));
    for (double v : out.vec()) CHECK(v == 0.0);
  }
  SUBCASE("hand-evaluated 1x2x2x2 case") {
    // One mask channel, hidden width 1, every conv reduced to its centre tap:
    // act = relu(m) = m, gamma = (2m + 0.5, -m), beta = (1, m).
    Spade<double> sp(2, 1, 1);
    for (auto* c : {&sp.shared, &sp.gamma, &sp.beta}) {
      c->weight.fill(0.0);
      c->bias.fill(0.0);
    }
    sp.shared.weight.at(0, 0, 1, 1) = 1.0;
    sp.gamma.weight.at(0, 0, 1, 1) = 2.0;
    sp.gamma.bias[0] = 0.5;
    sp.gamma.weight.at(1, 0, 1, 1) = -1.0;
    sp.beta.bias[0] = 1.0;
    sp.beta.weight.at(1, 0, 1, 1) = 1.0;
    const T64 h = from({1, 2, 3, 4, 0, 0, 1, -1}, 1, 2, 2, 2);
    const T64 m = from({1, 0, 0, 1}, 1, 1, 2, 2);
    const T64 expect = from({-2.354088550, 0.776394097, 1.223605903, 4.354088550, 1.0, 0.0, 0.0, 2.414199420},
                            1, 2, 2, 2);
    CHECK(max_abs_diff(sp.forward(h, m), expect) <= 1e-6);
  }
  SUBCASE("channel mismatch") {
    Spade<double> sp(2, 3, 4);
    CHECK_THROWS_AS(sp.forward(T64(1, 3, 2, 2), T64(1, 3, 2, 2)), ParameterError);
    CHECK_THROWS_AS(sp.forward(T64(1, 2, 2, 2), T64(1, 3, 4, 4)), ParameterError);
  }
}

TEST_CASE("spade resblock") {
  Rng rng(5);
  SUBCASE("zero main branch is the identity") {
    SpadeResBlock<double> blk(4, 4, 3, 8);
    blk.init(rng);
    blk.conv1.weight.fill(0.0);
    blk.conv1.bias.fill(0.0);
    const T64 h = gradcheck::random_tensor(rng, 2, 4, 4, 4);
    CHECK(blk.forward(h, gradcheck::random_tensor(rng, 2, 3, 4, 4)) == h);
    CHECK_FALSE(blk.learned_skip());
  }
  SUBCASE("matches an independent composition") {
    for (int trial = 0; trial < 10; ++trial) {
      const int in = 1 + trial % 5, out = trial % 2 ? in : 2 + trial % 3;
      SpadeResBlock<double> blk(in, out, 3, 6);
      blk.init(rng);
      gradcheck::randomize(blk, rng);
      const T64 h = gradcheck::random_tensor(rng, 2, in, 5, 3);
      const T64 m = gradcheck::random_tensor(rng, 2, 3, 5, 3);
      CHECK(max_abs_diff(blk.forward(h, m), reference::resblock(h, m, blk, nullptr)) < 1e-10);
    }
  }
  SUBCASE("skip conv has no bias") {
    SpadeResBlock<double> blk(4, 2);
    ParamList<double> ps;
    blk.collect("b", ps);
    for (const auto& p : ps) CHECK(p.name != "b.conv_skip.bias");
  }
}

TEST_CASE("pooling, upsampling and activations") {
  std::vector<std::uint32_t> arg;
  CHECK(maxpool2_forward(from({1, 2, 3, 4}, 1, 1, 2, 2), arg)[0] == 4.0);
  CHECK(arg[0] == 3);
  maxpool2_forward(from({5, 5, 5, 5}, 1, 1, 2, 2), arg);
  CHECK(arg[0] == 0);
  CHECK_THROWS_AS(maxpool2_forward(T64(1, 1, 3, 2), arg), ParameterError);

  Rng rng(6);
  const T64 x = gradcheck::random_tensor(rng, 2, 3, 3, 5);
  CHECK(maxpool2_forward(upsample2_forward(x), arg) == x);

  const T64 s = sigmoid_forward(from({0.0, -800.0, 800.0, 3.0}, 1, 1, 1, 4));
  CHECK(s[0] == 0.5);
  CHECK(s[1] >= 0.0);
  CHECK(s[2] <= 1.0);
  const Tensor4 sf = sigmoid_forward(Tensor4(1, 1, 1, 2, 15.0f));
  CHECK(sf[0] < 1.0f);

  const T64 big = gradcheck::random_tensor(rng, 1, 1, 32, 32);
  const T64 small = resize_nearest(big, 4, 4);
  for (int y = 0; y < 4; ++y)
    for (int x2 = 0; x2 < 4; ++x2) CHECK(small.at(0, 0, y, x2) == big.at(0, 0, 8 * y, 8 * x2));
}

TEST_CASE("mae loss") {
  Rng rng(7);
  const Tensor4 a(2, 1, 3, 3, 0.25f);
  CHECK(mae_loss(a, a).loss == 0.0);
  const auto half = mae_loss(Tensor4(2, 1, 3, 3, 0.75f), a);
  CHECK(half.loss == doctest::Approx(0.5));
  for (float g : half.grad.vec()) CHECK(g == doctest::Approx(1.0 / 18));
  const auto neg = mae_loss(a, Tensor4(2, 1, 3, 3, 0.75f));
  for (float g : neg.grad.vec()) CHECK(g == doctest::Approx(-1.0 / 18));

  const Tensor4 p = gradcheck::random_tensor(rng, 3, 1, 7, 7).cast<float>();
  const Tensor4 t = gradcheck::random_tensor(rng, 3, 1, 7, 7).cast<float>();
  double brute = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) brute += std::abs(static_cast<double>(p[i]) - t[i]);
  CHECK(std::abs(mae_loss(p, t).loss - brute / p.size()) <= 1e-7);
  CHECK_THROWS_AS(mae_loss(p, Tensor4(1, 1, 7, 7)), ParameterError);
}

TEST_CASE("adam") {
  Tensor4 w(1, 1, 1, 3, 1.0f), g(1, 1, 1, 3);
  g[0] = 0.3f;
  g[1] = -5.0f;
  Adam<float> opt({{"w", &w, &g}}, 0.01);
  opt.step();
  CHECK(std::abs((1.0f - w[0]) - 0.01) <= 1e-6);
  CHECK(std::abs((w[1] - 1.0f) - 0.01) <= 1e-6);
  CHECK(w[2] == 1.0f);
  CHECK(opt.steps() == 1);
  for (int i = 0; i < 10; ++i) {
    opt.zero_grad();
    opt.step();
  }
  CHECK(w[2] == 1.0f);

  auto run = [] {
    Tensor4 v(1, 1, 1, 2, 0.5f), dv(1, 1, 1, 2);
    Adam<float> o({{"v", &v, &dv}}, 0.01);
    for (int i = 0; i < 2; ++i) {
      dv[0] = 0.7f;
      dv[1] = -0.2f;
      o.step();
    }
    return v;
  };
  CHECK(run() == run());
}

TEST_CASE("finite-difference gradient suite") {
  for (const auto& rep : gradcheck::gradient_suite(20, 2024)) {
    INFO(rep.op << ": shapes " << rep.shapes << ", checked " << rep.checked << ", skipped " << rep.skipped
                << ", max rel " << rep.max_rel);
    CHECK(rep.pass(20));
  }
}
