#include <catch2/catch_amalgamated.hpp>

#include <functional>
#include <random>

#include "evbraille/nn.hpp"

using namespace evb;
using nn::Tensor;

namespace {

Tensor<double> random_tensor(int n, int c, int h, int w, std::mt19937_64& rng,
                             double lo = -1.0, double hi = 1.0) {
  Tensor<double> t(n, c, h, w);
  std::uniform_real_distribution<double> u(lo, hi);
  for (auto& v : t.v) v = u(rng);
  return t;
}

// loss = sum(forward(x) * R) for a fixed random projection R; compares the
// analytic input/parameter gradients against central finite differences.
template <typename Layer>
void gradcheck(Layer& layer, Tensor<double> x,
               const std::function<Tensor<double>(Layer&, const Tensor<double>&)>& fwd,
               std::vector<nn::ParamRef<double>> params, std::mt19937_64& rng,
               double tol = 1e-3) {
  auto y0 = fwd(layer, x);
  Tensor<double> r = random_tensor(y0.n, y0.c, y0.h, y0.w, rng);

  auto loss = [&]() {
    auto y = fwd(layer, x);
    double acc = 0.0;
    for (std::size_t i = 0; i < y.size(); ++i) acc += y.v[i] * r.v[i];
    return acc;
  };

  for (auto& p : params) std::fill(p.grad->begin(), p.grad->end(), 0.0);
  fwd(layer, x);  // refresh caches
  Tensor<double> dy = r;
  Tensor<double> dx = layer.backward(dy);

  const double h = 1e-6;
  auto check = [&](double analytic, double* slot, const char* what) {
    const double orig = *slot;
    *slot = orig + h;
    const double lp = loss();
    *slot = orig - h;
    const double lm = loss();
    *slot = orig;
    const double numeric = (lp - lm) / (2 * h);
    const double denom = std::abs(analytic) + std::abs(numeric);
    if (denom < 1e-8) {
      REQUIRE(std::abs(analytic - numeric) < 1e-8);
    } else {
      INFO(what << ": analytic " << analytic << " numeric " << numeric);
      REQUIRE(std::abs(analytic - numeric) / denom < tol);
    }
  };

  for (std::size_t i = 0; i < x.size(); ++i) check(dx.v[i], &x.v[i], "dx");
  for (auto& p : params) {
    for (std::size_t i = 0; i < p.value->size(); ++i) {
      check((*p.grad)[i], &(*p.value)[i], "dparam");
    }
  }
}

}  // namespace

TEST_CASE("conv2d gradients match finite differences") {
  for (std::uint64_t seed : {1u, 2u, 3u}) {
    std::mt19937_64 rng(seed);
    nn::Conv2d<double> conv(2, 3, 3, 1, 1, true);
    conv.init(rng);
    std::vector<nn::ParamRef<double>> params;
    conv.collect(params);
    gradcheck<nn::Conv2d<double>>(
        conv, random_tensor(2, 2, 6, 7, rng),
        [](auto& l, const auto& x) { return l.forward(x); }, params, rng);
  }
}

TEST_CASE("strided 7x7 conv gradients match finite differences") {
  std::mt19937_64 rng(7);
  nn::Conv2d<double> conv(2, 2, 7, 2, 3);
  conv.init(rng);
  std::vector<nn::ParamRef<double>> params;
  conv.collect(params);
  gradcheck<nn::Conv2d<double>>(
      conv, random_tensor(1, 2, 9, 10, rng),
      [](auto& l, const auto& x) { return l.forward(x); }, params, rng);
}

TEST_CASE("conv output values agree with a direct convolution") {
  std::mt19937_64 rng(11);
  nn::Conv2d<double> conv(2, 3, 3, 2, 1, true);
  conv.init(rng);
  for (auto& b : conv.bias) b = 0.1;
  auto x = random_tensor(2, 2, 7, 8, rng);
  auto y = conv.forward(x);
  REQUIRE(y.h == 4);
  REQUIRE(y.w == 4);
  for (int s = 0; s < 2; ++s) {
    for (int oc = 0; oc < 3; ++oc) {
      for (int oy = 0; oy < y.h; ++oy) {
        for (int ox = 0; ox < y.w; ++ox) {
          double acc = conv.bias[oc];
          for (int ic = 0; ic < 2; ++ic) {
            for (int ky = 0; ky < 3; ++ky) {
              for (int kx = 0; kx < 3; ++kx) {
                const int iy = oy * 2 - 1 + ky, ix = ox * 2 - 1 + kx;
                if (iy < 0 || iy >= 7 || ix < 0 || ix >= 8) continue;
                acc += conv.weight[((oc * 2 + ic) * 3 + ky) * 3 + kx] * x.at(s, ic, iy, ix);
              }
            }
          }
          REQUIRE(y.at(s, oc, oy, ox) == Catch::Approx(acc).margin(1e-12));
        }
      }
    }
  }
}

TEST_CASE("batchnorm gradients match finite differences") {
  for (std::uint64_t seed : {4u, 5u}) {
    std::mt19937_64 rng(seed);
    nn::BatchNorm2d<double> bn(3);
    std::uniform_real_distribution<double> u(0.5, 1.5);
    for (auto& g : bn.gamma) g = u(rng);
    for (auto& b : bn.beta) b = u(rng) - 1.0;
    std::vector<nn::ParamRef<double>> params;
    bn.collect(params);
    gradcheck<nn::BatchNorm2d<double>>(
        bn, random_tensor(3, 3, 4, 5, rng),
        [](auto& l, const auto& x) { return l.forward(x, true); }, params, rng);
  }
}

TEST_CASE("batchnorm normalizes in train mode and uses running stats in eval") {
  std::mt19937_64 rng(13);
  nn::BatchNorm2d<double> bn(2);
  auto x = random_tensor(4, 2, 5, 5, rng, 2.0, 6.0);
  auto y = bn.forward(x, true);
  const std::size_t hw = 25;
  for (int c = 0; c < 2; ++c) {
    double sum = 0.0, sq = 0.0;
    for (int s = 0; s < 4; ++s) {
      const double* p = y.v.data() + (s * 2 + c) * hw;
      for (std::size_t i = 0; i < hw; ++i) {
        sum += p[i];
        sq += p[i] * p[i];
      }
    }
    const double mean = sum / (4 * hw);
    const double var = sq / (4 * hw) - mean * mean;
    CHECK(mean == Catch::Approx(0.0).margin(1e-9));
    CHECK(var == Catch::Approx(1.0).epsilon(1e-3));
  }
  // eval mode differs: running stats have only absorbed a fraction of the batch
  auto ye = bn.forward(x, false);
  CHECK(ye.v != y.v);
}

TEST_CASE("relu, maxpool, avgpool gradients match finite differences") {
  std::mt19937_64 rng(17);
  {
    nn::ReLU<double> relu;
    gradcheck<nn::ReLU<double>>(
        relu, random_tensor(2, 3, 4, 4, rng),
        [](auto& l, const auto& x) { return l.forward(x); }, {}, rng);
  }
  {
    nn::MaxPool2d<double> pool(3, 2, 1);
    gradcheck<nn::MaxPool2d<double>>(
        pool, random_tensor(2, 2, 7, 8, rng),
        [](auto& l, const auto& x) { return l.forward(x); }, {}, rng);
  }
  {
    nn::GlobalAvgPool<double> pool;
    gradcheck<nn::GlobalAvgPool<double>>(
        pool, random_tensor(2, 3, 5, 6, rng),
        [](auto& l, const auto& x) { return l.forward(x); }, {}, rng);
  }
}

TEST_CASE("linear gradients match finite differences") {
  std::mt19937_64 rng(19);
  nn::Linear<double> fc(12, 5);
  fc.init(rng);
  std::vector<nn::ParamRef<double>> params;
  fc.collect(params);
  gradcheck<nn::Linear<double>>(
      fc, random_tensor(3, 12, 1, 1, rng),
      [](auto& l, const auto& x) { return l.forward(x); }, params, rng);
}

TEST_CASE("dropout gradients match finite differences with a frozen mask") {
  std::mt19937_64 rng(23);
  nn::Dropout<double> drop(0.4);
  const std::mt19937_64 frozen = rng;
  gradcheck<nn::Dropout<double>>(
      drop, random_tensor(2, 4, 3, 3, rng),
      [frozen](auto& l, const auto& x) {
        std::mt19937_64 r = frozen;
        return l.forward(x, true, r);
      },
      {}, rng);

  // eval mode is the identity
  auto x = random_tensor(1, 2, 3, 3, rng);
  std::mt19937_64 r2(0);
  CHECK(drop.forward(x, false, r2).v == x.v);
}

TEST_CASE("residual block gradients match finite differences") {
  std::mt19937_64 rng(29);
  nn::BasicBlock<double> block(2, 4, 2);  // projection path exercised
  block.init(rng);
  std::vector<nn::ParamRef<double>> params;
  block.collect(params);
  gradcheck<nn::BasicBlock<double>>(
      block, random_tensor(2, 2, 6, 6, rng),
      [](auto& l, const auto& x) { return l.forward(x, true); }, params, rng, 2e-3);
}

TEST_CASE("softmax cross entropy: values and gradient") {
  Tensor<double> logits(2, 3, 1, 1);
  logits.v = {1.0, 2.0, 3.0, 0.0, 0.0, 0.0};
  std::vector<int> labels = {2, 0};
  Tensor<double> d;
  const double loss = nn::softmax_cross_entropy(logits, labels, &d);
  const double l0 =
      -std::log(std::exp(3.0) / (std::exp(1.0) + std::exp(2.0) + std::exp(3.0)));
  const double l1 = std::log(3.0);
  CHECK(loss == Catch::Approx((l0 + l1) / 2));

  const double h = 1e-7;
  for (std::size_t i = 0; i < logits.v.size(); ++i) {
    const double orig = logits.v[i];
    logits.v[i] = orig + h;
    const double lp = nn::softmax_cross_entropy<double>(logits, labels, nullptr);
    logits.v[i] = orig - h;
    const double lm = nn::softmax_cross_entropy<double>(logits, labels, nullptr);
    logits.v[i] = orig;
    CHECK(d.v[i] == Catch::Approx((lp - lm) / (2 * h)).margin(1e-6));
  }

  CHECK_THROWS_AS(nn::softmax_cross_entropy(logits, {0}, &d), std::invalid_argument);
  CHECK_THROWS_AS(nn::softmax_cross_entropy(logits, {0, 9}, &d), std::invalid_argument);
}

TEST_CASE("adam minimizes a quadratic") {
  std::vector<double> value = {5.0, -3.0};
  std::vector<double> grad(2, 0.0);
  std::vector<nn::ParamRef<double>> params{{&value, &grad}};
  nn::Adam<double> opt;
  opt.lr = 0.1;
  for (int i = 0; i < 500; ++i) {
    grad[0] = 2.0 * (value[0] - 1.0);
    grad[1] = 2.0 * (value[1] + 2.0);
    opt.step(params);
  }
  CHECK(value[0] == Catch::Approx(1.0).margin(1e-2));
  CHECK(value[1] == Catch::Approx(-2.0).margin(1e-2));
}

TEST_CASE("maxpool forward picks block maxima with padding") {
  Tensor<double> x(1, 1, 4, 4);
  for (int i = 0; i < 16; ++i) x.v[i] = i;
  nn::MaxPool2d<double> pool(3, 2, 1);
  auto y = pool.forward(x);
  REQUIRE(y.h == 2);
  REQUIRE(y.w == 2);
  CHECK(y.at(0, 0, 0, 0) == 5.0);
  CHECK(y.at(0, 0, 0, 1) == 7.0);
  CHECK(y.at(0, 0, 1, 0) == 13.0);
  CHECK(y.at(0, 0, 1, 1) == 15.0);
}
