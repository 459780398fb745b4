#include <cmath>
#include <numeric>

#include "doctest.h"
#include "support.hpp"
#include "vqamask/error.hpp"
#include "vqamask/numerics/grad_check.hpp"
#include "vqamask/numerics/ops.hpp"
#include "vqamask/numerics/param_set.hpp"
#include "vqamask/numerics/stage_cache.hpp"
#include "vqamask/numerics/tape.hpp"

using namespace vqamask;
using nn::Tensor;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

// Zero-insertion reference: dilate x by `stride`, pad k−1 on every side,
// correlate with the spatially flipped kernel, then crop `padding` per side.
std::vector<double> deconv_oracle(const Tensor& x, const Tensor& k, int stride, int padding, std::size_t& oh,
                                  std::size_t& ow) {
  const std::size_t ci = x.dim(0), h = x.dim(1), w = x.dim(2), co = k.dim(1), ks = k.dim(2);
  const std::size_t s = static_cast<std::size_t>(stride);
  const std::size_t dh = (h - 1) * s + 1 + 2 * (ks - 1), dw = (w - 1) * s + 1 + 2 * (ks - 1);
  std::vector<double> dil(ci * dh * dw, 0.0);
  for (std::size_t c = 0; c < ci; ++c)
    for (std::size_t y = 0; y < h; ++y)
      for (std::size_t xx = 0; xx < w; ++xx)
        dil[(c * dh + (ks - 1) + y * s) * dw + (ks - 1) + xx * s] = x.values()[(c * h + y) * w + xx];
  const std::size_t fh = dh - ks + 1, fw = dw - ks + 1;
  std::vector<double> full(co * fh * fw, 0.0);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < fh; ++y)
      for (std::size_t xx = 0; xx < fw; ++xx) {
        double acc = 0.0;
        for (std::size_t c = 0; c < ci; ++c)
          for (std::size_t a = 0; a < ks; ++a)
            for (std::size_t b = 0; b < ks; ++b)
              acc += dil[(c * dh + y + a) * dw + xx + b] * k.values()[((c * co + o) * ks + (ks - 1 - a)) * ks + (ks - 1 - b)];
        full[(o * fh + y) * fw + xx] = acc;
      }
  const std::size_t p = static_cast<std::size_t>(padding);
  oh = fh - 2 * p;
  ow = fw - 2 * p;
  std::vector<double> out(co * oh * ow);
  for (std::size_t o = 0; o < co; ++o)
    for (std::size_t y = 0; y < oh; ++y)
      for (std::size_t xx = 0; xx < ow; ++xx) out[(o * oh + y) * ow + xx] = full[(o * fh + y + p) * fw + xx + p];
  return out;
}

// Runs grad_check on `loss` with every tensor of `inputs` registered as a parameter.
double op_gradient_error(const std::vector<Tensor>& inputs, const std::function<Tensor(const nn::ParamSet&)>& loss) {
  nn::ParamSet params;
  for (std::size_t i = 0; i < inputs.size(); ++i) params.add("in" + std::to_string(i), inputs[i]);
  nn::GradCheckOptions options;
  options.step = 1e-6;
  return nn::grad_check(loss, params, options).max_error;
}

Tensor sum_of(const Tensor& t, const Tensor& weights) {
  // Σ w·t as a [1] scalar with a fixed random weighting.
  return nn::reshape(nn::matmul_nt(nn::reshape(t, {1, t.numel()}), nn::reshape(weights, {1, t.numel()})), {1});
}

}  // namespace

TEST_CASE("matmul: identity, zero and triple-loop oracle") {
  const Tensor a = random_tensor({3, 4}, 1);
  Tensor eye({4, 4});
  for (std::size_t i = 0; i < 4; ++i) eye.mutable_values()[i * 4 + i] = 1.0;
  CHECK(max_abs_diff(nn::matmul(a, eye).values(), a.values()) == 0.0);
  const Tensor zero_product = nn::matmul(a, Tensor({4, 2}));
  for (double v : zero_product.values()) CHECK(v == 0.0);

  const Tensor b = random_tensor({4, 2}, 2);
  const Tensor c = nn::matmul(a, b);
  REQUIRE(c.shape() == nn::Shape{3, 2});
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 2; ++j) {
      double ref = 0.0;
      for (std::size_t p = 0; p < 4; ++p) ref += a.values()[i * 4 + p] * b.values()[p * 2 + j];
      CHECK(std::abs(c.values()[i * 2 + j] - ref) <= 1e-12);
    }
  CHECK_THROWS_AS(nn::matmul(a, a), Error);
}

TEST_CASE("matmul_nt equals matmul with the transposed operand") {
  const Tensor a = random_tensor({3, 5}, 3), b = random_tensor({4, 5}, 4);
  Tensor bt({5, 4});
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 5; ++j) bt.mutable_values()[j * 4 + i] = b.values()[i * 5 + j];
  CHECK(max_abs_diff(nn::matmul_nt(a, b).values(), nn::matmul(a, bt).values()) <= 1e-12);
}

TEST_CASE("softmax: uniform, shift invariance and extended-precision oracle") {
  const Tensor zeros({1, 4});
  const Tensor uniform = nn::softmax(zeros, 1);
  for (double v : uniform.values()) CHECK(v == 0.25);

  const Tensor x = random_tensor({3, 6}, 5, 3.0);
  Tensor shifted = x.clone();
  for (auto& v : shifted.mutable_values()) v += 17.25;
  CHECK(max_abs_diff(nn::softmax(x, 1).values(), nn::softmax(shifted, 1).values()) <= 1e-12);

  const Tensor t({1, 3}, {1.0, 2.0, 3.0});
  const Tensor s_tensor = nn::softmax(t, 1);
  const auto s = s_tensor.values();
  const long double z = expl(1.0L) + expl(2.0L) + expl(3.0L);
  for (int i = 0; i < 3; ++i) CHECK(std::abs(static_cast<long double>(s[i]) - expl(i + 1.0L) / z) <= 4e-16L);

  // Axis 0 normalizes columns.
  const Tensor cols_tensor = nn::softmax(x, 0);
  const auto cols = cols_tensor.values();
  for (std::size_t j = 0; j < 6; ++j) CHECK(std::abs(cols[j] + cols[6 + j] + cols[12 + j] - 1.0) <= 1e-15);
}

TEST_CASE("causal_softmax masks the upper triangle exactly") {
  const Tensor scores = random_tensor({5, 5}, 6, 2.0);
  const Tensor p_tensor = nn::causal_softmax(scores);
  const auto p = p_tensor.values();
  for (std::size_t i = 0; i < 5; ++i) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 5; ++j) {
      if (j > i) CHECK(p[i * 5 + j] == 0.0);
      sum += p[i * 5 + j];
    }
    CHECK(std::abs(sum - 1.0) <= 1e-12);
  }
  CHECK(p[0] == 1.0);
}

TEST_CASE("relu and sigmoid definitions and saturation") {
  const Tensor x({5}, {-2.0, -0.0, 0.0, 0.5, 3.0});
  const Tensor r_tensor = nn::relu(x);
  const auto r = r_tensor.values();
  CHECK(r[0] == 0.0);
  CHECK(r[3] == 0.5);
  CHECK(r[4] == 3.0);
  const Tensor z({3}, {0.0, 800.0, -800.0});
  const Tensor s_tensor = nn::sigmoid(z);
  const auto s = s_tensor.values();
  CHECK(s[0] == 0.5);
  CHECK(s[1] == 1.0);
  CHECK(s[2] == 0.0);
  for (double v : s) CHECK(std::isfinite(v));
}

TEST_CASE("transposed_conv2d: delta, identity and zero-insertion oracle") {
  const Tensor one({1, 1, 1}, std::vector<double>{1.0});
  const Tensor ones({1, 1, 2, 2}, {1.0, 1.0, 1.0, 1.0});
  const Tensor block = nn::transposed_conv2d(one, ones, 2);
  CHECK(block.shape() == nn::Shape{1, 2, 2});
  for (double v : block.values()) CHECK(v == 1.0);

  const Tensor x = random_tensor({1, 3, 3}, 7);
  const Tensor id({1, 1, 1, 1}, std::vector<double>{1.0});
  CHECK(max_abs_diff(nn::transposed_conv2d(x, id, 1).values(), x.values()) == 0.0);

  std::size_t oh = 0, ow = 0;
  const Tensor k = random_tensor({1, 1, 2, 2}, 8);
  const auto ref = deconv_oracle(x, k, 2, 0, oh, ow);
  const Tensor y = nn::transposed_conv2d(x, k, 2);
  CHECK(y.shape() == nn::Shape{1, oh, ow});
  CHECK(max_abs_diff(y.values(), ref) <= 1e-12);

  // Multi-channel with the decoder's kernel 4 / stride 2 / padding 1 geometry.
  const Tensor x2 = random_tensor({3, 4, 4}, 9);
  const Tensor k2 = random_tensor({3, 2, 4, 4}, 10);
  const auto ref2 = deconv_oracle(x2, k2, 2, 1, oh, ow);
  const Tensor y2 = nn::transposed_conv2d(x2, k2, 2, 1);
  CHECK(y2.shape() == nn::Shape{2, 8, 8});
  CHECK(oh == 8);
  CHECK(max_abs_diff(y2.values(), ref2) <= 1e-12);
}

TEST_CASE("cross_entropy: uniform logits, perfect limit and extended-precision oracle") {
  const std::vector<int> targets{0, 5, 31};
  const Tensor uniform({3, 32});
  CHECK(std::abs(nn::cross_entropy(uniform, targets).item() - std::log(32.0)) <= 1e-14);

  Tensor peaked({3, 32});
  for (std::size_t i = 0; i < 3; ++i) peaked.mutable_values()[i * 32 + static_cast<std::size_t>(targets[i])] = 1e3;
  CHECK(nn::cross_entropy(peaked, targets).item() <= 1e-300);

  const Tensor logits = random_tensor({3, 8}, 11, 2.0);
  const std::vector<int> t{2, 7, 0};
  long double ref = 0.0L;
  for (std::size_t i = 0; i < 3; ++i) {
    long double z = 0.0L;
    for (std::size_t j = 0; j < 8; ++j) z += expl(static_cast<long double>(logits.values()[i * 8 + j]));
    ref += logl(z) - static_cast<long double>(logits.values()[i * 8 + static_cast<std::size_t>(t[i])]);
  }
  ref /= 3.0L;
  CHECK(std::abs(static_cast<long double>(nn::cross_entropy(logits, t).item()) - ref) <= 1e-15L);
  const std::vector<int> bad{0, 8, 1};
  CHECK_THROWS_AS(nn::cross_entropy(logits, bad), Error);
}

TEST_CASE("dice and binary cross-entropy reference values") {
  const Tensor zeros({16});
  const std::vector<double> ones(16, 1.0);
  CHECK(nn::dice_loss(zeros, ones, 1.0).item() == 16.0 / 17.0);
  const Tensor hard({4}, {1.0, 0.0, 1.0, 0.0});
  const std::vector<double> g{1.0, 0.0, 1.0, 0.0};
  CHECK(nn::dice_loss(hard, g, 1.0).item() == 0.0);
  CHECK(nn::binary_cross_entropy(hard, g).item() == 0.0);

  // Logit and probability forms agree away from saturation.
  const Tensor z = random_tensor({64}, 12, 2.0);
  std::vector<double> target(64);
  for (std::size_t i = 0; i < 64; ++i) target[i] = i % 3 == 0 ? 1.0 : 0.0;
  const double from_logits = nn::binary_cross_entropy_with_logits(z, target).item();
  const double from_probs = nn::binary_cross_entropy(nn::sigmoid(z), target).item();
  CHECK(std::abs(from_logits - from_probs) <= 1e-13);
}

TEST_CASE("layer_norm rows have zero mean and unit variance before the affine map") {
  const Tensor x = random_tensor({4, 16}, 13, 5.0);
  Tensor gamma({16});
  for (auto& v : gamma.mutable_values()) v = 1.0;
  const Tensor normed = nn::layer_norm(x, gamma, Tensor({16}), 0.0);
  const auto y = normed.values();
  for (std::size_t r = 0; r < 4; ++r) {
    double mean = 0.0, var = 0.0;
    for (std::size_t c = 0; c < 16; ++c) mean += y[r * 16 + c];
    mean /= 16.0;
    for (std::size_t c = 0; c < 16; ++c) var += (y[r * 16 + c] - mean) * (y[r * 16 + c] - mean);
    CHECK(std::abs(mean) <= 1e-14);
    CHECK(std::abs(var / 16.0 - 1.0) <= 1e-12);
  }
}

TEST_CASE("permute, reshape, slices and concatenation move values exactly") {
  const Tensor x = random_tensor({2, 3}, 14);
  const std::vector<std::size_t> source{5, 4, 3, 2, 1, 0};
  const Tensor permuted = nn::permute(x, source, {3, 2});
  const auto p = permuted.values();
  for (std::size_t i = 0; i < 6; ++i) CHECK(p[i] == x.values()[5 - i]);
  const std::vector<Tensor> rows{nn::slice_rows(x, 0, 1), nn::slice_rows(x, 1, 2)};
  CHECK(max_abs_diff(nn::concat_rows(rows).values(), x.values()) == 0.0);
  const std::vector<Tensor> cols{nn::slice_cols(x, 0, 2), nn::slice_cols(x, 2, 3)};
  CHECK(max_abs_diff(nn::concat_cols(cols).values(), x.values()) == 0.0);
  const std::vector<int> ids{1, 1, 0};
  const Tensor gathered = nn::gather_rows(x, ids);
  const auto g = gathered.values();
  CHECK(g[0] == x.values()[3]);
  CHECK(g[6] == x.values()[0]);
}

TEST_CASE("grad_check: quadratic and constant losses") {
  nn::ParamSet params;
  params.add("theta", random_tensor({1, 6}, 15));
  const auto quadratic = [](const nn::ParamSet& p) {
    const Tensor& t = p.at("theta");
    return nn::reshape(nn::matmul_nt(t, t), {1});
  };
  const auto report = nn::grad_check(quadratic, params);
  CHECK(report.passed());
  CHECK(report.max_error <= 1e-8);
  CHECK(report.scalars_checked == 6);

  const auto constant = [](const nn::ParamSet&) { return Tensor::scalar(3.0); };
  const auto flat = nn::grad_check(constant, params);
  CHECK(flat.passed());
  CHECK(flat.params.front().analytic == 0.0);
}

TEST_CASE("grad_check skips frozen entries and restores values bit-exactly") {
  nn::ParamSet params;
  params.add("a", random_tensor({3}, 16));
  params.add("b", random_tensor({3}, 17));
  params.freeze("b");
  params.sync_requires_grad();
  const Tensor before = params.at("a").clone();
  const auto loss = [](const nn::ParamSet& p) {
    return nn::reshape(nn::matmul_nt(nn::reshape(p.at("a"), {1, 3}), nn::reshape(p.at("b"), {1, 3})), {1});
  };
  const auto report = nn::grad_check(loss, params);
  CHECK(report.scalars_checked == 3);
  CHECK(report.params.size() == 1);
  CHECK(max_abs_diff(params.at("a").values(), before.values()) == 0.0);
}

TEST_CASE("every differentiable op passes its own gradient check") {
  const Tensor w6 = random_tensor({6}, 100), w12 = random_tensor({12}, 101), w16 = random_tensor({16}, 102);
  CHECK(op_gradient_error({random_tensor({2, 3}, 20), random_tensor({3, 2}, 21)},
                          [&](const nn::ParamSet& p) { return sum_of(nn::matmul(p.at("in0"), p.at("in1")), random_tensor({4}, 107)); }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({2, 3}, 40), random_tensor({3}, 41)}, [&](const nn::ParamSet& p) {
          return sum_of(nn::relu(nn::add_row_bias(p.at("in0"), p.at("in1"))), w6);
        }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({2, 3}, 22), random_tensor({4, 3}, 23)}, [&](const nn::ParamSet& p) {
          return sum_of(nn::reshape(nn::matmul_nt(p.at("in0"), p.at("in1")), {8}), random_tensor({8}, 103));
        }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({3, 4}, 24)},
                          [&](const nn::ParamSet& p) { return sum_of(nn::softmax(p.at("in0"), 1), w12); }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({4, 4}, 25)},
                          [&](const nn::ParamSet& p) { return sum_of(nn::causal_softmax(p.at("in0")), w16); }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({3, 4}, 26), random_tensor({4}, 27), random_tensor({4}, 28)},
                          [&](const nn::ParamSet& p) {
                            return sum_of(nn::layer_norm(p.at("in0"), p.at("in1"), p.at("in2")), w12);
                          }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({12}, 29)},
                          [&](const nn::ParamSet& p) { return sum_of(nn::gelu(p.at("in0")), w12); }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({12}, 30)},
                          [&](const nn::ParamSet& p) { return sum_of(nn::sigmoid(p.at("in0")), w12); }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({2, 3, 3}, 31), random_tensor({2, 2, 4, 4}, 32)}, [&](const nn::ParamSet& p) {
          const Tensor y = nn::transposed_conv2d(p.at("in0"), p.at("in1"), 2, 1);
          return sum_of(y, random_tensor({y.numel()}, 104));
        }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({2, 3, 3}, 33), random_tensor({2}, 34)}, [&](const nn::ParamSet& p) {
          return sum_of(nn::add_channel_bias(p.at("in0"), p.at("in1")), random_tensor({18}, 105));
        }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({5, 3}, 35)}, [&](const nn::ParamSet& p) {
          const std::vector<int> ids{4, 0, 4};
          return sum_of(nn::gather_rows(p.at("in0"), ids), random_tensor({9}, 106));
        }) < 1e-6);
  const std::vector<int> targets{1, 0, 3};
  CHECK(op_gradient_error({random_tensor({3, 4}, 36)},
                          [&](const nn::ParamSet& p) { return nn::cross_entropy(p.at("in0"), targets); }) < 1e-6);
  std::vector<double> g(12);
  for (std::size_t i = 0; i < 12; ++i) g[i] = i % 2 == 0 ? 1.0 : 0.0;
  CHECK(op_gradient_error({random_tensor({12}, 37)}, [&](const nn::ParamSet& p) {
          return nn::dice_loss(nn::sigmoid(p.at("in0")), g);
        }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({12}, 38)}, [&](const nn::ParamSet& p) {
          return nn::binary_cross_entropy_with_logits(p.at("in0"), g);
        }) < 1e-6);
  CHECK(op_gradient_error({random_tensor({12}, 39)}, [&](const nn::ParamSet& p) {
          return nn::binary_cross_entropy(nn::sigmoid(p.at("in0")), g);
        }) < 1e-6);
}

TEST_CASE("stage cache reuses results until a dependency is written") {
  nn::StageCache cache;
  Tensor a = random_tensor({2, 2}, 40);
  int computed = 0;
  auto stage = [&] {
    return nn::cached(&cache, "double", {a}, [&] {
      ++computed;
      return nn::scale(a, 2.0);
    });
  };
  const Tensor first = stage();
  const Tensor second = stage();
  CHECK(computed == 1);
  CHECK(first.uid() == second.uid());
  a.mutable_values()[0] += 1.0;
  const Tensor third = stage();
  CHECK(computed == 2);
  CHECK(third.values()[0] == 2.0 * a.values()[0]);

  // Recording bypasses the cache so every op lands on the tape.
  nn::Tape tape;
  nn::Tape::Scope scope(tape);
  stage();
  CHECK(computed == 3);
}

TEST_CASE("extended scalars survive add and scale and are cleared by writes") {
  Tensor s = Tensor::scalar_extended(1.0L + 1e-18L);
  CHECK(s.item() == 1.0);
  CHECK(s.item_extended() == 1.0L + 1e-18L);
  const Tensor t = nn::add(nn::scale(s, 2.0), Tensor::scalar_extended(1e-18L));
  CHECK(t.item_extended() == 2.0L + 3e-18L);
  s.mutable_values()[0] = 4.0;
  CHECK(s.item_extended() == 4.0L);
}

TEST_CASE("tape backward accumulates into shared inputs") {
  Tensor x({2}, {1.5, -2.0}, true);
  nn::Tape tape;
  Tensor loss;
  {
    nn::Tape::Scope scope(tape);
    const Tensor y = nn::add(x, x);  // dy/dx = 2
    loss = nn::reshape(nn::matmul_nt(nn::reshape(y, {1, 2}), nn::reshape(Tensor({2}, {1.0, 1.0}), {1, 2})), {1});
  }
  tape.backward(loss);
  CHECK(x.grad()[0] == 2.0);
  CHECK(x.grad()[1] == 2.0);
}
