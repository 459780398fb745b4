#include <cmath>

#include "doctest.h"
#include "support.hpp"
#include "vqamask/mgm.hpp"
#include "vqamask/numerics/grad_check.hpp"
#include "vqamask/numerics/ops.hpp"

using namespace vqamask;
using namespace vqamask::mgm;
using nn::Tensor;
using testing::max_abs_diff;
using testing::random_tensor;

namespace {

using Mat = std::vector<std::vector<double>>;

Mat to_mat(const Tensor& t) {
  Mat m(t.dim(0), std::vector<double>(t.dim(1)));
  for (std::size_t i = 0; i < t.dim(0); ++i)
    for (std::size_t j = 0; j < t.dim(1); ++j) m[i][j] = t.values()[i * t.dim(1) + j];
  return m;
}

std::vector<double> vec(const Tensor& t) { return {t.values().begin(), t.values().end()}; }

Mat mul(const Mat& a, const Mat& b) {
  Mat c(a.size(), std::vector<double>(b[0].size(), 0.0));
  for (std::size_t i = 0; i < a.size(); ++i)
    for (std::size_t p = 0; p < b.size(); ++p)
      for (std::size_t j = 0; j < b[0].size(); ++j) c[i][j] += a[i][p] * b[p][j];
  return c;
}

Mat norm(const Mat& x, const std::vector<double>& g, const std::vector<double>& b) {
  Mat y = x;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double n = static_cast<double>(x[i].size());
    double mean = 0.0, var = 0.0;
    for (double v : x[i]) mean += v;
    mean /= n;
    for (double v : x[i]) var += (v - mean) * (v - mean);
    const double inv = 1.0 / std::sqrt(var / n + 1e-5);
    for (std::size_t j = 0; j < x[i].size(); ++j) y[i][j] = (x[i][j] - mean) * inv * g[j] + b[j];
  }
  return y;
}

// One cross-attention block as straight loops; also returns the per-head weights.
Mat reference_block(const nn::ParamSet& p, const MgmConfig& c, const Mat& visual, const Mat& language, int layer,
                    std::vector<Mat>& weights) {
  const std::string pre = "mgm.layer" + std::to_string(layer) + ".";
  const std::size_t d = static_cast<std::size_t>(c.d), H = static_cast<std::size_t>(c.heads), dh = d / H;
  const Mat q = mul(norm(visual, vec(p.at(pre + "ln_q.gamma")), vec(p.at(pre + "ln_q.beta"))), to_mat(p.at(pre + "wq")));
  const Mat mem = norm(language, vec(p.at(pre + "ln_kv.gamma")), vec(p.at(pre + "ln_kv.beta")));
  const Mat k = mul(mem, to_mat(p.at(pre + "wk"))), v = mul(mem, to_mat(p.at(pre + "wv")));
  Mat out = visual;
  weights.assign(H, Mat(visual.size(), std::vector<double>(language.size())));
  for (std::size_t h = 0; h < H; ++h)
    for (std::size_t i = 0; i < visual.size(); ++i) {
      double mx = -1e300;
      std::vector<double> s(language.size());
      for (std::size_t j = 0; j < language.size(); ++j) {
        double dot = 0.0;
        for (std::size_t e = 0; e < dh; ++e) dot += q[i][h * dh + e] * k[j][h * dh + e];
        s[j] = dot / std::sqrt(static_cast<double>(dh));
        mx = std::max(mx, s[j]);
      }
      double z = 0.0;
      for (auto& x : s) z += (x = std::exp(x - mx));
      for (std::size_t j = 0; j < language.size(); ++j) {
        weights[h][i][j] = s[j] / z;
        for (std::size_t e = 0; e < dh; ++e) out[i][h * dh + e] += s[j] / z * v[j][h * dh + e];
      }
    }
  Mat hidden = mul(out, to_mat(p.at(pre + "ffn.w1")));
  const auto b1 = vec(p.at(pre + "ffn.b1")), b2 = vec(p.at(pre + "ffn.b2"));
  for (auto& row : hidden)
    for (std::size_t j = 0; j < row.size(); ++j) row[j] = std::max(0.0, row[j] + b1[j]);
  const Mat f = mul(hidden, to_mat(p.at(pre + "ffn.w2")));
  for (std::size_t i = 0; i < out.size(); ++i)
    for (std::size_t j = 0; j < d; ++j) out[i][j] += f[i][j] + b2[j];
  return out;
}

nn::ParamSet perturbed(const MgmConfig& c, int grid, int tile, std::uint64_t seed) {
  nn::ParamSet p;
  Rng rng(seed);
  init_params(p, c, grid, tile, rng);
  std::uint64_t s = seed * 1000;
  for (const auto& [name, t] : p.entries()) {
    Tensor m = t;
    const Tensor noise = random_tensor(t.shape(), ++s, 0.1);
    auto v = m.mutable_values();
    for (std::size_t i = 0; i < v.size(); ++i) v[i] += noise.values()[i];
  }
  return p;
}

void zero_all(nn::ParamSet& p) {
  for (const auto& [name, t] : p.entries()) {
    Tensor m = t;
    auto v = m.mutable_values();
    std::fill(v.begin(), v.end(), 0.0);
  }
}

}  // namespace

TEST_CASE("cross attention matches the straight-loop reference across layers") {
  const MgmConfig c{3, 8, 2, 16, 4, 2, 1};
  const nn::ParamSet p = perturbed(c, 2, 8, 21);
  const Tensor visual = random_tensor({4, 8}, 22);
  const Tensor language = random_tensor({3, 8}, 23);
  Mat ref = to_mat(visual);
  const Mat lang = to_mat(language);
  Tensor x = visual;
  AttentionRecord record;
  for (int l = 1; l <= 3; ++l) {
    std::vector<Mat> w;
    ref = reference_block(p, c, ref, lang, l, w);
    x = cross_attention_layer(x, language, p, c, l, &record);
    REQUIRE(record.weights.size() == static_cast<std::size_t>(l));
    for (std::size_t h = 0; h < 2; ++h)
      for (std::size_t i = 0; i < 4; ++i)
        for (std::size_t j = 0; j < 3; ++j)
          CHECK(std::abs(record.weights.back()[h].values()[i * 3 + j] - w[h][i][j]) <= 1e-12);
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < 4; ++i)
    for (std::size_t j = 0; j < 8; ++j) worst = std::max(worst, std::abs(ref[i][j] - x.values()[i * 8 + j]));
  CHECK(worst <= 1e-10);
}

TEST_CASE("single language token receives all attention; zero weights leave the residual") {
  const MgmConfig c{1, 8, 2, 16, 4, 2, 1};
  nn::ParamSet p = perturbed(c, 2, 8, 31);
  const Tensor visual = random_tensor({4, 8}, 32);
  AttentionRecord record;
  cross_attention_layer(visual, random_tensor({1, 8}, 33), p, c, 1, &record);
  for (const auto& head : record.weights[0])
    for (double w : head.values()) CHECK(w == 1.0);

  zero_all(p);
  const Tensor out = cross_attention_layer(visual, random_tensor({3, 8}, 34), p, c, 1);
  CHECK(max_abs_diff(out.values(), visual.values()) == 0.0);
}

TEST_CASE("attention rows are stochastic and the forward is deterministic") {
  const MgmConfig c;
  nn::ParamSet p;
  Rng rng(4);
  init_params(p, c, 4, 64, rng);
  const Tensor visual = random_tensor({16, 32}, 41);
  const Tensor language = random_tensor({9, 32}, 42);
  const MgmOutput a = mgm_forward(visual, language, p, c, 4, 4, 64);
  const MgmOutput b = mgm_forward(visual, language, p, c, 4, 4, 64);
  CHECK(max_abs_diff(a.mask.logits.values(), b.mask.logits.values()) == 0.0);
  REQUIRE(a.attention.weights.size() == 4);
  for (const auto& layer : a.attention.weights) {
    REQUIRE(layer.size() == 4);
    for (const auto& w : layer) {
      REQUIRE(w.shape() == nn::Shape{16, 9});
      for (std::size_t i = 0; i < 16; ++i) {
        double sum = 0.0;
        for (std::size_t j = 0; j < 9; ++j) sum += w.values()[i * 9 + j];
        CHECK(std::abs(sum - 1.0) <= 1e-12);
      }
    }
  }
  CHECK(a.mask.logits.shape() == nn::Shape{64, 64});
}

TEST_CASE("reorg_2d: labelled layout, single token and round trip") {
  std::vector<double> v(6 * 3);
  for (std::size_t i = 0; i < 6; ++i)
    for (std::size_t c = 0; c < 3; ++c) v[i * 3 + c] = static_cast<double>(100 * i + c);
  const Tensor map = reorg_2d(Tensor({6, 3}, v), 2, 3);
  REQUIRE(map.shape() == nn::Shape{3, 2, 3});
  for (std::size_t c = 0; c < 3; ++c)
    for (std::size_t r = 0; r < 2; ++r)
      for (std::size_t col = 0; col < 3; ++col)
        CHECK(map.values()[(c * 2 + r) * 3 + col] == static_cast<double>(100 * (r * 3 + col) + c));
  CHECK(reorg_2d(Tensor({1, 4}, {1, 2, 3, 4}), 1, 1).shape() == nn::Shape{4, 1, 1});
  const Tensor t = random_tensor({12, 5}, 51);
  CHECK(max_abs_diff(flatten_2d(reorg_2d(t, 3, 4)).values(), t.values()) == 0.0);
  CHECK_THROWS_AS(reorg_2d(t, 3, 3), Error);
}

TEST_CASE("deconv_decode: depth, zero weights and single-layer equivalence") {
  CHECK(decoder_depth(4, 64) == 4);
  CHECK(decoder_depth(8, 64) == 3);
  CHECK_THROWS_AS(decoder_depth(4, 48), Error);
  const MgmConfig c;
  nn::ParamSet p;
  Rng rng(6);
  init_params(p, c, 4, 64, rng);
  const Tensor map = random_tensor({32, 4, 4}, 61);
  const PredictedMask full = deconv_decode(map, p, c, 64);
  CHECK(full.probs.shape() == nn::Shape{64, 64});
  zero_all(p);
  const PredictedMask flat = deconv_decode(map, p, c, 64);
  for (double v : flat.probs.values()) CHECK(v == 0.5);

  const MgmConfig one{1, 4, 2, 8, 4, 2, 1};
  nn::ParamSet q;
  Rng rng2(7);
  init_params(q, one, 4, 8, rng2);
  const Tensor small = random_tensor({4, 4, 4}, 62);
  const Tensor direct = nn::add_channel_bias(nn::transposed_conv2d(small, q.at("mgm.deconv1.kernel"), 2, 1),
                                             q.at("mgm.deconv1.bias"));
  CHECK(max_abs_diff(deconv_decode(small, q, one, 8).logits.values(), direct.values()) == 0.0);
}

TEST_CASE("mask_loss: perfect, empty-prediction and symmetry values") {
  BinaryMask target(4, 4, 0);
  for (int i = 0; i < 4; ++i) target(i, i) = 1;
  PredictedMask sure;
  sure.logits = Tensor({4, 4});
  for (int i = 0; i < 16; ++i) sure.logits.mutable_values()[static_cast<std::size_t>(i)] = i % 5 == 0 ? 800.0 : -800.0;
  sure.probs = nn::sigmoid(sure.logits);
  const MaskLoss perfect = mask_loss(sure, target);
  CHECK(perfect.dice.item() == 0.0);
  CHECK(perfect.ce.item() == doctest::Approx(0.0).epsilon(1e-12));

  PredictedMask none;
  none.logits = Tensor({4, 4});
  for (auto& v : none.logits.mutable_values()) v = -800.0;
  none.probs = nn::sigmoid(none.logits);
  const BinaryMask full(4, 4, 1);
  CHECK(mask_loss(none, full).dice.item() == doctest::Approx(16.0 / 17.0).epsilon(1e-14));

  // Swapping prediction and target polarity leaves the loss unchanged.
  PredictedMask a;
  a.logits = random_tensor({4, 4}, 71);
  a.probs = nn::sigmoid(a.logits);
  PredictedMask b;
  b.logits = nn::scale(a.logits, -1.0);
  b.probs = nn::sigmoid(b.logits);
  BinaryMask inverse = target;
  for (auto& v : inverse.values()) v = static_cast<std::uint8_t>(1 - v);
  CHECK(mask_loss(a, target).ce.item() == doctest::Approx(mask_loss(b, inverse).ce.item()).epsilon(1e-14));
  CHECK_THROWS_AS(mask_loss(a, BinaryMask(3, 4, 0)), Error);
}

TEST_CASE("gradient check through a small generator") {
  const MgmConfig c{2, 8, 2, 12, 4, 2, 1};
  nn::ParamSet p = perturbed(c, 2, 8, 81);
  const Tensor visual = random_tensor({4, 8}, 82);
  const Tensor language = random_tensor({3, 8}, 83);
  BinaryMask target(8, 8, 0);
  for (int y = 2; y < 5; ++y)
    for (int x = 1; x < 7; ++x) target(y, x) = 1;
  p.sync_requires_grad();
  const auto loss = [&](const nn::ParamSet& params) {
    return mask_loss(mgm_forward(visual, language, params, c, 2, 2, 8).mask, target).total;
  };
  nn::GradCheckOptions options;
  options.step = 1e-6;
  const auto report = nn::grad_check(loss, p, options);
  CHECK(report.max_error < 1e-5);
  CHECK(report.scalars_checked == p.scalar_count(true));
}

TEST_CASE("permuting language rows leaves cross attention unchanged") {
  const MgmConfig c{2, 8, 2, 16, 4, 2, 1};
  const nn::ParamSet p = perturbed(c, 2, 8, 91);
  const Tensor visual = random_tensor({4, 8}, 92);
  const Tensor language = random_tensor({5, 8}, 93);
  const std::vector<int> order{3, 0, 4, 2, 1};
  const Tensor shuffled = nn::gather_rows(language, order);
  Tensor a = visual, b = visual;
  for (int l = 1; l <= 2; ++l) {
    a = cross_attention_layer(a, language, p, c, l);
    b = cross_attention_layer(b, shuffled, p, c, l);
  }
  CHECK(max_abs_diff(a.values(), b.values()) <= 1e-12);
}
