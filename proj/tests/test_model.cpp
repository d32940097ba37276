#include "doctest.h"

#include <cmath>

#include "d2c/binio.hpp"
#include "d2c/model.hpp"
#include "d2c/rng.hpp"
#include "oracles.hpp"

using namespace d2c;

namespace {

ModelDims tiny() {
  ModelDims d;
  d.classes = 3;
  d.dim = 2;
  d.d_model = 4;
  d.d_text = 3;
  d.d_feat = 4;
  d.blocks = 2;
  d.tokens = 2;
  d.align_layer = 1;
  return d;
}

TextEmbedding prompt(std::size_t L, std::size_t width, std::size_t active, std::uint64_t seed) {
  TextEmbedding t;
  t.length = L;
  t.width = width;
  t.tokens.assign(L * width, 0.0f);
  t.mask.assign(L, 0);
  Rng rng(seed);
  for (std::size_t p = 0; p < active; ++p) {
    t.mask[p] = 1;
    for (std::size_t c = 0; c < width; ++c) t.tokens[p * width + c] = static_cast<float>(rng.normal());
  }
  return t;
}

void randomize(DenoiserModel& m, std::uint64_t seed, double scale = 0.5) {
  Rng rng(seed);
  for (auto& p : m.parameters()) {
    for (double& v : p.tensor.mutable_values()) v = scale * (2.0 * rng.uniform() - 1.0);
  }
}

std::vector<double> row(const Tensor& t, std::size_t r) {
  const std::size_t w = t.dim(1);
  return {t.values().begin() + static_cast<std::ptrdiff_t>(r * w), t.values().begin() + static_cast<std::ptrdiff_t>((r + 1) * w)};
}

}  // namespace

TEST_CASE("dims validation") {
  ModelDims d = tiny();
  d.align_layer = 3;
  CHECK_THROWS(DenoiserModel(d, PredictionKind::epsilon, 0));
  d = tiny();
  d.d_model = 5;
  CHECK_THROWS(DenoiserModel(d, PredictionKind::epsilon, 0));
  const DenoiserModel m(tiny(), PredictionKind::epsilon, 0);
  CHECK(m.param("class_emb").dim(0) == 3);
  CHECK(m.param("proj.lin_w").dim(1) == tiny().d_feat);
}

TEST_CASE("fresh model predicts zeros and modulation is the identity") {
  PrecisionScope p(Precision::f64);
  const DenoiserModel m(tiny(), PredictionKind::epsilon, 4);
  const auto te = prompt(5, 3, 3, 1);
  std::vector<ConditionBundle> b(4, ConditionBundle{1, &te, false});
  Tape tape(false);
  const Tensor c = m.fuse_conditions(tape, b);
  const Tensor x = Tensor::from({4, 2}, {0.1, 0.2, -1, 3, 0.5, 0.5, 2, -2});
  const std::vector<double> times{0.1, 0.4, 0.7, 1.0};
  const ForwardResult fr = m.forward(tape, x, times, c);
  for (double v : fr.prediction.values()) CHECK(v == 0.0);
  // With zero gates each block passes h through, so layer-l features equal
  // the input projection.
  const Tensor h0 = tape.linear(x, m.param("in_w"), m.param("in_b"));
  CHECK(fr.features.shape() == Shape{8, 4});
  for (std::size_t i = 0; i < h0.size(); ++i) CHECK(fr.features[i] == h0[i]);
}

TEST_CASE("fusion: zero-init MLP output gives pooled text plus class row") {
  PrecisionScope p(Precision::f64);
  const DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  const std::size_t L = 5, dt = 3, dm = 4;
  const auto te = prompt(L, dt, 3, 2);
  const ConditionBundle b{2, &te, false};
  Tape tape(false);
  const Tensor out = m.fuse_conditions(tape, std::span<const ConditionBundle>(&b, 1));

  // Hand-rolled masked kernel-3 convolution and pooling.
  const auto w = m.param("conv_w").values(), bias = m.param("conv_b").values();
  std::vector<double> pooled(dm, 0.0);
  for (std::size_t pos = 0; pos < L; ++pos) {
    if (!te.mask[pos]) continue;
    for (std::size_t o = 0; o < dm; ++o) {
      double acc = bias[o];
      for (int off = -1; off <= 1; ++off) {
        const long q = static_cast<long>(pos) + off;
        if (q < 0 || q >= static_cast<long>(L) || !te.mask[static_cast<std::size_t>(q)]) continue;
        for (std::size_t c = 0; c < dt; ++c) acc += te.tokens[static_cast<std::size_t>(q) * dt + c] * w[((off + 1) * dt + c) * dm + o];
      }
      pooled[o] += acc / 3.0;
    }
  }
  const auto e = m.param("class_emb").values();
  for (std::size_t o = 0; o < dm; ++o) CHECK(out[o] == doctest::Approx(pooled[o] + e[2 * dm + o]).epsilon(1e-12));
}

TEST_CASE("fusion: padded tokens have no influence") {
  const DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  auto a = prompt(6, 3, 2, 5);
  auto b = a;
  for (std::size_t i = 2 * 3; i < b.tokens.size(); ++i) b.tokens[i] = 9.0f;
  const ConditionBundle ba{0, &a, false}, bb{0, &b, false};
  Tape tape(false);
  const Tensor oa = m.fuse_conditions(tape, std::span<const ConditionBundle>(&ba, 1));
  const Tensor ob = m.fuse_conditions(tape, std::span<const ConditionBundle>(&bb, 1));
  CHECK(row(oa, 0) == row(ob, 0));
  // Changing an active token does change the output.
  auto c = a;
  c.tokens[0] += 1.0f;
  const ConditionBundle bc{0, &c, false};
  CHECK(row(m.fuse_conditions(tape, std::span<const ConditionBundle>(&bc, 1)), 0) != row(oa, 0));
}

TEST_CASE("fusion: same prompt, different classes differ") {
  const DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  const auto te = prompt(4, 3, 3, 6);
  const std::vector<ConditionBundle> b{{0, &te, false}, {1, &te, false}};
  Tape tape(false);
  const Tensor out = m.fuse_conditions(tape, b);
  CHECK(row(out, 0) != row(out, 1));
}

TEST_CASE("fusion: null bundles give the null vector regardless of the rest") {
  const DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  const auto te = prompt(4, 3, 3, 6);
  const std::vector<ConditionBundle> b{{0, &te, true}, {2, nullptr, true}, {1, &te, false}};
  Tape tape(false);
  const Tensor out = m.fuse_conditions(tape, b);
  const auto null = m.param("null_emb").values();
  CHECK(row(out, 0) == std::vector<double>(null.begin(), null.end()));
  CHECK(row(out, 1) == std::vector<double>(null.begin(), null.end()));
}

TEST_CASE("fusion errors") {
  const DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  const auto te = prompt(4, 3, 3, 6);
  const auto empty = prompt(4, 3, 0, 6);
  Tape tape(false);
  const ConditionBundle bad_label{3, &te, false}, no_text{0, nullptr, false}, blank{0, &empty, false};
  CHECK_THROWS_AS(m.fuse_conditions(tape, std::span<const ConditionBundle>(&bad_label, 1)), std::out_of_range);
  CHECK_THROWS(m.fuse_conditions(tape, std::span<const ConditionBundle>(&no_text, 1)));
  CHECK_THROWS(m.fuse_conditions(tape, std::span<const ConditionBundle>(&blank, 1)));
  // The class-only branch does not need text.
  CHECK_NOTHROW(m.fuse_conditions(tape, std::span<const ConditionBundle>(&no_text, 1), {false, true}));
}

TEST_CASE("full-model gradients match finite differences") {
  PrecisionScope p(Precision::f64);
  DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  randomize(m, 21);
  const auto te = prompt(4, 3, 3, 6);
  const std::vector<ConditionBundle> b{{0, &te, false}, {2, &te, false}, {1, nullptr, true}};
  const std::vector<double> times{0.2, 0.5, 0.9};
  Rng rng(2);
  const Tensor x = oracle::random_tensor({3, 2}, rng, false);
  std::vector<Tensor> leaves;
  for (auto& np : m.parameters()) leaves.push_back(np.tensor);
  const auto res = oracle::check_gradients(
      [&](Tape& t, std::vector<Tensor>&) {
        const Tensor c = m.fuse_conditions(t, b);
        const ForwardResult fr = m.forward(t, x, times, c);
        const Tensor phi = m.project_features(t, fr.features);
        return t.add(t.sum(t.mul(fr.prediction, fr.prediction)), t.scale(t.sum(t.tanh(phi)), 0.3));
      },
      leaves);
  CHECK(res.rel_err < 1e-4);
}

TEST_CASE("projection head") {
  PrecisionScope p(Precision::f64);
  DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  Rng rng(3);
  const Tensor f = oracle::random_tensor({6, 4}, rng, false);
  Tape tape(false);
  SUBCASE("identity configuration") {
    m.configure_identity_projection();
    const Tensor out = m.project_features(tape, f);
    for (std::size_t i = 0; i < f.size(); ++i) CHECK(out[i] == f[i]);
  }
  SUBCASE("one output row per token") {
    CHECK(m.project_features(tape, f).shape() == Shape{6, 4});
    CHECK_THROWS_AS(m.project_features(tape, Tensor::zeros({2, 3})), DimensionError);
  }
  SUBCASE("gradient check") {
    randomize(m, 5);
    std::vector<Tensor> leaves{f.clone(true)};
    for (const char* n : {"proj.lin_w", "proj.lin_b", "proj.w1", "proj.b1", "proj.w2", "proj.b2"}) leaves.push_back(m.param(n));
    const auto res = oracle::check_gradients(
        [&](Tape& t, std::vector<Tensor>& l) {
          const Tensor o = m.project_features(t, l[0]);
          return t.sum(t.mul(o, o));
        },
        leaves);
    CHECK(res.rel_err < 1e-4);
  }
}

TEST_CASE("forward is deterministic and rejects bad input") {
  DenoiserModel m(tiny(), PredictionKind::velocity, 8);
  randomize(m, 9);
  const auto te = prompt(4, 3, 2, 6);
  const std::vector<ConditionBundle> b{{0, &te, false}};
  const std::vector<double> t{0.3};
  const Tensor x = Tensor::from({1, 2}, {0.5, -0.25});
  Tape t1(false), t2(false);
  const auto a = m.forward(t1, x, t, m.fuse_conditions(t1, b)).prediction;
  const auto c = m.forward(t2, x, t, m.fuse_conditions(t2, b)).prediction;
  CHECK(row(a, 0) == row(c, 0));
  CHECK_THROWS(m.forward(t1, Tensor::from({1, 2}, {NAN, 0.0}), t, m.fuse_conditions(t1, b)));
  CHECK_THROWS_AS(m.forward(t1, Tensor::zeros({1, 3}), t, m.fuse_conditions(t1, b)), DimensionError);
}

TEST_CASE("checkpoint format") {
  DenoiserModel m(tiny(), PredictionKind::velocity, 8);
  randomize(m, 13);
  const auto bytes = m.serialize();
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "D2CM");
  const DenoiserModel back = DenoiserModel::deserialize(bytes);
  CHECK(back.dims() == m.dims());
  CHECK(back.prediction_kind() == PredictionKind::velocity);
  CHECK(back.serialize() == bytes);
  CHECK(back.fingerprint() == m.fingerprint());

  auto corrupt = bytes;
  corrupt[60] ^= 0x10;
  try {
    DenoiserModel::deserialize(corrupt);
    FAIL("expected checksum failure");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::checksum_mismatch);
  }
  auto version = bytes;
  version[4] = 2;
  try {
    DenoiserModel::deserialize(version);
    FAIL("expected version failure");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::unsupported_version);
  }
  try {
    DenoiserModel::deserialize(std::span<const std::uint8_t>(bytes).subspan(0, bytes.size() - 30));
    FAIL("expected truncation");
  } catch (const FormatError& e) {
    CHECK(e.kind() == FormatErrorKind::truncated);
  }
  auto magic = bytes;
  magic[0] = 'X';
  CHECK_THROWS_AS(DenoiserModel::deserialize(magic), FormatError);
}

TEST_CASE("clone is deep") {
  DenoiserModel m(tiny(), PredictionKind::epsilon, 8);
  DenoiserModel c = m.clone();
  c.param("in_b").mutable_values()[0] = 5.0;
  CHECK(m.param("in_b")[0] == 0.0);
  m.copy_values_from(c);
  CHECK(m.param("in_b")[0] == 5.0);
}
