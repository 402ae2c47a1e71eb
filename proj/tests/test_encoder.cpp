#include <gtest/gtest.h>

#include <cmath>

#include "c2l/contrast.hpp"
#include "c2l/encoder.hpp"
#include "c2l/mixup.hpp"
#include "support/gradcheck.hpp"

using namespace c2l;
namespace ct = c2l::testing;

namespace {

EncoderConfig tiny() {
  EncoderConfig c;
  c.height = c.width = 8;
  c.channels = {4, 4};
  c.feature_dim = 6;
  c.groups = 2;
  return c;
}

}  // namespace

TEST(EncoderConfig, ValidatesShapes) {
  EXPECT_NO_THROW(EncoderConfig{}.validate());
  auto c = tiny();
  c.height = 6;  // two pools need a multiple of 4
  EXPECT_THROW(c.validate(), std::invalid_argument);
  c = tiny();
  c.channels = {3};
  EXPECT_THROW(c.validate(), std::invalid_argument);  // not divisible by groups
}

TEST(Encoder, InitIsSeededAndNamed) {
  auto a = init_params<float>(EncoderConfig{}, 1);
  EXPECT_EQ(a, init_params<float>(EncoderConfig{}, 1));
  EXPECT_NE(a, init_params<float>(EncoderConfig{}, 2));
  EXPECT_EQ(a.at("stage0.conv.weight").shape(), (Shape{8, 1, 3, 3}));
  EXPECT_EQ(a.at("head.weight").shape(), (Shape{128, 32}));
  for (float v : a.at("stage1.norm.gamma").data()) EXPECT_EQ(v, 1.0f);
  // He scale: std of the first conv weights is near sqrt(2 / 9).
  double ss = 0;
  const auto& w = a.at("stage2.conv.weight");
  for (float v : w.data()) ss += v * v;
  EXPECT_NEAR(std::sqrt(ss / w.size()), std::sqrt(2.0 / (16 * 9)), 0.02);
}

TEST(Encoder, FeaturesAreUnitNormAndMatchTapeForward) {
  auto cfg = tiny();
  auto p = init_params<double>(cfg, 3);
  auto x = ct::random_tensor({3, 1, 8, 8}, 4, 0, 1);
  auto f = encode(p, cfg, x);
  EXPECT_EQ(f.shape(), (Shape{3, 6}));
  EXPECT_NO_THROW(require_unit_rows(f, 1e-12));
  Tape<double> tape;
  auto out = encoder_forward(tape, p, cfg, x);
  EXPECT_EQ(out.features.value(), f);
  EXPECT_EQ(encode_backbone(p, cfg, x), out.backbone.value());
}

TEST(Encoder, SamplesAreIndependent) {
  auto cfg = tiny();
  auto p = init_params<double>(cfg, 3);
  auto x = ct::random_tensor({2, 1, 8, 8}, 5, 0, 1);
  auto both = encode(p, cfg, x);
  Tensor<double> second({1, 1, 8, 8}, std::vector<double>(x.data().begin() + 64, x.data().end()));
  auto alone = encode(p, cfg, second);
  for (std::size_t k = 0; k < 6; ++k) EXPECT_NEAR(both[6 + k], alone[k], 1e-12);
}

// End to end: encoder on two views, mixed views, C2L loss against a queue,
// differentiated with respect to every encoder parameter.
TEST(Encoder, CompositeLossGradientMatchesFiniteDifferences) {
  auto cfg = tiny();
  auto base = init_params<double>(cfg, 7);
  auto v1 = ct::random_tensor({2, 1, 8, 8}, 8, 0, 1);
  MixSpec spec{0.35, {1, 0}};
  auto v1m_images = batch_mixup(ImageBatch(v1.cast<float>()), spec).pixels().cast<double>();
  auto queue = MemoryQueue<double>::random(5, cfg.feature_dim, {0, 0, stream::kQueue, 0, 0});
  auto teacher = clone_params(base, Role::teacher);
  FeatureBatch<double> v2a{encode(teacher, cfg, ct::random_tensor({2, 1, 8, 8}, 9, 0, 1)), Provenance::v2A};
  FeatureBatch<double> v2m{feature_mixup(v2a.rows, spec), Provenance::v2M};
  FeatureBatch<double> vm{feature_mixup(v2a.rows, spec), Provenance::vm};

  // Parameters are rebound per evaluation, so the oracle runs here instead of
  // through the generic helper.
  auto loss_of = [&](NetworkParams<double>& p, Tape<double>& tape) {
    auto a = encoder_forward(tape, p, cfg, v1);
    auto m = encoder_forward(tape, p, cfg, v1m_images);
    return c2l_loss(a.features, m.features, v2a, v2m, vm, queue, ContrastOptions{0.5}).total;
  };
  NetworkParams<double> p = base;
  {
    Tape<double> tape;
    tape.backward(loss_of(p, tape));
  }
  const double h = 1e-4;
  double worst = 0;
  std::size_t checked = 0;
  for (std::size_t e = 0; e < p.size(); ++e) {
    for (std::size_t i = 0; i < p.entries[e].tensor.size(); ++i) {
      NetworkParams<double> q = base;
      for (auto& x : q.entries) x.tensor.set_requires_grad(false);
      q.entries[e].tensor[i] += h;
      Tape<double> t1;
      const double up = loss_of(q, t1).value()[0];
      q.entries[e].tensor[i] -= 2 * h;
      Tape<double> t2;
      const double down = loss_of(q, t2).value()[0];
      const double numeric = (up - down) / (2 * h);
      worst = std::max(worst, ct::relative_error(p.entries[e].tensor.grad()[i], numeric));
      ++checked;
    }
  }
  EXPECT_GT(checked, 200u);
  EXPECT_LT(worst, 1e-3);
}
