#include <gtest/gtest.h>

#include <cmath>
#include <random>

#include <opencv2/imgcodecs.hpp>

#include "deepdisaster/localization.hpp"
#include "support.hpp"

using namespace deepdisaster;
using dd_test::TempDir;

namespace {

// 8x8, depth 2, single channel: small enough for finite differences over every pixel.
struct Toy {
  ExperimentConfig cfg;
  GanPair student, teacher;
  FrozenModels models;

  Toy() {
    cfg = default_config();
    cfg.channels = 1;
    cfg.latent_dim = 4;
    cfg.critical_layers = {CriticalLayer::generated_image, CriticalLayer::discriminator_features,
                           CriticalLayer::bottleneck_z};
    // built from the architecture directly: the config validator insists on images of at least 32
    student = GanPair(arch(Role::student, 2));
    teacher = GanPair(arch(Role::teacher, 4));
    student.init(init_seed(1, Role::student));
    teacher.init(init_seed(1, Role::teacher));
    models = FrozenModels{&student, &teacher, Alphas{0.7, 1.3, 0.9}};
  }

  static NetworkArch arch(Role role, int width) {
    NetworkArch a;
    a.role = role;
    a.base_width = width;
    a.image_size = 8;
    a.channels = 1;
    a.latent_dim = 4;
    a.depth = 2;
    return a;
  }
};

Tensor image(int size, int channels, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Tensor x({1, channels, size, size});
  for (double& v : x.values()) v = u(rng);
  return x;
}

}  // namespace

TEST(ObjectiveGradient, MatchesFiniteDifferences) {
  Toy t;
  const Tensor x = image(8, 1, 1);
  const Tensor g = objective_gradient(t.models, t.cfg, x).grad_x;
  ASSERT_EQ(g.shape(), x.shape());
  const double eps = 1e-5;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    Tensor a = x, b = x;
    a[i] += eps;
    b[i] -= eps;
    const double fd = (objective_value(t.models, t.cfg, a) - objective_value(t.models, t.cfg, b)) / (2 * eps);
    worst = std::max(worst, std::abs(fd - g[i]) / std::max(1.0, std::abs(fd)));
  }
  EXPECT_LT(worst, 1e-4);
}

TEST(ObjectiveGradient, StudentOnlyMatchesFiniteDifferences) {
  Toy t;
  t.models.teacher = nullptr;
  const Tensor x = image(8, 1, 2);
  const Tensor g = objective_gradient(t.models, t.cfg, x).grad_x;
  const double eps = 1e-5;
  for (std::size_t i : {0u, 9u, 27u, 63u}) {
    Tensor a = x, b = x;
    a[i] += eps;
    b[i] -= eps;
    const double fd = (objective_value(t.models, t.cfg, a) - objective_value(t.models, t.cfg, b)) / (2 * eps);
    EXPECT_NEAR(g[i], fd, 1e-4 * std::max(1.0, std::abs(fd)));
  }
}

TEST(Saliency, AllWeightsZeroGiveZeroMap) {
  Toy t;
  t.cfg.lambda_adv = t.cfg.lambda_con = t.cfg.lambda_lat = 0.0;
  t.cfg.lambda_kg = t.cfg.lambda_kd = t.cfg.lambda_kz = 0.0;
  const auto m = vanilla_gradient(t.models, t.cfg, image(8, 1, 3));
  for (double v : m.raw.values()) EXPECT_EQ(v, 0.0);
  for (double v : m.map.values()) EXPECT_EQ(v, 0.0);
}

TEST(Saliency, MapShapeAndRange) {
  Toy t;
  for (auto m : {vanilla_gradient(t.models, t.cfg, image(8, 1, 4), "a"),
                 guided_backprop(t.models, t.cfg, image(8, 1, 4), "a"),
                 smooth_gradient(t.models, t.cfg, image(8, 1, 4), 3, 0.1, 5, "a")}) {
    EXPECT_EQ(m.sample_id, "a");
    EXPECT_EQ(m.map.shape(), (Shape{8, 8}));
    double mn = 1, mx = 0;
    for (double v : m.map.values()) mn = std::min(mn, v), mx = std::max(mx, v);
    EXPECT_EQ(mn, 0.0);
    EXPECT_EQ(mx, 1.0);
  }
}

TEST(Saliency, SmoothGradWithZeroSigmaIsVanilla) {
  Toy t;
  const Tensor x = image(8, 1, 6);
  const auto v = vanilla_gradient(t.models, t.cfg, x);
  const auto s = smooth_gradient(t.models, t.cfg, x, 5, 0.0, 99);
  EXPECT_EQ(v.raw, s.raw);
  EXPECT_EQ(v.map, s.map);
  EXPECT_EQ(s.n, 5);
}

TEST(Saliency, SmoothGradIsSeededMeanOfNoisyGradients) {
  Toy t;
  const Tensor x = image(8, 1, 7);
  const auto a = smooth_gradient(t.models, t.cfg, x, 4, 0.2, 17);
  const auto b = smooth_gradient(t.models, t.cfg, x, 4, 0.2, 17);
  const auto c = smooth_gradient(t.models, t.cfg, x, 4, 0.2, 18);
  EXPECT_EQ(a.raw, b.raw);
  EXPECT_NE(a.raw, c.raw);

  // Oracle: regenerate the same noise stream and average explicitly.
  std::mt19937_64 rng(17);
  std::normal_distribution<double> noise(0.0, 0.2);
  Tensor sum(x.shape());
  for (int k = 0; k < 4; ++k) {
    Tensor xn = x;
    for (double& v : xn.values()) v += noise(rng);
    sum += objective_gradient(t.models, t.cfg, xn).grad_x;
  }
  for (std::size_t i = 0; i < sum.size(); ++i) EXPECT_NEAR(a.raw[i], sum[i] / 4, 1e-12 * (1 + std::abs(sum[i])));
}

TEST(Saliency, RejectsBadArguments) {
  Toy t;
  EXPECT_THROW(smooth_gradient(t.models, t.cfg, image(8, 1, 1), 0, 0.1, 1), std::invalid_argument);
  EXPECT_THROW(smooth_gradient(t.models, t.cfg, image(8, 1, 1), 2, -1.0, 1), std::invalid_argument);
  Tensor two({2, 1, 8, 8});
  EXPECT_THROW(vanilla_gradient(t.models, t.cfg, two), std::invalid_argument);
  EXPECT_EQ(saliency_method_from_string("guided"), SaliencyMethod::guided);
  EXPECT_THROW(saliency_method_from_string("gradcam"), std::invalid_argument);
}

TEST(Saliency, GuidedDiffersFromVanillaButIsDeterministic) {
  Toy t;
  const Tensor x = image(8, 1, 8);
  const auto g1 = guided_backprop(t.models, t.cfg, x);
  const auto g2 = guided_backprop(t.models, t.cfg, x);
  EXPECT_EQ(g1.raw, g2.raw);
  EXPECT_NE(g1.raw, vanilla_gradient(t.models, t.cfg, x).raw);
}

TEST(Postprocess, ChannelReductionAndConstantMaps) {
  SaliencyMap m;
  m.raw = Tensor({1, 2, 1, 2}, {1.0, -3.0, -2.0, 1.0});
  postprocess(m, ChannelReduction::max);
  EXPECT_EQ(m.reduced, Tensor({1, 2}, {2.0, 3.0}));
  EXPECT_EQ(m.map, Tensor({1, 2}, {0.0, 1.0}));
  postprocess(m, ChannelReduction::mean);
  EXPECT_EQ(m.reduced, Tensor({1, 2}, {1.5, 2.0}));

  m.raw = Tensor({1, 1, 2, 2}, 0.5);
  postprocess(m, ChannelReduction::max);
  EXPECT_EQ(m.map, Tensor({2, 2}, 1.0));
  m.raw = Tensor({1, 1, 2, 2}, 0.0);
  postprocess(m, ChannelReduction::max);
  EXPECT_EQ(m.map, Tensor({2, 2}, 0.0));
}

TEST(Quality, Examples) {
  const DefectBox box{"b", 2, 2, 4, 4};
  EXPECT_NEAR(saliency_quality(Tensor({8, 8}, 0.3), box), 1.0, 1e-6);

  Tensor indicator({8, 8});
  for (int y = 2; y < 4; ++y)
    for (int x = 2; x < 4; ++x) indicator[y * 8 + x] = 1.0;
  EXPECT_NEAR(saliency_quality(indicator, box), 1e8, 1.0);

  Tensor checker({8, 8});
  for (int y = 0; y < 8; ++y)
    for (int x = 0; x < 8; ++x) checker[y * 8 + x] = (x + y) % 2;
  EXPECT_NEAR(saliency_quality(checker, box), 1.0, 1e-6);
}

TEST(Quality, RejectsBadBoxes) {
  const Tensor m({8, 8}, 1.0);
  EXPECT_THROW(saliency_quality(m, DefectBox{"b", 3, 3, 3, 5}), std::invalid_argument);
  EXPECT_THROW(saliency_quality(m, DefectBox{"b", 5, 1, 2, 4}), std::invalid_argument);
  EXPECT_THROW(saliency_quality(m, DefectBox{"b", 6, 6, 10, 8}), std::invalid_argument);
  EXPECT_THROW(saliency_quality(m, DefectBox{"b", 0, 0, 8, 8}), std::invalid_argument);
  EXPECT_THROW(saliency_quality(Tensor({1, 8, 8}), DefectBox{"b", 0, 0, 2, 2}), std::invalid_argument);
}

TEST(Heatmap, SizeDeterminismAndZeroMap) {
  TempDir dir;
  const Tensor x = image(16, 3, 9);
  Tensor map({16, 16});
  for (std::size_t i = 0; i < map.size(); ++i) map[i] = static_cast<double>(i) / map.size();
  export_heatmap(map, x, dir / "a.png", "# run: t\n");
  export_heatmap(map, x, dir / "b.png", "# run: t\n");
  EXPECT_EQ(dd_test::read_file(dir / "a.png"), dd_test::read_file(dir / "b.png"));
  const cv::Mat a = cv::imread((dir / "a.png").string(), cv::IMREAD_COLOR);
  EXPECT_EQ(a.rows, 16);
  EXPECT_EQ(a.cols, 16);
  EXPECT_NE(dd_test::read_file(dir / "a.png").find("run: t"), std::string::npos);

  export_heatmap(Tensor({16, 16}), x, dir / "zero.png");
  const cv::Mat z = cv::imread((dir / "zero.png").string(), cv::IMREAD_COLOR);
  const cv::Mat base = tensor_to_image(x);
  for (int y = 0; y < 16; ++y)
    for (int c = 0; c < 16; ++c)
      for (int k = 0; k < 3; ++k)
        EXPECT_EQ(z.at<cv::Vec3b>(y, c)[k], std::lround(0.5 * base.at<cv::Vec3b>(y, c)[k]));

  EXPECT_THROW(export_heatmap(Tensor({8, 8}), x, dir / "bad.png"), std::invalid_argument);
}
