#include <gtest/gtest.h>

#include <algorithm>
#include <numeric>
#include <random>

#include "deepdisaster/evaluation.hpp"
#include "deepdisaster/scoring.hpp"
#include "support.hpp"

using namespace deepdisaster;
using dd_test::TempDir;

namespace {

AnomalyScore with_raw(double raw) {
  AnomalyScore s;
  s.raw = raw;
  return s;
}

ImageBatch small_batch(int n, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  ImageBatch b;
  b.pixels = Tensor({n, 1, 32, 32});
  for (double& v : b.pixels.values()) v = u(rng);
  for (int i = 0; i < n; ++i) b.sample_ids.push_back("s" + std::to_string(i));
  return b;
}

}  // namespace

TEST(CombineScore, WeightedSumWithPerLayerAlpha) {
  const auto c = default_config();
  const std::vector<LayerDiscrepancy> layers{{CriticalLayer::generated_image, 0.5, 0.25, 2.0},
                                             {CriticalLayer::discriminator_features, 1.0, 0.5, 0.1}};
  EXPECT_NEAR(combine_score(0.3, 0.7, layers, c), 0.4 * 0.3 + 0.2 * 0.7 + 0.4 * (0.5 + 2.0 * 0.25 + 1.0 + 0.1 * 0.5),
              1e-15);
  EXPECT_NEAR(combine_score(0.3, 0.7, {}, c), 0.4 * 0.3 + 0.2 * 0.7, 1e-15);
}

TEST(ScoreBatch, IdenticalNetworksHaveNoDiscrepancy) {
  auto cfg = dd_test::tiny_config();
  cfg.equal_size_student = true;
  GanPair net(make_arch(cfg, Role::student));
  net.init(3);
  GanPair copy = net;
  const auto scores = score_batch(net, &copy, Alphas{0.3, 1.7, 1.0}, cfg, small_batch(3, 1));
  for (const auto& s : scores) {
    EXPECT_EQ(s.v_term, 0.0);
    EXPECT_NEAR(s.d_term, 0.0, 1e-12);
    EXPECT_NEAR(s.raw, cfg.omega_l * s.l_term + cfg.omega_r * s.r_term, 1e-12);
    EXPECT_EQ(s.layers.size(), 2u);
  }
}

TEST(ScoreBatch, ReconstructionOnlyWeights) {
  auto cfg = dd_test::tiny_config();
  cfg.omega_l = 1.0;
  cfg.omega_r = cfg.omega_vd = 0.0;
  auto st = build_student_teacher(cfg);
  const auto batch = small_batch(4, 2);
  const auto scores = score_batch(st.student, &st.teacher, Alphas{}, cfg, batch);
  const auto xhat = st.student.generator.forward(batch.pixels, false).x_hat;
  for (int i = 0; i < 4; ++i) {
    double l1 = 0;
    const auto xs = batch.pixels.sample(i), hs = xhat.sample(i);
    for (std::size_t j = 0; j < xs.size(); ++j) l1 += std::abs(xs[j] - hs[j]);
    EXPECT_NEAR(scores[i].raw, l1 / xs.size(), 1e-12);
    EXPECT_EQ(scores[i].raw, scores[i].l_term);
  }
}

TEST(ScoreBatch, DeterministicAndBounded) {
  auto cfg = dd_test::tiny_config();
  cfg.critical_layers = {CriticalLayer::generated_image, CriticalLayer::discriminator_features,
                         CriticalLayer::bottleneck_z};
  auto st = build_student_teacher(cfg);
  const auto batch = small_batch(5, 3);
  const Alphas a{0.4, 0.9, 1.2};
  const auto x = score_batch(st.student, &st.teacher, a, cfg, batch);
  const auto y = score_batch(st.student, &st.teacher, a, cfg, batch);
  EXPECT_EQ(x, y);
  for (const auto& s : x) {
    EXPECT_GE(s.v_term, 0.0);
    EXPECT_GE(s.d_term, 0.0);
    EXPECT_LE(s.d_term, 2.0 * 3);
    ASSERT_EQ(s.layers.size(), 3u);
    EXPECT_EQ(s.layers[2].alpha, 1.2);
    EXPECT_NEAR(s.raw, cfg.omega_l * s.l_term + cfg.omega_r * s.r_term + cfg.omega_vd * s.discrepancy(), 1e-12);
  }
}

TEST(ScoreBatch, OnlyConfiguredLayersContribute) {
  auto cfg = dd_test::tiny_config();
  cfg.critical_layers = {CriticalLayer::generated_image};
  auto st = build_student_teacher(cfg);
  const auto s = score_batch(st.student, &st.teacher, Alphas{}, cfg, small_batch(2, 4));
  ASSERT_EQ(s[0].layers.size(), 1u);
  EXPECT_EQ(s[0].layers[0].layer, CriticalLayer::generated_image);
  const auto none = score_batch(st.student, nullptr, Alphas{}, cfg, small_batch(2, 4));
  EXPECT_TRUE(none[0].layers.empty());
  EXPECT_EQ(none[0].v_term, 0.0);
}

TEST(ScoreSamples, MissingAlphasIsError) {
  TempDir dir;
  const auto data = make_synthetic_dataset(dd_test::tiny_spec(6, 2), dir.path());
  auto cfg = dd_test::tiny_config();
  auto st = build_student_teacher(cfg);
  Checkpoint s, t;
  s.nets = st.student;
  t.nets = st.teacher;
  t.role = Role::teacher;
  EXPECT_THROW(score_samples(s, &t, cfg, data, data.ids(Split::test)), ScoringError);
  s.alphas = Alphas{};
  const auto scores = score_samples(s, &t, cfg, data, data.ids(Split::test));
  EXPECT_EQ(scores.size(), data.ids(Split::test).size());
  for (const auto& x : scores) EXPECT_TRUE(x.label.has_value());
}

TEST(Normalize, Examples) {
  const auto n = normalize_scores({with_raw(2), with_raw(4), with_raw(6)});
  EXPECT_EQ(normalized_scores(n), (std::vector<double>{0.0, 0.5, 1.0}));
  set_warnings_quiet(true);
  const auto before = warning_count();
  const auto d = normalize_scores({with_raw(5), with_raw(5)});
  EXPECT_EQ(warning_count(), before + 1);
  set_warnings_quiet(false);
  EXPECT_EQ(normalized_scores(d), (std::vector<double>{0.5, 0.5}));
}

TEST(Normalize, PreservesOrderAndRange) {
  std::mt19937_64 rng(5);
  std::normal_distribution<double> g(3.0, 2.0);
  std::vector<AnomalyScore> s;
  for (int i = 0; i < 200; ++i) s.push_back(with_raw(g(rng)));
  const auto n = normalize_scores(s);
  std::vector<std::size_t> a(n.size()), b(n.size());
  std::iota(a.begin(), a.end(), 0);
  std::iota(b.begin(), b.end(), 0);
  std::stable_sort(a.begin(), a.end(), [&](auto i, auto j) { return n[i].raw < n[j].raw; });
  std::stable_sort(b.begin(), b.end(), [&](auto i, auto j) { return n[i].normalized < n[j].normalized; });
  EXPECT_EQ(a, b);
  for (const auto& x : n) {
    EXPECT_GE(x.normalized, 0.0);
    EXPECT_LE(x.normalized, 1.0);
  }
}

TEST(Threshold, MidpointExample) {
  const auto t = estimate_threshold({0.1, 0.2, 0.8, 0.9}, {0, 0, 1, 1});
  EXPECT_NEAR(t.value, 0.5, 1e-15);
  EXPECT_EQ(t.youden_j, 1.0);
  EXPECT_EQ(t.tp, 2);
  EXPECT_EQ(t.tn, 2);
  EXPECT_EQ(t.fp, 0);
  EXPECT_EQ(t.fn, 0);
}

TEST(Threshold, InvertedScoresDegenerateWithWarning) {
  set_warnings_quiet(true);
  const auto before = warning_count();
  const auto t = estimate_threshold({0.9, 0.8, 0.2, 0.1}, {0, 0, 1, 1});
  EXPECT_EQ(warning_count(), before + 1);
  set_warnings_quiet(false);
  EXPECT_EQ(t.youden_j, 0.0);
  EXPECT_EQ(t.value, 0.1);
}

TEST(Threshold, SingleClassIsError) {
  EXPECT_THROW(estimate_threshold({0.1, 0.2}, {1, 1}), std::invalid_argument);
  EXPECT_THROW(estimate_threshold({0.1, 0.2}, {0, 0}), std::invalid_argument);
}

TEST(Threshold, TranslationEquivariant) {
  std::mt19937_64 rng(6);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  set_warnings_quiet(true);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> s(10);
    std::vector<int> l(10);
    for (int i = 0; i < 10; ++i) {
      s[i] = std::round(u(rng) * 64) / 64;  // ties included
      l[i] = i % 3 == 0;
    }
    auto shifted = s;
    for (double& v : shifted) v += 3.0;
    const auto a = estimate_threshold(s, l), b = estimate_threshold(shifted, l);
    EXPECT_NEAR(b.value - a.value, 3.0, 1e-12);
    EXPECT_EQ(a.youden_j, b.youden_j);
  }
  set_warnings_quiet(false);
}

TEST(Threshold, MatchesExhaustiveSweep) {
  // Oracle: try every cut in the candidate set, keep the first maximum.
  std::mt19937_64 rng(7);
  std::uniform_int_distribution<int> k(0, 6);
  set_warnings_quiet(true);
  for (int trial = 0; trial < 300; ++trial) {
    std::vector<double> s(9);
    std::vector<int> l(9);
    for (int i = 0; i < 9; ++i) {
      s[i] = k(rng) * 0.125;
      l[i] = i < 4;
    }
    std::vector<double> u = s;
    std::sort(u.begin(), u.end());
    u.erase(std::unique(u.begin(), u.end()), u.end());
    double best_j = -2, best_cut = 0;
    for (std::size_t c = 0; c < u.size(); ++c) {
      const double cut = c == 0 ? u[0] : (u[c - 1] + u[c]) / 2;
      int tp = 0, fp = 0;
      for (int i = 0; i < 9; ++i)
        if (s[i] >= cut) (l[i] ? tp : fp)++;
      const double j = tp / 4.0 - fp / 5.0;
      if (j > best_j + 1e-15) best_j = j, best_cut = cut;
    }
    const auto t = estimate_threshold(s, l);
    EXPECT_NEAR(t.youden_j, best_j, 1e-15);
    EXPECT_EQ(t.value, best_cut);
  }
  set_warnings_quiet(false);
}

TEST(ScoresCsv, RoundTripAndRawRecomputation) {
  TempDir dir;
  auto cfg = dd_test::tiny_config();
  auto st = build_student_teacher(cfg);
  auto scores = score_batch(st.student, &st.teacher, Alphas{0.2, 0.8, 1.0}, cfg, small_batch(6, 8));
  for (std::size_t i = 0; i < scores.size(); ++i) scores[i].label = i % 2 ? Label::damage : Label::no_damage;
  scores = normalize_scores(std::move(scores));
  write_scores_csv(scores, dir / "scores.csv", "# tool: t\n");
  const std::string text = dd_test::read_file(dir / "scores.csv");
  EXPECT_EQ(text.rfind("# tool: t\nsample_id,label,l_term,r_term,v_term,d_term,raw,normalized", 0), 0u);
  const auto back = read_scores_csv(dir / "scores.csv");
  EXPECT_EQ(back, scores);
  for (const auto& s : back)
    EXPECT_NEAR(combine_score(s.l_term, s.r_term, s.layers, cfg), s.raw, 1e-9);
  const auto labels = binary_labels(back);
  EXPECT_EQ(auc_roc(raw_scores(back), labels), auc_roc(normalized_scores(back), labels));
}
