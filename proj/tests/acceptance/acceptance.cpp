// Acceptance run: one PASS/FAIL line per criterion, exit status 1 if any fails.
// Usage: acceptance [--only N[,N...]] [--keep DIR]
#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <iostream>
#include <map>
#include <numeric>
#include <optional>
#include <random>
#include <set>
#include <sstream>
#include <sys/wait.h>

#include "deepdisaster/ablation.hpp"
#include "deepdisaster/checkpoint.hpp"
#include "deepdisaster/evaluation.hpp"
#include "deepdisaster/localization.hpp"
#include "deepdisaster/losses.hpp"
#include "deepdisaster/scoring.hpp"
#include "deepdisaster/training.hpp"
#include "support.hpp"

using namespace deepdisaster;
namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

namespace {

// Tolerances and budgets, pinned.
constexpr double kLossTol = 1e-9;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradMinMagnitude = 1e-6;
constexpr double kGradPixelShare = 0.95;
constexpr double kAucFloor = 0.85;
constexpr double kQualityRatio = 1.5;
constexpr double kQualityShare = 0.70;
constexpr double kRawTol = 1e-9;
constexpr double kLossSeconds = 10, kGradSeconds = 120, kAucSeconds = 10, kEndToEndSeconds = 20 * 60;

struct Outcome {
  bool pass = true;
  std::string detail;
};

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

std::string fmt(double v, int prec = 4) {
  std::ostringstream os;
  os.precision(prec);
  os << v;
  return os.str();
}

// Collects failed sub-checks so a FAIL line says which part broke.
struct Checks {
  std::vector<std::string> failed;
  int count = 0;
  void expect(bool ok, const std::string& what) {
    ++count;
    if (!ok) failed.push_back(what);
  }
  void near(double got, double want, double tol, const std::string& what) {
    expect(std::abs(got - want) <= tol, what + " = " + fmt(got, 17) + " (want " + fmt(want, 17) + ")");
  }
  Outcome outcome(const std::string& summary) const {
    Outcome o{failed.empty(), summary};
    for (const auto& f : failed) o.detail += "; failed: " + f;
    return o;
  }
};

// ---------------------------------------------------------------------------
// 1. loss oracles

Outcome criterion_losses() {
  const auto t0 = Clock::now();
  Checks c;
  using V = std::vector<double>;
  auto val = [](V a, V b) { return loss_val(a, b); };
  auto dir = [](V a, V b) { return loss_dir(a, b); };
  c.near(val({1, 2, 3}, {1, 2, 3}), 0.0, kLossTol, "loss_val identical");
  c.near(val({0, 0}, {2, 2}), 4.0, kLossTol, "loss_val [0,0] [2,2]");
  c.near(val({1}, {-1}), 4.0, kLossTol, "loss_val [1] [-1]");
  c.near(dir({3, 4}, {3, 4}), 0.0, kLossTol, "loss_dir parallel");
  c.near(dir({1, 0}, {0, 1}), 1.0, kLossTol, "loss_dir orthogonal");
  c.near(dir({1, 1}, {-1, -1}), 2.0, kLossTol, "loss_dir antiparallel");
  bool threw = false;
  try {
    dir({0, 0}, {1, 1});
  } catch (const std::exception&) {
    threw = true;
  }
  c.expect(threw, "loss_dir zero vector raises");

  // loss_kg: [2,0] vs [0,2] has val 4 and dir 1
  const Tensor a({1, 2}, {2.0, 0.0}), b({1, 2}, {0.0, 2.0});
  c.near(loss_kg(a, a, 2.0), 0.0, kLossTol, "loss_kg identical");
  c.near(loss_kg(a, b, 2.0), 6.0, kLossTol, "loss_kg 4 + 2*1");
  c.near(loss_kg(a, b, 0.0), loss_val(a.values(), b.values()), 0.0, "loss_kg alpha 0");
  std::mt19937_64 rng(1);
  std::normal_distribution<double> g;
  Tensor f({2, 3, 2, 2});
  for (double& x : f.values()) x = g(rng);
  Tensor shifted = f;
  for (double& x : shifted.values()) x += 0.75;
  c.near(loss_kd(f, f, 1.3), 0.0, kLossTol, "loss_kd identical");
  c.near(loss_val(f.values(), shifted.values()), 0.5625, kLossTol, "loss_kd offset val part");
  c.near(loss_kd(f, shifted, 0.0), loss_val(f.values(), shifted.values()), 0.0, "loss_kd alpha 0");

  const double eps = kProbEpsilon;
  c.near(loss_adv(V{1 - eps}, V{eps}).disc_term, 0.0, 1e-6, "loss_adv perfect D");
  c.near(loss_adv(V{0.5}, V{0.5}).disc_term, 2 * std::log(2.0), kLossTol, "loss_adv disc 2 ln 2");
  c.near(loss_adv(V{0.5}, V{0.5}).gen_term, std::log(2.0), kLossTol, "loss_adv gen ln 2");
  c.near(loss_con(V{0.3, -0.2}, V{0.3, -0.2}), 0.0, kLossTol, "loss_con identical");
  c.near(loss_con(V(16, 1.0), V(16, 0.0)), 1.0, kLossTol, "loss_con uniform gap");
  c.near(loss_con(V{-1, 1}, V{1, -1}), 2.0, kLossTol, "loss_con [-1,1]");
  c.near(loss_lat(V{1, 2}, V{1, 2}), 0.0, kLossTol, "loss_lat identical");
  c.near(loss_lat(V(5, 3.0), V(5, 0.0)), 9.0, kLossTol, "loss_lat gap 3");
  c.near(loss_lat(V{2}, V{-1}), 9.0, kLossTol, "loss_lat [2] [-1]");

  const auto cfg = default_config();
  c.near(total_loss(LossBreakdown{}, cfg), 0.0, kLossTol, "total_loss zero");
  LossBreakdown ones;
  ones.l_adv = ones.l_con = ones.l_lat = ones.l_kg = ones.l_kd = 1.0;
  c.near(total_loss(ones, cfg), 73.0, kLossTol, "total_loss 73");
  auto doubled = cfg;
  doubled.lambda_kg *= 2;
  LossBreakdown p = ones;
  p.l_kg = 0.37;
  c.near(total_loss(p, doubled) - total_loss(p, cfg), 0.37 * 50, kLossTol, "total_loss lambda_kg linearity");

  c.near(calibrate_alpha(0.5, 0.5), 1.0, kLossTol, "calibrate_alpha equal");
  c.near(calibrate_alpha(2.0, 0.5), 4.0, kLossTol, "calibrate_alpha ratio");
  c.near(calibrate_alpha(0.0, 0.3), 0.0, kLossTol, "calibrate_alpha zero");

  // random pairs: scale invariance and range of the direction loss
  std::uniform_real_distribution<double> scale(0.01, 100.0);
  std::uniform_int_distribution<int> len(1, 40);
  int bad_scale = 0, bad_range = 0;
  for (int i = 0; i < 1000; ++i) {
    V x(len(rng)), y;
    for (double& v : x) v = g(rng);
    y.resize(x.size());
    for (double& v : y) v = g(rng);
    const double d = loss_dir(x, y);
    if (d < 0.0 || d > 2.0) ++bad_range;
    V xs = x, ys = y;
    const double cx = scale(rng), cy = scale(rng);
    for (double& v : xs) v *= cx;
    for (double& v : ys) v *= cy;
    if (std::abs(loss_dir(xs, y) - d) > kLossTol || std::abs(loss_dir(x, ys) - d) > kLossTol) ++bad_scale;
  }
  c.expect(bad_range == 0, std::to_string(bad_range) + " pairs outside [0, 2]");
  c.expect(bad_scale == 0, std::to_string(bad_scale) + " pairs not scale invariant");
  const double t = seconds_since(t0);
  c.expect(t < kLossSeconds, "runtime " + fmt(t) + " s");
  return c.outcome(std::to_string(c.count) + " checks incl. 1000 random pairs, " + fmt(t, 2) + " s");
}

// ---------------------------------------------------------------------------
// 2. input gradient of the full objective vs central differences

NetworkArch toy_arch(Role role, int width, int channels) {
  NetworkArch a;
  a.role = role;
  a.base_width = width;
  a.image_size = 8;
  a.channels = channels;
  a.latent_dim = 4;
  a.depth = 2;
  return a;
}

Outcome criterion_gradient() {
  const auto t0 = Clock::now();
  auto cfg = default_config();
  cfg.channels = 3;
  cfg.latent_dim = 4;
  GanPair student(toy_arch(Role::student, 4, 3)), teacher(toy_arch(Role::teacher, 8, 3));
  student.init(init_seed(5, Role::student));
  teacher.init(init_seed(5, Role::teacher));
  FrozenModels m{&student, &teacher, Alphas{0.8, 1.4, 1.0}};

  std::mt19937_64 rng(21);
  std::uniform_real_distribution<double> u(-0.9, 0.9);
  Tensor x({1, 3, 8, 8});
  for (double& v : x.values()) v = u(rng);
  const Tensor grad = objective_gradient(m, cfg, x).grad_x;
  const double h = 1e-5;
  int considered = 0, agree = 0;
  double worst = 0.0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    if (std::abs(grad[i]) <= kGradMinMagnitude) continue;
    Tensor a = x, b = x;
    a[i] += h;
    b[i] -= h;
    const double fd = (objective_value(m, cfg, a) - objective_value(m, cfg, b)) / (2 * h);
    const double rel = std::abs(fd - grad[i]) / std::max(std::abs(fd), std::abs(grad[i]));
    worst = std::max(worst, rel);
    ++considered;
    if (rel <= kGradRelTol) ++agree;
  }
  const double share = considered ? static_cast<double>(agree) / considered : 0.0;
  const double t = seconds_since(t0);
  Checks c;
  c.expect(considered > 0, "no pixel above the gradient floor");
  c.expect(share >= kGradPixelShare, "agreeing share " + fmt(share));
  c.expect(t < kGradSeconds, "runtime " + fmt(t) + " s");
  return c.outcome(std::to_string(agree) + "/" + std::to_string(considered) + " pixels within rel " + fmt(kGradRelTol) +
                   " (worst " + fmt(worst, 3) + "), " + fmt(t, 2) + " s");
}

// ---------------------------------------------------------------------------
// 3. AUC vs exhaustive pairwise count

Outcome criterion_auc() {
  const auto t0 = Clock::now();
  std::mt19937_64 rng(33);
  std::uniform_int_distribution<int> len(2, 12), level(0, 5), bit(0, 1);
  int mismatches = 0, with_ties = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const int n = len(rng);
    std::vector<double> s(n);
    std::vector<int> l(n);
    for (int i = 0; i < n; ++i) {
      s[i] = level(rng) * 0.2;
      l[i] = bit(rng);
    }
    l[0] = 0;
    l[1] = 1;
    std::set<double> distinct(s.begin(), s.end());
    with_ties += distinct.size() < s.size();
    double wins = 0, pairs = 0;
    for (int i = 0; i < n; ++i)
      for (int j = 0; j < n; ++j)
        if (l[i] == 1 && l[j] == 0) {
          pairs += 1;
          wins += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        }
    if (auc_roc(s, l) != wins / pairs) ++mismatches;
  }
  const double t = seconds_since(t0);
  Checks c;
  c.expect(mismatches == 0, std::to_string(mismatches) + " mismatches");
  c.expect(t < kAucSeconds, "runtime " + fmt(t) + " s");
  return c.outcome("1000 instances (" + std::to_string(with_ties) + " with ties) exactly equal, " + fmt(t, 2) + " s");
}

// ---------------------------------------------------------------------------
// 4-6, 9: shared end-to-end run

struct EndToEnd {
  fs::path root;
  DatasetIndex data;
  ExperimentConfig cfg;
  std::optional<TrainResult> teacher, student;
  std::uint64_t teacher_checksum_before = 0, teacher_checksum_after = 0;
  ClassResult result;
  double seconds = 0.0;
  std::string error;
};

EndToEnd run_end_to_end(const fs::path& work) {
  EndToEnd e;
  const auto t0 = Clock::now();
  try {
    e.root = work / "synthetic";
    SyntheticSpec spec;  // 200 normal, 50 anomalous, 64x64
    e.data = make_synthetic_dataset(spec, e.root);
    e.cfg = default_config();
    e.cfg.teacher_epochs = 10;
    e.cfg.epochs = 30;
    TrainOptions opt;
    opt.progress = &std::cerr;
    opt.checkpoint_path = work / "teacher.ckpt";
    e.teacher = pretrain_teacher(e.cfg, e.data, opt);
    e.teacher_checksum_before = e.teacher->checkpoint.nets.checksum();
    opt.checkpoint_path = work / "student.ckpt";
    e.student = train_student(e.cfg, e.teacher->checkpoint, e.data, opt);
    e.teacher_checksum_after = e.teacher->checkpoint.nets.checksum();
    ModelPair pair{e.student->checkpoint, e.teacher->checkpoint};
    e.result = evaluate_class(pair, e.data, spec.class_name, e.cfg);
  } catch (const std::exception& ex) {
    e.error = ex.what();
  }
  e.seconds = seconds_since(t0);
  return e;
}

Outcome failed_run(const EndToEnd& e) { return {false, "end-to-end run failed: " + e.error}; }

std::pair<double, double> class_means(const std::vector<AnomalyScore>& s, const std::function<double(const AnomalyScore&)>& f) {
  double a = 0, n = 0;
  int na = 0, nn = 0;
  for (const auto& x : s)
    if (*x.label == Label::damage) a += f(x), ++na;
    else n += f(x), ++nn;
  return {a / na, n / nn};
}

Outcome criterion_end_to_end(const EndToEnd& e) {
  if (!e.error.empty()) return failed_run(e);
  const auto [dmg, ok] = class_means(e.result.scores, [](const AnomalyScore& s) { return s.raw; });
  Checks c;
  c.expect(e.result.auc >= kAucFloor, "AUC-ROC " + fmt(e.result.auc));
  c.expect(dmg > ok, "mean raw damage " + fmt(dmg) + " <= no_damage " + fmt(ok));
  c.expect(e.seconds <= kEndToEndSeconds, "runtime " + fmt(e.seconds) + " s");
  return c.outcome("AUC-ROC " + fmt(e.result.auc) + " on " + std::to_string(e.result.counts.test) +
                   " test images, mean raw damage " + fmt(dmg) + " vs no_damage " + fmt(ok) + ", " +
                   fmt(e.seconds, 4) + " s");
}

Outcome criterion_discrepancy(const EndToEnd& e) {
  if (!e.error.empty()) return failed_run(e);
  const auto [dmg, ok] = class_means(e.result.scores, [](const AnomalyScore& s) { return s.discrepancy(); });
  Checks c;
  c.expect(dmg > ok, "mean v + alpha d damage " + fmt(dmg) + " <= no_damage " + fmt(ok));
  return c.outcome("mean v + alpha d: damage " + fmt(dmg) + " vs no_damage " + fmt(ok));
}

double mean_pixel_variance(const std::vector<Tensor>& maps) {
  const std::size_t n = maps.size(), px = maps[0].size();
  double total = 0.0;
  for (std::size_t i = 0; i < px; ++i) {
    double m = 0.0;
    for (const auto& t : maps) m += t[i];
    m /= n;
    double v = 0.0;
    for (const auto& t : maps) v += (t[i] - m) * (t[i] - m);
    total += v / (n - 1);
  }
  return total / px;
}

Outcome criterion_localization(EndToEnd& e) {
  if (!e.error.empty()) return failed_run(e);
  const auto t0 = Clock::now();
  std::map<std::string, DefectBox> boxes;
  for (const auto& b : read_manifest(manifest_path(e.root))) boxes[b.sample_id] = b;
  FrozenModels m{&e.student->checkpoint.nets, &e.teacher->checkpoint.nets, *e.student->checkpoint.alphas};
  const double sigma = 2.0 * e.cfg.smoothgrad_sigma_fraction;  // pixel range is 2 wide

  int anomalous = 0, good = 0, guided_negative = 0, missing_box = 0;
  std::vector<double> ratios;
  double var_vanilla = 0.0, var_smooth = 0.0;
  int variance_images = 0;
  for (const auto& id : e.data.ids(Split::test)) {
    if (e.data.find(id).label != Label::damage) continue;
    ++anomalous;
    const ImageBatch b = load_batch(e.data, std::span<const std::string>(&id, 1), e.cfg);
    auto it = boxes.find(id);
    if (it == boxes.end()) {
      ++missing_box;
      continue;
    }
    const double q = saliency_quality(vanilla_gradient(m, e.cfg, b.pixels, id).map, it->second);
    ratios.push_back(q);
    good += q > kQualityRatio;

    const auto guided = guided_backprop(m, e.cfg, b.pixels, id);
    for (double v : guided.reduced.values()) guided_negative += v < 0.0;
    for (double v : guided.map.values()) guided_negative += v < 0.0;

    // variance over 5 noise-perturbed copies of the first five anomalous images
    if (variance_images < 5) {
      std::mt19937_64 rng(derive_seed(e.cfg.seed, 1000 + variance_images));
      std::normal_distribution<double> noise(0.0, sigma);
      std::vector<Tensor> vanilla_maps, smooth_maps;
      for (int r = 0; r < 5; ++r) {
        Tensor xr = b.pixels;
        for (double& v : xr.values()) v += noise(rng);
        vanilla_maps.push_back(vanilla_gradient(m, e.cfg, xr).map);
        smooth_maps.push_back(smooth_gradient(m, e.cfg, xr, 8, sigma, derive_seed(e.cfg.seed, 2000 + r)).map);
      }
      var_vanilla += mean_pixel_variance(vanilla_maps);
      var_smooth += mean_pixel_variance(smooth_maps);
      ++variance_images;
    }
  }
  std::sort(ratios.begin(), ratios.end());
  const double share = anomalous ? static_cast<double>(good) / anomalous : 0.0;
  const double median = ratios.empty() ? 0.0 : ratios[ratios.size() / 2];
  var_vanilla /= std::max(1, variance_images);
  var_smooth /= std::max(1, variance_images);
  Checks c;
  c.expect(missing_box == 0, std::to_string(missing_box) + " anomalous images without a manifest box");
  c.expect(share >= kQualityShare, "in/out ratio > " + fmt(kQualityRatio) + " on " + fmt(share) + " of images");
  c.expect(var_smooth < var_vanilla, "SmoothGrad variance " + fmt(var_smooth) + " >= vanilla " + fmt(var_vanilla));
  c.expect(guided_negative == 0, std::to_string(guided_negative) + " negative guided map values");
  return c.outcome(std::to_string(good) + "/" + std::to_string(anomalous) + " anomalous images with ratio > " +
                   fmt(kQualityRatio) + " (median " + fmt(median, 3) + "); pixel variance SmoothGrad " +
                   fmt(var_smooth, 3) + " vs vanilla " + fmt(var_vanilla, 3) + "; guided maps nonnegative; " +
                   fmt(seconds_since(t0), 3) + " s");
}

Outcome criterion_score_rows(const EndToEnd& e, const fs::path& work) {
  if (!e.error.empty()) return failed_run(e);
  const fs::path csv = work / "scores.csv";
  write_scores_csv(e.result.scores, csv, "# acceptance\n");
  const auto rows = read_scores_csv(csv);
  Checks c;
  c.expect(rows.size() == e.result.scores.size(), "row count");
  double worst = 0.0;
  for (const auto& s : rows) {
    // recompute from the stored components with the configured omegas and stored per-layer alphas
    double kd = 0.0;
    for (const auto& l : s.layers) kd += l.v + l.alpha * l.d;
    const double raw = e.cfg.omega_l * s.l_term + e.cfg.omega_r * s.r_term + e.cfg.omega_vd * kd;
    worst = std::max(worst, std::abs(raw - s.raw));
    double v = 0.0, d = 0.0;
    for (const auto& l : s.layers) v += l.v, d += l.d;
    worst = std::max({worst, std::abs(v - s.v_term), std::abs(d - s.d_term)});
  }
  c.expect(worst <= kRawTol, "raw reconstruction error " + fmt(worst));
  for (const auto& l : rows.front().layers) {
    const double want = l.layer == CriticalLayer::generated_image ? e.student->checkpoint.alphas->g
                        : l.layer == CriticalLayer::discriminator_features ? e.student->checkpoint.alphas->d
                                                                           : e.student->checkpoint.alphas->z;
    c.expect(l.alpha == want, "stored alpha differs from the checkpoint");
  }
  const auto labels = binary_labels(rows);
  const double a_raw = auc_roc(raw_scores(rows), labels), a_norm = auc_roc(normalized_scores(rows), labels);
  c.expect(a_raw == a_norm, "AUC raw " + fmt(a_raw, 17) + " != normalized " + fmt(a_norm, 17));
  return c.outcome(std::to_string(rows.size()) + " rows, max |raw - recomputed| " + fmt(worst, 3) +
                   ", AUC raw = normalized = " + fmt(a_raw));
}

// ---------------------------------------------------------------------------
// 7. ablation harness

Outcome criterion_ablation(const fs::path& work) {
  const auto t0 = Clock::now();
  const auto data = make_synthetic_dataset(dd_test::tiny_spec(40, 10), work / "ablation_data");
  auto cfg = dd_test::tiny_config();
  cfg.epochs = 2;
  cfg.teacher_epochs = 2;
  Checks c;
  std::string summary;
  for (auto [kind, expect_rows] : {std::pair{AblationKind::student_size, 2}, std::pair{AblationKind::training_structure, 4},
                                   std::pair{AblationKind::critical_layers, 3}}) {
    const auto a = run_ablation(kind, cfg, data);
    const auto b = run_ablation(kind, cfg, data);
    const std::string name(to_string(kind));
    c.expect(static_cast<int>(a.rows.size()) == expect_rows, name + " has " + std::to_string(a.rows.size()) + " rows");
    bool complete = true;
    for (const auto& r : a.rows)
      for (const auto& cls : a.classes) {
        auto it = r.auc.find(cls);
        complete &= it != r.auc.end() && it->second >= 0.0 && it->second <= 1.0;
      }
    c.expect(complete, name + " table has missing or invalid AUC cells");
    c.expect(a == b, name + " differs between identical runs");
    std::vector<std::string> names;
    for (const auto& r : a.rows) names.push_back(r.variant);
    c.expect(names == ablation_variants(kind), name + " variant order");
    summary += (summary.empty() ? "" : "; ") + name + " " + std::to_string(a.rows.size()) + " variants";
    write_ablation(a, work / "ablation");
    c.expect(fs::exists(work / "ablation" / ("ablation_" + name + ".csv")), name + " csv written");
  }
  return c.outcome(summary + ", each identical across two runs, " + fmt(seconds_since(t0), 3) + " s");
}

// ---------------------------------------------------------------------------
// 8. freeze, command reproducibility, checkpoint round trip

int shell(const std::string& args) {
  const std::string cmd = std::string(DD_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir))
    if (e.is_regular_file()) files[fs::relative(e.path(), dir).string()] = dd_test::read_file(e.path());
  return files;
}

Outcome criterion_reproducibility(const EndToEnd& e, const fs::path& work) {
  Checks c;
  std::string summary;
  if (e.error.empty()) {
    c.expect(e.teacher_checksum_before == e.teacher_checksum_after, "teacher changed during student training");
    c.expect(e.student->checkpoint.teacher_checksum == e.teacher_checksum_before,
             "student records a different teacher checksum");
    // reload both checkpoints from disk and compare probe forward passes bit for bit
    for (const auto* r : {&*e.teacher, &*e.student}) {
      Checkpoint loaded = load_checkpoint(r->report.checkpoint_path);
      GanPair original = r->checkpoint.nets;
      const ImageBatch probe = load_batch(e.data, e.data.ids(Split::test), e.cfg);
      const auto x = forward_network(original, probe.pixels);
      const auto y = forward_network(loaded.nets, probe.pixels);
      c.expect(x.x_hat == y.x_hat && x.z == y.z && x.f_x == y.f_x && x.f_xhat == y.f_xhat &&
                   x.logits_real == y.logits_real && x.logits_fake == y.logits_fake,
               std::string(to_string(r->checkpoint.role)) + " probe forward differs after reload");
      c.expect(loaded.alphas == r->checkpoint.alphas, "alphas differ after reload");
    }
    summary = "teacher checksum unchanged, both checkpoints reload bit-identically; ";
  } else {
    c.expect(false, "end-to-end run failed: " + e.error);
  }

  // every command twice with identical arguments; all files must match byte for byte
  const fs::path w = work / "cli";
  const std::string d = w.string();
  const std::string tiny = " --set image_size=32 --set channels=1 --set latent_dim=8 --set teacher_base_width=8"
                           " --set student_base_width=4 --set batch_size=8";
  const std::string models = " --student " + d + "/ck/student.ckpt --teacher " + d + "/ck/teacher.ckpt";
  const std::vector<std::string> commands{
      "synth --out " + d + "/data --normal 24 --anomalous 6 --size 32 --channels 1 --defect-min 6 --defect-max 10",
      "pretrain --data " + d + "/data --out " + d + "/ck --epochs 2" + tiny,
      "train --data " + d + "/data --out " + d + "/ck --teacher " + d + "/ck/teacher.ckpt --epochs 2",
      "score --data " + d + "/data --out " + d + "/score" + models,
      "localize --data " + d + "/data --out " + d + "/hm_vanilla --method vanilla --label all" + models,
      "localize --data " + d + "/data --out " + d + "/hm_smooth --method smoothgrad --n 3 --limit 4" + models,
      "localize --data " + d + "/data --out " + d + "/hm_guided --method guided --limit 4" + models,
      "eval --data " + d + "/data --out " + d + "/eval --class synthetic" + models,
      "ablate --data " + d + "/data --out " + d + "/ablate --kind student_size" + tiny +
          " --set epochs=1 --set teacher_epochs=1",
  };
  std::map<std::string, std::string> first;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& cmd : commands) {
      const int code = shell(cmd);
      c.expect(code == 0, "exit " + std::to_string(code) + ": " + cmd.substr(0, cmd.find(' ')));
    }
    if (pass == 0) first = snapshot(w);
  }
  const auto second = snapshot(w);
  int differing = 0;
  for (const auto& [name, bytes] : first) {
    auto it = second.find(name);
    if (it == second.end() || it->second != bytes) {
      ++differing;
      c.expect(false, "differs: " + name);
    }
  }
  c.expect(first.size() == second.size(), "file sets differ");
  return c.outcome(summary + std::to_string(commands.size()) + " commands run twice, " + std::to_string(first.size()) +
                   " output files, " + std::to_string(differing) + " differ");
}

// ---------------------------------------------------------------------------

std::set<int> parse_only(const std::string& s) {
  std::set<int> out;
  std::stringstream ss(s);
  for (std::string tok; std::getline(ss, tok, ',');) out.insert(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  std::set<int> only;
  std::optional<fs::path> keep;
  for (int i = 1; i < argc; ++i) {
    const std::string a = argv[i];
    if (a == "--only" && i + 1 < argc) only = parse_only(argv[++i]);
    else if (a == "--keep" && i + 1 < argc) keep = argv[++i];
    else {
      std::cerr << "usage: acceptance [--only N[,N...]] [--keep DIR]\n";
      return 1;
    }
  }
  auto wanted = [&](int n) { return only.empty() || only.count(n); };
  set_warnings_quiet(true);

  dd_test::TempDir tmp("dd_accept");
  const fs::path work = keep ? *keep : tmp.path();
  fs::create_directories(work);

  std::map<int, Outcome> results;
  auto run = [&](int n, const std::function<Outcome()>& f) {
    if (!wanted(n)) return;
    try {
      results[n] = f();
    } catch (const std::exception& ex) {
      results[n] = {false, std::string("exception: ") + ex.what()};
    }
    std::cerr << "criterion " << n << " done\n";
  };

  run(1, criterion_losses);
  run(2, criterion_gradient);
  run(3, criterion_auc);
  std::optional<EndToEnd> e;
  if (wanted(4) || wanted(5) || wanted(6) || wanted(8) || wanted(9)) e = run_end_to_end(work);
  run(4, [&] { return criterion_end_to_end(*e); });
  run(5, [&] { return criterion_discrepancy(*e); });
  run(6, [&] { return criterion_localization(*e); });
  run(7, [&] { return criterion_ablation(work); });
  run(8, [&] { return criterion_reproducibility(*e, work); });
  run(9, [&] { return criterion_score_rows(*e, work); });

  bool all = true;
  for (const auto& [n, o] : results) {
    std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << n << ": " << o.detail << '\n';
    all &= o.pass;
  }
  return all ? 0 : 1;
}
