// Command-line entry point: synth, pretrain, train, score, localize, eval, ablate, config.
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "deepdisaster/ablation.hpp"
#include "deepdisaster/checkpoint.hpp"
#include "deepdisaster/config.hpp"
#include "deepdisaster/data.hpp"
#include "deepdisaster/evaluation.hpp"
#include "deepdisaster/localization.hpp"
#include "deepdisaster/log.hpp"
#include "deepdisaster/metadata.hpp"
#include "deepdisaster/scoring.hpp"
#include "deepdisaster/text.hpp"
#include "deepdisaster/training.hpp"

namespace fs = std::filesystem;
using namespace deepdisaster;

namespace {

enum Exit { kOk = 0, kUsage = 1, kRuntime = 2, kBelowFloor = 3 };

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Common {
  std::string config;
  std::vector<std::string> sets;
  std::optional<std::int64_t> seed;
  std::string out;
  std::string data;
};

void add_common(CLI::App* cmd, Common& c, bool with_data = true) {
  cmd->add_option("--config", c.config, "Config file (key = value lines)");
  cmd->add_option("--set", c.sets, "Override one config key, key=value (repeatable)");
  cmd->add_option("--seed", c.seed, "Random seed");
  cmd->add_option("--out", c.out, "Output directory");
  if (with_data) cmd->add_option("--data", c.data, "Dataset root (<class>/{no_damage,damage}/*)");
}

/// defaults (or `base`) <- config file <- DEEPDISASTER_* environment <- --set <- --seed
ExperimentConfig resolve(const Common& c, std::optional<ExperimentConfig> base = std::nullopt) {
  ExperimentConfig cfg = !c.config.empty() ? load_config(c.config) : base.value_or(default_config());
  apply_environment(cfg);
  for (const auto& kv : c.sets) {
    const auto eq = kv.find('=');
    if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + kv + "'");
    apply_override(cfg, trim(std::string_view(kv).substr(0, eq)), trim(std::string_view(kv).substr(eq + 1)));
  }
  if (c.seed) cfg.seed = *c.seed;
  return cfg;
}

fs::path data_root(const Common& c, const ExperimentConfig& cfg) {
  return c.data.empty() ? fs::path(cfg.paths.dataset_root) : fs::path(c.data);
}

DatasetIndex open_dataset(const Common& c, const ExperimentConfig& cfg, const std::string& only_class) {
  DatasetIndex idx = index_dataset(data_root(c, cfg), cfg.train_fraction, cfg.seed);
  return only_class.empty() ? idx : idx.for_class(only_class);
}

std::uint64_t fnv(const std::string& s) {
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : s) h = (h ^ ch) * 1099511628211ull;
  return h;
}

void print_index(const DatasetIndex& idx) {
  for (const auto& cls : idx.classes())
    std::cout << cls << ": train " << idx.count(Split::train, Label::no_damage, cls) << ", test no_damage "
              << idx.count(Split::test, Label::no_damage, cls) << ", test damage "
              << idx.count(Split::test, Label::damage, cls) << '\n';
  if (idx.skipped) std::cout << "skipped " << idx.skipped << " unreadable files\n";
}

// ---------------------------------------------------------------------------

struct SynthArgs {
  int normal = 200, anomalous = 50, size = 64, channels = 3, defect_min = 10, defect_max = 20;
  double train_fraction = 0.8;
  std::string class_name = "synthetic";
};

int cmd_synth(const Common& c, const SynthArgs& a, const std::vector<std::string>& argv) {
  if (c.out.empty()) throw UsageError("synth: --out is required");
  SyntheticSpec spec;
  spec.count_normal = a.normal;
  spec.count_anomalous = a.anomalous;
  spec.image_size = a.size;
  spec.channels = a.channels;
  spec.defect_min = a.defect_min;
  spec.defect_max = a.defect_max;
  spec.seed = c.seed.value_or(1);
  spec.class_name = a.class_name;
  ExperimentConfig cfg = resolve(c);
  cfg.seed = spec.seed;
  cfg.image_size = a.size;
  cfg.channels = a.channels;
  const std::string header = metadata_header(make_metadata(argv, cfg));
  const DatasetIndex idx = make_synthetic_dataset(spec, c.out, a.train_fraction, header);
  std::cout << "wrote " << idx.records.size() << " images and " << manifest_path(c.out).string() << '\n';
  print_index(idx);
  return kOk;
}

int cmd_pretrain(const Common& c, std::optional<int> epochs, const std::string& cls,
                 const std::vector<std::string>& argv) {
  ExperimentConfig cfg = resolve(c);
  if (epochs) cfg.teacher_epochs = *epochs;
  require_valid(cfg);
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.checkpoint_dir) : fs::path(c.out);
  const std::string header = metadata_header(make_metadata(argv, cfg));
  DatasetIndex idx = cfg.teacher_corpus == TeacherCorpus::generic ? DatasetIndex{} : open_dataset(c, cfg, cls);
  TrainOptions opt{out / "teacher_log.csv", out / "teacher.ckpt", header, &std::cout};
  const TrainResult r = pretrain_teacher(cfg, idx, opt);
  std::cout << "teacher checkpoint " << (out / "teacher.ckpt").string() << " (epoch " << r.checkpoint.epoch << ")\n";
  return kOk;
}

int cmd_train(const Common& c, const std::string& teacher_path, std::optional<int> epochs, const std::string& cls,
              const std::vector<std::string>& argv) {
  const Checkpoint teacher = load_checkpoint(teacher_path, Role::teacher);
  ExperimentConfig cfg = resolve(c, teacher.config);
  if (epochs) cfg.epochs = *epochs;
  require_valid(cfg);
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.checkpoint_dir) : fs::path(c.out);
  const std::string header = metadata_header(make_metadata(argv, cfg));
  const DatasetIndex idx = open_dataset(c, cfg, cls);
  TrainOptions opt{out / "student_log.csv", out / "student.ckpt", header, &std::cout};
  const TrainResult r = train_student(cfg, teacher, idx, opt);
  std::cout << "student checkpoint " << (out / "student.ckpt").string() << " (epoch " << r.checkpoint.epoch
            << ", alpha_g " << r.checkpoint.alphas->g << ", alpha_d " << r.checkpoint.alphas->d << ")\n";
  return kOk;
}

struct Models {
  Checkpoint student;
  std::optional<Checkpoint> teacher;
};

Models load_models(const std::string& student, const std::string& teacher) {
  Models m{load_checkpoint(student, Role::student), std::nullopt};
  if (!teacher.empty()) m.teacher = load_checkpoint(teacher, Role::teacher);
  return m;
}

std::vector<std::string> test_ids(const DatasetIndex& idx, const std::string& split) {
  if (split == "test") return idx.ids(Split::test);
  if (split == "all") {
    std::vector<std::string> ids;
    for (const auto& r : idx.records) ids.push_back(r.sample_id);
    return ids;
  }
  throw UsageError("--split must be test or all");
}

int cmd_score(const Common& c, const std::string& student, const std::string& teacher, const std::string& split,
              const std::string& cls, const std::vector<std::string>& argv) {
  Models m = load_models(student, teacher);
  const ExperimentConfig cfg = resolve(c, m.student.config);
  require_valid(cfg);
  const DatasetIndex idx = open_dataset(c, cfg, cls);
  auto scores = normalize_scores(
      score_samples(m.student, m.teacher ? &*m.teacher : nullptr, cfg, idx, test_ids(idx, split)));
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.report_dir) : fs::path(c.out);
  write_scores_csv(scores, out / "scores.csv", metadata_header(make_metadata(argv, cfg)));
  std::cout << "scored " << scores.size() << " samples -> " << (out / "scores.csv").string() << '\n';
  const auto labels = binary_labels(scores);
  if (std::count(labels.begin(), labels.end(), 1) > 0 && std::count(labels.begin(), labels.end(), 0) > 0)
    std::cout << "auc_roc " << format_real(auc_roc(raw_scores(scores), labels)) << '\n';
  return kOk;
}

struct LocalizeArgs {
  std::string student, teacher, method = "vanilla", cls, label = "damage";
  std::optional<int> n;
  std::optional<double> sigma;
  int limit = 0;
};

int cmd_localize(const Common& c, const LocalizeArgs& a, const std::vector<std::string>& argv) {
  const SaliencyMethod method = saliency_method_from_string(a.method);
  Models m = load_models(a.student, a.teacher);
  ExperimentConfig cfg = resolve(c, m.student.config);
  if (a.n) cfg.smoothgrad_samples = *a.n;
  if (a.sigma) cfg.smoothgrad_sigma_fraction = *a.sigma;
  require_valid(cfg);
  if (m.teacher && !m.student.alphas) throw ScoringError("student checkpoint has no calibrated alphas");
  const DatasetIndex idx = open_dataset(c, cfg, a.cls);
  const fs::path root = data_root(c, cfg);
  std::map<std::string, DefectBox> boxes;
  if (fs::exists(manifest_path(root)))
    for (auto& b : read_manifest(manifest_path(root))) boxes[b.sample_id] = b;

  const fs::path out = c.out.empty() ? fs::path(cfg.paths.report_dir) / "heatmaps" : fs::path(c.out);
  fs::create_directories(out);
  const RunMetadata meta = make_metadata(argv, cfg);
  const std::string header = metadata_header(meta);
  std::ofstream metrics(out / "saliency_metrics.csv", std::ios::trunc);
  if (!metrics) throw std::runtime_error("cannot write " + (out / "saliency_metrics.csv").string());
  metrics << header << "sample_id,method,n,sigma,in_out_ratio\n";

  FrozenModels fm{&m.student.nets, m.teacher ? &m.teacher->nets : nullptr, m.student.alphas.value_or(Alphas{})};
  int done = 0;
  for (const auto& id : idx.ids(Split::test)) {
    const auto& rec = idx.find(id);
    if (a.label != "all" && to_string(rec.label) != a.label) continue;
    if (a.limit > 0 && done >= a.limit) break;
    const ImageBatch b = load_batch(idx, std::span<const std::string>(&id, 1), cfg);
    SaliencyMap s;
    switch (method) {
      case SaliencyMethod::vanilla: s = vanilla_gradient(fm, cfg, b.pixels, id); break;
      case SaliencyMethod::guided: s = guided_backprop(fm, cfg, b.pixels, id); break;
      case SaliencyMethod::smoothgrad:
        s = smooth_gradient(fm, cfg, b.pixels, cfg.smoothgrad_samples, 2.0 * cfg.smoothgrad_sigma_fraction,
                            derive_seed(cfg.seed, fnv(id)), id);
        break;
    }
    std::string stem = id;
    std::replace(stem.begin(), stem.end(), '/', '_');
    const std::string params = "# method: " + std::string(to_string(method)) + " n: " + std::to_string(s.n) +
                               " sigma: " + format_real(s.sigma) + "\n";
    export_heatmap(s.map, b.pixels, out / (stem + "_" + std::string(to_string(method)) + ".png"), header + params);
    metrics << id << ',' << to_string(method) << ',' << s.n << ',' << format_real(s.sigma) << ',';
    if (auto it = boxes.find(id); it != boxes.end()) metrics << format_real(saliency_quality(s.map, it->second));
    metrics << '\n';
    ++done;
  }
  std::cout << "wrote " << done << " heatmaps to " << out.string() << '\n';
  return kOk;
}

struct EvalArgs {
  std::vector<std::string> models;  // CLASS=STUDENT[:TEACHER]
  std::string student, teacher, home;
  bool unseen = false;
  std::optional<double> floor;
};

int cmd_eval(const Common& c, const EvalArgs& a, const std::vector<std::string>& argv) {
  std::map<std::string, ModelPair> pairs;
  auto add = [&](const std::string& home, const std::string& s, const std::string& t) {
    Models m = load_models(s, t);
    pairs.emplace(home, ModelPair{std::move(m.student), std::move(m.teacher)});
  };
  for (const auto& spec : a.models) {
    const auto eq = spec.find('=');
    if (eq == std::string::npos) throw UsageError("--model expects CLASS=STUDENT[:TEACHER], got '" + spec + "'");
    const std::string paths = spec.substr(eq + 1);
    const auto colon = paths.find(':');
    add(spec.substr(0, eq), paths.substr(0, colon), colon == std::string::npos ? "" : paths.substr(colon + 1));
  }
  if (!a.student.empty()) {
    if (a.home.empty()) throw UsageError("eval: --student needs --class naming the class it was trained on");
    add(a.home, a.student, a.teacher);
  }
  if (pairs.empty()) throw UsageError("eval: give --student/--teacher/--class or at least one --model");

  ExperimentConfig cfg = resolve(c, pairs.begin()->second.student.config);
  require_valid(cfg);
  const DatasetIndex idx = open_dataset(c, cfg, "");
  const auto classes = idx.classes();
  EvalReport report;
  report.config_hash = config_hash(cfg);
  for (auto& [home, pair] : pairs)
    if (std::find(classes.begin(), classes.end(), home) != classes.end())
      report.seen.push_back(evaluate_class(pair, idx, home, cfg));
  if (a.unseen) {
    std::map<std::string, ModelPair*> ptrs;
    for (auto& [home, pair] : pairs) ptrs[home] = &pair;
    for (const auto& target : classes) {
      const bool has_foreign = std::any_of(ptrs.begin(), ptrs.end(), [&](const auto& p) { return p.first != target; });
      if (has_foreign) report.unseen.push_back(evaluate_unseen(ptrs, target, idx, cfg));
    }
  }
  if (report.seen.empty() && report.unseen.empty()) throw UsageError("eval: no model matches a class in the dataset");
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.report_dir) : fs::path(c.out);
  render_report(report, out, metadata_header(make_metadata(argv, cfg)));
  std::cout << report_table(report);
  if (a.floor) {
    bool below = false;
    for (const auto& r : report.seen) below |= r.auc < *a.floor;
    for (const auto& r : report.unseen) below |= r.auc < *a.floor;
    if (below) {
      std::cerr << "error: an AUC-ROC is below the floor " << *a.floor << '\n';
      return kBelowFloor;
    }
  }
  return kOk;
}

int cmd_ablate(const Common& c, const std::string& kind_name, const std::vector<std::string>& argv) {
  const AblationKind kind = ablation_kind_from_string(kind_name);
  const ExperimentConfig cfg = resolve(c);
  require_valid(cfg);
  const DatasetIndex idx = open_dataset(c, cfg, "");
  const AblationTable table = run_ablation(kind, cfg, idx, &std::cout);
  const fs::path out = c.out.empty() ? fs::path(cfg.paths.report_dir) : fs::path(c.out);
  write_ablation(table, out, metadata_header(make_metadata(argv, cfg)));
  std::cout << ablation_table_text(table);
  return kOk;
}

}  // namespace

int main(int argc, char** argv) {
  const std::vector<std::string> args(argv, argv + argc);
  CLI::App app{"Student-teacher GAN anomaly detection and localization"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kToolVersion));

  Common common;
  SynthArgs synth;
  auto* c_synth = app.add_subcommand("synth", "Write the synthetic defect dataset");
  add_common(c_synth, common, false);
  c_synth->add_option("--normal", synth.normal, "Normal images")->check(CLI::PositiveNumber);
  c_synth->add_option("--anomalous", synth.anomalous, "Images with a defect")->check(CLI::PositiveNumber);
  c_synth->add_option("--size", synth.size, "Image side length")->check(CLI::Range(8, 4096));
  c_synth->add_option("--channels", synth.channels, "1 or 3")->check(CLI::IsMember({1, 3}));
  c_synth->add_option("--defect-min", synth.defect_min, "Smallest defect side")->check(CLI::PositiveNumber);
  c_synth->add_option("--defect-max", synth.defect_max, "Largest defect side")->check(CLI::PositiveNumber);
  c_synth->add_option("--train-fraction", synth.train_fraction, "Share of normals used for training")
      ->check(CLI::Range(0.0, 1.0));
  c_synth->add_option("--class", synth.class_name, "Class directory name");

  std::optional<int> epochs;
  std::string only_class;
  auto* c_pretrain = app.add_subcommand("pretrain", "Pretrain the teacher adversarially");
  add_common(c_pretrain, common);
  c_pretrain->add_option("--epochs", epochs, "Teacher epochs")->check(CLI::PositiveNumber);
  c_pretrain->add_option("--class", only_class, "Restrict to one class");

  std::string teacher_path;
  auto* c_train = app.add_subcommand("train", "Distil a frozen teacher into a student");
  add_common(c_train, common);
  c_train->add_option("--teacher", teacher_path, "Teacher checkpoint")->required();
  c_train->add_option("--epochs", epochs, "Student epochs")->check(CLI::PositiveNumber);
  c_train->add_option("--class", only_class, "Restrict to one class");

  std::string student_path, split = "test";
  auto* c_score = app.add_subcommand("score", "Write per-sample anomaly scores");
  add_common(c_score, common);
  c_score->add_option("--student", student_path, "Student checkpoint")->required();
  c_score->add_option("--teacher", teacher_path, "Teacher checkpoint (omit for reconstruction-only scores)");
  c_score->add_option("--split", split, "test or all");
  c_score->add_option("--class", only_class, "Restrict to one class");

  LocalizeArgs loc;
  auto* c_loc = app.add_subcommand("localize", "Saliency heatmaps for test images");
  add_common(c_loc, common);
  c_loc->add_option("--student", loc.student, "Student checkpoint")->required();
  c_loc->add_option("--teacher", loc.teacher, "Teacher checkpoint");
  c_loc->add_option("--method", loc.method, "vanilla, smoothgrad or guided")
      ->check(CLI::IsMember({"vanilla", "smoothgrad", "guided"}));
  c_loc->add_option("--n", loc.n, "SmoothGrad samples")->check(CLI::PositiveNumber);
  c_loc->add_option("--sigma", loc.sigma, "SmoothGrad noise as a fraction of the input range")
      ->check(CLI::NonNegativeNumber);
  c_loc->add_option("--class", loc.cls, "Restrict to one class");
  c_loc->add_option("--label", loc.label, "damage, no_damage or all")
      ->check(CLI::IsMember({"damage", "no_damage", "all"}));
  c_loc->add_option("--limit", loc.limit, "At most this many images (0: all)")->check(CLI::NonNegativeNumber);

  EvalArgs ev;
  auto* c_eval = app.add_subcommand("eval", "AUC-ROC report, optionally with unseen-class transfer");
  add_common(c_eval, common);
  c_eval->add_option("--model", ev.models, "CLASS=STUDENT[:TEACHER], repeatable");
  c_eval->add_option("--student", ev.student, "Student checkpoint");
  c_eval->add_option("--teacher", ev.teacher, "Teacher checkpoint");
  c_eval->add_option("--class", ev.home, "Class the --student model was trained on");
  c_eval->add_flag("--unseen", ev.unseen, "Also score each class with models trained on other classes");
  c_eval->add_option("--floor", ev.floor, "Exit with code 3 if any AUC-ROC is below this");

  std::string kind;
  auto* c_ablate = app.add_subcommand("ablate", "Train and compare ablation variants");
  add_common(c_ablate, common);
  c_ablate->add_option("--kind", kind, "training_structure, student_size or critical_layers")
      ->required()
      ->check(CLI::IsMember({"training_structure", "student_size", "critical_layers"}));

  auto* c_config = app.add_subcommand("config", "Print the resolved configuration");
  add_common(c_config, common, false);

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kOk : kUsage;
  }

  try {
    if (*c_synth) return cmd_synth(common, synth, args);
    if (*c_pretrain) return cmd_pretrain(common, epochs, only_class, args);
    if (*c_train) return cmd_train(common, teacher_path, epochs, only_class, args);
    if (*c_score) return cmd_score(common, student_path, teacher_path, split, only_class, args);
    if (*c_loc) return cmd_localize(common, loc, args);
    if (*c_eval) return cmd_eval(common, ev, args);
    if (*c_ablate) return cmd_ablate(common, kind, args);
    if (*c_config) {
      std::cout << serialize_config(resolve(common));
      return kOk;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return kUsage;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << '\n';
    return kUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kRuntime;
  }
  return kUsage;
}
