#include "deepdisaster/ablation.hpp"

#include <cstdio>
#include <fstream>
#include <ostream>
#include <sstream>

#include "deepdisaster/evaluation.hpp"
#include "deepdisaster/text.hpp"
#include "deepdisaster/training.hpp"

namespace deepdisaster {

std::string_view to_string(AblationKind kind) {
  switch (kind) {
    case AblationKind::training_structure: return "training_structure";
    case AblationKind::student_size: return "student_size";
    case AblationKind::critical_layers: return "critical_layers";
  }
  return "?";
}

AblationKind ablation_kind_from_string(std::string_view name) {
  if (name == "training_structure") return AblationKind::training_structure;
  if (name == "student_size") return AblationKind::student_size;
  if (name == "critical_layers") return AblationKind::critical_layers;
  throw std::invalid_argument("unknown ablation kind '" + std::string(name) +
                              "' (training_structure, student_size, critical_layers)");
}

std::vector<std::string> ablation_variants(AblationKind kind) {
  switch (kind) {
    case AblationKind::training_structure: return {"teacher_only", "student_only", "both_from_scratch", "kd_pretrained"};
    case AblationKind::student_size: return {"smaller", "equal"};
    case AblationKind::critical_layers: return {"x_hat", "x_hat+f", "x_hat+f+z"};
  }
  return {};
}

namespace {

double kd_auc(const ExperimentConfig& config, const TrainResult& teacher, const DatasetIndex& data,
              const std::string& cls, std::ostream* progress) {
  TrainOptions opt;
  opt.progress = progress;
  ModelPair pair{train_student(config, teacher.checkpoint, data, opt).checkpoint, teacher.checkpoint};
  return evaluate_class(pair, data, cls, config).auc;
}

}  // namespace

AblationTable run_ablation(AblationKind kind, const ExperimentConfig& config, const DatasetIndex& data,
                           std::ostream* progress) {
  require_valid(config);
  AblationTable table;
  table.kind = kind;
  table.classes = data.classes();
  if (table.classes.empty()) throw DataError("run_ablation: dataset has no classes");
  const auto variants = ablation_variants(kind);
  for (const auto& v : variants) table.rows.push_back({v, {}});

  TrainOptions opt;
  opt.progress = progress;
  for (const auto& cls : table.classes) {
    const DatasetIndex part = data.for_class(cls);
    // every variant with a pretrained teacher shares this one
    const TrainResult teacher = pretrain_teacher(config, part, opt);
    auto set = [&](std::size_t row, double auc) {
      table.rows[row].auc[cls] = auc;
      if (progress) *progress << to_string(kind) << ' ' << variants[row] << ' ' << cls << " auc=" << auc << std::endl;
    };
    switch (kind) {
      case AblationKind::training_structure: {
        ModelPair teacher_only{teacher.checkpoint, std::nullopt};
        set(0, evaluate_class(teacher_only, part, cls, config).auc);
        ModelPair student_only{train_adversarial(config, Role::student, part, opt).checkpoint, std::nullopt};
        set(1, evaluate_class(student_only, part, cls, config).auc);
        JointResult joint = train_jointly(config, part, opt);
        ModelPair both{std::move(joint.student.checkpoint), std::move(joint.teacher.checkpoint)};
        set(2, evaluate_class(both, part, cls, config).auc);
        set(3, kd_auc(config, teacher, part, cls, progress));
        break;
      }
      case AblationKind::student_size: {
        ExperimentConfig smaller = config, equal = config;
        smaller.equal_size_student = false;
        equal.equal_size_student = true;
        set(0, kd_auc(smaller, teacher, part, cls, progress));
        set(1, kd_auc(equal, teacher, part, cls, progress));
        break;
      }
      case AblationKind::critical_layers: {
        using L = CriticalLayer;
        const std::vector<std::vector<L>> sets{{L::generated_image},
                                               {L::generated_image, L::discriminator_features},
                                               {L::generated_image, L::discriminator_features, L::bottleneck_z}};
        for (std::size_t k = 0; k < sets.size(); ++k) {
          ExperimentConfig c = config;
          c.critical_layers = sets[k];
          set(k, kd_auc(c, teacher, part, cls, progress));
        }
        break;
      }
    }
  }
  return table;
}

std::string ablation_table_text(const AblationTable& table) {
  std::size_t width = std::max<std::size_t>(10, to_string(table.kind).size());
  for (const auto& r : table.rows) width = std::max(width, r.variant.size());
  for (const auto& c : table.classes) width = std::max(width, c.size());
  auto cell = [&](const std::string& s) { return s + std::string(width + 2 - s.size(), ' '); };
  std::ostringstream os;
  os << cell(std::string(to_string(table.kind)));
  for (const auto& c : table.classes) os << cell(c);
  os << '\n';
  for (const auto& r : table.rows) {
    os << cell(r.variant);
    for (const auto& c : table.classes) {
      const auto it = r.auc.find(c);
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.3f", it == r.auc.end() ? 0.0 : it->second);
      os << cell(it == r.auc.end() ? "-" : buf);
    }
    os << '\n';
  }
  return os.str();
}

void write_ablation(const AblationTable& table, const std::filesystem::path& out_dir, const std::string& header) {
  std::filesystem::create_directories(out_dir);
  const std::string stem = "ablation_" + std::string(to_string(table.kind));
  std::ofstream csv(out_dir / (stem + ".csv"), std::ios::trunc);
  std::ofstream txt(out_dir / (stem + ".txt"), std::ios::trunc);
  if (!csv || !txt) throw std::runtime_error("cannot write ablation tables under '" + out_dir.string() + "'");
  csv << header << "variant";
  for (const auto& c : table.classes) csv << ',' << c;
  csv << '\n';
  for (const auto& r : table.rows) {
    csv << r.variant;
    for (const auto& c : table.classes) {
      const auto it = r.auc.find(c);
      csv << ',' << (it == r.auc.end() ? std::string() : format_real(it->second));
    }
    csv << '\n';
  }
  txt << header << ablation_table_text(table);
  if (!csv || !txt) throw std::runtime_error("write failure under '" + out_dir.string() + "'");
}

}  // namespace deepdisaster
