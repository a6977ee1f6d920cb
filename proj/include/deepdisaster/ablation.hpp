#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "deepdisaster/config.hpp"
#include "deepdisaster/data.hpp"

namespace deepdisaster {

enum class AblationKind { training_structure, student_size, critical_layers };
std::string_view to_string(AblationKind kind);
AblationKind ablation_kind_from_string(std::string_view name);

struct AblationRow {
  std::string variant;
  std::map<std::string, double> auc;  // per class

  friend bool operator==(const AblationRow&, const AblationRow&) = default;
};

struct AblationTable {
  AblationKind kind = AblationKind::student_size;
  std::vector<std::string> classes;
  std::vector<AblationRow> rows;

  friend bool operator==(const AblationTable&, const AblationTable&) = default;
};

/// Variant names, in table order.
std::vector<std::string> ablation_variants(AblationKind kind);

/// Trains and evaluates every variant of `kind` on every class of `data`.
/// training_structure: teacher_only, student_only, both_from_scratch, kd_pretrained.
/// student_size: smaller, equal. critical_layers: x_hat, x_hat+f, x_hat+f+z.
AblationTable run_ablation(AblationKind kind, const ExperimentConfig& config, const DatasetIndex& data,
                           std::ostream* progress = nullptr);

/// Plain-text table: one row per variant, one column per class.
std::string ablation_table_text(const AblationTable& table);
/// Writes `<out_dir>/ablation_<kind>.csv` and `.txt`, each starting with `header`.
void write_ablation(const AblationTable& table, const std::filesystem::path& out_dir, const std::string& header = {});

}  // namespace deepdisaster
