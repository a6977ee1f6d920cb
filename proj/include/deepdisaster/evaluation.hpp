#pragma once

#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "deepdisaster/checkpoint.hpp"
#include "deepdisaster/config.hpp"
#include "deepdisaster/data.hpp"
#include "deepdisaster/scoring.hpp"

namespace deepdisaster {

/// Probability that a random positive outranks a random negative; ties count 1/2.
/// labels: 1 = positive (damage). Throws when either class is missing.
double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels);

/// A trained student with the teacher it was distilled from (teacher may be absent for
/// single-network baselines).
struct ModelPair {
  Checkpoint student;
  std::optional<Checkpoint> teacher;
};

struct SplitCounts {
  std::size_t train = 0;
  std::size_t test = 0;
  std::size_t test_no_damage = 0;
  std::size_t test_damage = 0;
};

struct ClassResult {
  std::string disaster_class;
  double auc = 0.0;
  Threshold threshold;  // on normalized scores
  SplitCounts counts;
  std::vector<AnomalyScore> scores;  // normalized over the class test set
};

struct UnseenResult {
  std::string target_class;
  double auc = 0.0;                              // mean over foreign models
  std::map<std::string, double> per_model_auc;  // keyed by the class each model was trained on
};

/// Scores the class's test split with the pair; omega weights and layers come from `config`.
ClassResult evaluate_class(ModelPair& model, const DatasetIndex& data, const std::string& disaster_class,
                           const ExperimentConfig& config);

/// Mean AUC on `target_class` over every model trained on a different class.
UnseenResult evaluate_unseen(std::map<std::string, ModelPair*>& models, const std::string& target_class,
                             const DatasetIndex& data, const ExperimentConfig& config);

struct EvalReport {
  std::vector<ClassResult> seen;
  std::vector<UnseenResult> unseen;
  std::string config_hash;

  double seen_average() const;
  double unseen_average() const;
};

/// Writes `<out_dir>/results.json` and `<out_dir>/results.txt` (class columns plus an average,
/// one row for seen and one for unseen evaluation). Output is fully determined by the inputs.
void render_report(const EvalReport& report, const std::filesystem::path& out_dir, const std::string& header = {});
std::string report_table(const EvalReport& report);

}  // namespace deepdisaster
