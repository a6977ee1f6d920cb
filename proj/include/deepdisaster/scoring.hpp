#pragma once

#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepdisaster/checkpoint.hpp"
#include "deepdisaster/config.hpp"
#include "deepdisaster/data.hpp"
#include "deepdisaster/losses.hpp"
#include "deepdisaster/model.hpp"

namespace deepdisaster {

class ScoringError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

/// Student-teacher discrepancy on one critical layer of one sample.
struct LayerDiscrepancy {
  CriticalLayer layer = CriticalLayer::generated_image;
  double v = 0.0;      // mean squared difference
  double d = 0.0;      // 1 - cosine
  double alpha = 1.0;  // training-time calibration for this layer

  friend bool operator==(const LayerDiscrepancy&, const LayerDiscrepancy&) = default;
};

struct AnomalyScore {
  std::string sample_id;
  std::optional<Label> label;
  double l_term = 0.0;  // reconstruction: mean |x - x_hat|
  double r_term = 0.0;  // latent: mean (f(x) - f(x_hat))^2
  double v_term = 0.0;  // sum of per-layer v
  double d_term = 0.0;  // sum of per-layer d
  double raw = 0.0;
  double normalized = 0.0;
  std::vector<LayerDiscrepancy> layers;

  /// v + alpha * d summed over layers (each layer with its own alpha).
  double discrepancy() const;
  friend bool operator==(const AnomalyScore&, const AnomalyScore&) = default;
};

/// raw = omega_l * l + omega_r * r + omega_vd * sum_i (v_i + alpha_i * d_i)
double combine_score(double l_term, double r_term, const std::vector<LayerDiscrepancy>& layers,
                     const ExperimentConfig& config);

/// Scores a batch with both networks in evaluation mode. `teacher` may be null (no discrepancy
/// terms); otherwise every configured critical layer contributes.
std::vector<AnomalyScore> score_batch(GanPair& student, GanPair* teacher, const Alphas& alphas,
                                      const ExperimentConfig& config, const ImageBatch& batch);

/// Scores `ids` in chunks of config.batch_size. Omega weights and critical layers come from `config`;
/// alphas from the student checkpoint (missing alphas with a teacher present is an error).
std::vector<AnomalyScore> score_samples(Checkpoint& student, Checkpoint* teacher, const ExperimentConfig& config,
                                        const DatasetIndex& data, const std::vector<std::string>& ids);

/// Min-max over the set; all-equal raws give 0.5 everywhere with a warning.
std::vector<AnomalyScore> normalize_scores(std::vector<AnomalyScore> scores);

struct Threshold {
  double value = 0.0;
  double youden_j = 0.0;
  int tp = 0, fp = 0, tn = 0, fn = 0;  // predictions are positive when score >= value
};

/// Youden-optimal cut among the minimum score and the midpoints of consecutive distinct scores.
/// Ties go to the lowest cut. labels: 1 = damage.
Threshold estimate_threshold(const std::vector<double>& scores, const std::vector<int>& labels);

std::vector<double> raw_scores(const std::vector<AnomalyScore>& scores);
std::vector<double> normalized_scores(const std::vector<AnomalyScore>& scores);
/// 1 for damage, 0 for no_damage; throws when a score has no label.
std::vector<int> binary_labels(const std::vector<AnomalyScore>& scores);

/// Columns: sample_id,label,l_term,r_term,v_term,d_term,raw,normalized followed by
/// v_<layer>,d_<layer>,alpha_<layer> per critical layer. `header` lines are written first.
void write_scores_csv(const std::vector<AnomalyScore>& scores, const std::filesystem::path& path,
                      const std::string& header = {});
std::vector<AnomalyScore> read_scores_csv(const std::filesystem::path& path);

}  // namespace deepdisaster
