#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepdisaster/checkpoint.hpp"
#include "deepdisaster/config.hpp"
#include "deepdisaster/data.hpp"
#include "deepdisaster/losses.hpp"
#include "deepdisaster/model.hpp"
#include "deepdisaster/optim.hpp"

namespace deepdisaster {

/// Thrown when a loss turns non-finite; training stops immediately.
class TrainingAborted : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct TrainReport {
  Role role = Role::student;
  std::vector<LossBreakdown> epochs;  // per-epoch means of every part
  double wall_seconds = 0.0;
  std::string checkpoint_path;
  bool early_stopped = false;
  std::int64_t generator_updates = 0;
  std::int64_t discriminator_updates = 0;
};

struct TrainOptions {
  /// Per-iteration LossBreakdown rows (empty: no log).
  std::filesystem::path log_csv;
  /// Written at the end of training; on abort the last good epoch is written to "<path>.last_good".
  std::filesystem::path checkpoint_path;
  /// Prepended to the log CSV (each line should start with '#').
  std::string metadata_header;
  /// Receives one progress line per epoch; nullptr silences progress.
  std::ostream* progress = nullptr;
};

struct TrainResult {
  Checkpoint checkpoint;
  TrainReport report;
};

/// Student-only or teacher-only adversarial training (no distillation terms).
TrainResult train_adversarial(const ExperimentConfig& config, Role role, const DatasetIndex& data,
                              const TrainOptions& options = {});

/// Adversarial pretraining of the teacher on the train split of `data`
/// (or on the generic corpus when config.teacher_corpus = generic).
TrainResult pretrain_teacher(const ExperimentConfig& config, const DatasetIndex& data, const TrainOptions& options = {});

/// Distil a frozen teacher into a fresh student on the no_damage train split.
TrainResult train_student(const ExperimentConfig& config, const Checkpoint& teacher, const DatasetIndex& data,
                          const TrainOptions& options = {});

struct JointResult {
  TrainResult teacher;
  TrainResult student;
};

/// Teacher and student trained simultaneously from scratch; the student distils from the
/// teacher's current outputs at every step.
JointResult train_jointly(const ExperimentConfig& config, const DatasetIndex& data, const TrainOptions& options = {});

/// Seed for an independent random stream derived from the run seed.
std::uint64_t derive_seed(std::int64_t seed, std::uint64_t stream);

}  // namespace deepdisaster
