#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepdisaster/config.hpp"
#include "deepdisaster/losses.hpp"
#include "deepdisaster/model.hpp"

namespace deepdisaster {

class CheckpointError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

struct OptimizerState {
  std::int64_t steps = 0;
  std::vector<Tensor> first_moments;
  std::vector<Tensor> second_moments;
};

/// Versioned snapshot of one trained GAN pair.
struct Checkpoint {
  std::string metadata;  // free-form provenance header, stored first
  Role role = Role::student;
  ExperimentConfig config;
  GanPair nets;
  OptimizerState generator_optimizer;
  OptimizerState discriminator_optimizer;
  int epoch = 0;
  std::optional<Alphas> alphas;  // set for KD-trained students
  std::string rng_state;
  std::string teacher_corpus;    // corpus the teacher was pretrained on ("in_domain", "generic", "none")
  std::uint64_t teacher_checksum = 0;  // students: digest of the teacher they were distilled from
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Atomic write: the file appears under `path` only once fully written.
void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
/// Throws CheckpointError for a missing/corrupt file, version mismatch, or (when given) a role mismatch.
Checkpoint load_checkpoint(const std::filesystem::path& path, std::optional<Role> expected_role = std::nullopt);

}  // namespace deepdisaster
