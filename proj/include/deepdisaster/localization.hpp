#pragma once

#include <cstdint>
#include <filesystem>
#include <stdexcept>
#include <string>
#include <vector>

#include "deepdisaster/config.hpp"
#include "deepdisaster/data.hpp"
#include "deepdisaster/losses.hpp"
#include "deepdisaster/model.hpp"

namespace deepdisaster {

class SaliencyError : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
};

enum class SaliencyMethod { vanilla, smoothgrad, guided };
std::string_view to_string(SaliencyMethod method);
SaliencyMethod saliency_method_from_string(std::string_view name);

struct SaliencyMap {
  std::string sample_id;
  SaliencyMethod method = SaliencyMethod::vanilla;
  Tensor raw;      // d(objective)/dx, (1, C, H, W), averaged over SmoothGrad draws
  Tensor reduced;  // |raw| reduced over channels, (H, W), before normalization
  Tensor map;      // reduced, min-max normalized to [0, 1]
  int n = 1;
  double sigma = 0.0;  // absolute noise std-dev on the [-1, 1] pixel scale
};

/// Networks whose parameters are read but never updated; both run in evaluation mode.
struct FrozenModels {
  GanPair* student = nullptr;
  GanPair* teacher = nullptr;  // optional
  Alphas alphas;
};

struct ObjectiveGradient {
  Tensor grad_x;  // same shape as x
  LossBreakdown parts;
};

/// Gradient of the full training objective (including distillation terms through the teacher)
/// with respect to the input batch x.
ObjectiveGradient objective_gradient(FrozenModels& models, const ExperimentConfig& config, const Tensor& x,
                                     GradRule rule = GradRule::standard);
/// Objective value only (used by finite-difference checks).
double objective_value(FrozenModels& models, const ExperimentConfig& config, const Tensor& x);

/// abs -> channel reduction -> min-max; fills `reduced` and `map` from `raw`.
void postprocess(SaliencyMap& m, ChannelReduction reduction);

SaliencyMap vanilla_gradient(FrozenModels& models, const ExperimentConfig& config, const Tensor& x,
                             const std::string& sample_id = {});
/// Mean of n vanilla gradients at x + N(0, sigma^2). sigma = 0 reproduces vanilla exactly.
SaliencyMap smooth_gradient(FrozenModels& models, const ExperimentConfig& config, const Tensor& x, int n,
                            double sigma, std::uint64_t seed, const std::string& sample_id = {});
/// Vanilla gradient with negative gradients zeroed at every rectifier on the way back.
SaliencyMap guided_backprop(FrozenModels& models, const ExperimentConfig& config, const Tensor& x,
                            const std::string& sample_id = {});

/// Mean inside the box over (mean outside + 1e-8). Throws for an empty, out-of-range or full-image box.
double saliency_quality(const Tensor& map, const DefectBox& box);

/// PNG overlay: 0.5 * input + 0.5 * colormap(map) weighted by the map, so a zero map gives the dimmed input.
/// `x` is one sample (1, C, H, W) in [-1, 1]. Text lines in `comment` are stored in the PNG.
void export_heatmap(const Tensor& map, const Tensor& x, const std::filesystem::path& path,
                    const std::string& comment = {});

}  // namespace deepdisaster
