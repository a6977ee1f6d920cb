#pragma once

#include <span>
#include <stdexcept>

#include "deepdisaster/config.hpp"
#include "deepdisaster/tensor.hpp"

namespace deepdisaster {

// Every loss takes optional gradient outputs. When a gradient span is non-empty,
// `scale * d(loss)/d(argument)` is *added* into it.

/// Raised when a cosine is requested for an all-zero vector.
class ZeroNormError : public std::domain_error {
public:
  using std::domain_error::domain_error;
};

/// Mean squared difference over all elements.
double loss_val(std::span<const double> a_s, std::span<const double> a_t, std::span<double> grad_s = {},
                std::span<double> grad_t = {}, double scale = 1.0);

/// 1 - cos(vec(a_s), vec(a_t)), in [0, 2]. Throws ZeroNormError for a zero vector.
double loss_dir(std::span<const double> a_s, std::span<const double> a_t, std::span<double> grad_s = {},
                std::span<double> grad_t = {}, double scale = 1.0);

/// loss_dir applied to each leading-axis sample and averaged over the batch.
double loss_dir_batch(const Tensor& a_s, const Tensor& a_t, Tensor* grad_s = nullptr, Tensor* grad_t = nullptr,
                      double scale = 1.0);

/// alpha = val_0 / dir_0, falling back to 1 (with a warning) when dir_0 is 0.
double calibrate_alpha(double val_0, double dir_0);

/// Value + alpha * direction distillation on a pair of same-shape batched tensors.
double loss_pair(const Tensor& a_s, const Tensor& a_t, double alpha, Tensor* grad_s = nullptr,
                 Tensor* grad_t = nullptr, double scale = 1.0);

/// Distillation on generated images.
inline double loss_kg(const Tensor& xhat_s, const Tensor& xhat_t, double alpha_g, Tensor* grad_s = nullptr,
                      Tensor* grad_t = nullptr, double scale = 1.0) {
  return loss_pair(xhat_s, xhat_t, alpha_g, grad_s, grad_t, scale);
}
/// Distillation on discriminator features of the generated images.
inline double loss_kd(const Tensor& f_s_xhat, const Tensor& f_t_xhat, double alpha_d, Tensor* grad_s = nullptr,
                      Tensor* grad_t = nullptr, double scale = 1.0) {
  return loss_pair(f_s_xhat, f_t_xhat, alpha_d, grad_s, grad_t, scale);
}

inline constexpr double kProbEpsilon = 1e-7;

struct AdversarialTerms {
  double gen_term = 0.0;   // -mean log D(x_hat)
  double disc_term = 0.0;  // -mean log D(x) - mean log(1 - D(x_hat))
};

/// Probabilities are clamped to [eps, 1 - eps].
AdversarialTerms loss_adv(std::span<const double> prob_real, std::span<const double> prob_fake);
// Gradients are taken with respect to the logits l (prob = sigmoid(l)) and ignore the clamp,
// so a saturated discriminator still receives a signal.
/// Adds scale * d(gen_term)/d(logit_fake) = scale * (p - 1) / n.
void loss_adv_gen_grad(std::span<const double> prob_fake, std::span<double> grad_logit_fake, double scale = 1.0);
/// Adds scale * d(disc_term)/d(logit_real) = scale * (p - 1) / n and d/d(logit_fake) = scale * p / n.
void loss_adv_disc_grad(std::span<const double> prob_real, std::span<const double> prob_fake,
                        std::span<double> grad_logit_real, std::span<double> grad_logit_fake, double scale = 1.0);

/// Mean absolute difference.
double loss_con(std::span<const double> x, std::span<const double> x_hat, std::span<double> grad_x = {},
                std::span<double> grad_x_hat = {}, double scale = 1.0);

/// Mean squared difference between discriminator features of real and generated input.
double loss_lat(std::span<const double> f_x, std::span<const double> f_xhat, std::span<double> grad_f_x = {},
                std::span<double> grad_f_xhat = {}, double scale = 1.0);

struct Alphas {
  double g = 1.0;  // generated-image pair
  double d = 1.0;  // discriminator-feature pair
  double z = 1.0;  // bottleneck pair
  friend bool operator==(const Alphas&, const Alphas&) = default;
};

struct LossBreakdown {
  double l_adv = 0.0;  // generator-side adversarial term
  double l_con = 0.0;
  double l_lat = 0.0;
  double l_kg = 0.0;
  double l_kd = 0.0;
  double l_kz = 0.0;
  double l_disc = 0.0;  // discriminator minimax term (not part of total)
  double total = 0.0;
  double alpha_g = 1.0;
  double alpha_d = 1.0;
};

/// Weighted sum of the generator-side parts.
double total_loss(const LossBreakdown& parts, const ExperimentConfig& config);

/// Tensors entering the training objective for one batch. Teacher entries are optional;
/// `teacher_features` must already be adapted to the student's channel count.
struct ObjectiveInputs {
  const Tensor* x = nullptr;
  const Tensor* x_hat = nullptr;
  const Tensor* f_real = nullptr;
  const Tensor* f_fake = nullptr;
  const Tensor* prob_fake = nullptr;
  const Tensor* z = nullptr;
  const Tensor* teacher_x_hat = nullptr;
  const Tensor* teacher_features = nullptr;
  const Tensor* teacher_z = nullptr;
};

/// Gradients of the total objective, each shaped like its input (empty when not requested).
struct ObjectiveGrads {
  Tensor x, x_hat, f_real, f_fake, z;
  Tensor logit_fake;  // with respect to the discriminator logit of x_hat
  Tensor teacher_x_hat, teacher_features, teacher_z;
};

/// Full weighted objective. KD terms are included for every configured critical layer whose
/// teacher tensor is present. When `grads` is given, all gradients are filled in.
LossBreakdown training_objective(const ObjectiveInputs& in, const ExperimentConfig& config, const Alphas& alphas,
                                 ObjectiveGrads* grads = nullptr);

/// First-batch alpha calibration for every configured layer with teacher tensors present.
Alphas calibrate_alphas(const ObjectiveInputs& in, const ExperimentConfig& config);

}  // namespace deepdisaster
