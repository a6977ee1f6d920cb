#include "deepdisaster/losses.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "deepdisaster/log.hpp"

namespace deepdisaster {

namespace {

void require_same(std::size_t a, std::size_t b, const char* who) {
  if (a != b)
    throw std::invalid_argument(std::string(who) + ": size mismatch (" + std::to_string(a) + " vs " +
                                std::to_string(b) + ")");
  if (a == 0) throw std::invalid_argument(std::string(who) + ": empty input");
}

void require_grad(std::span<double> grad, std::size_t n, const char* who) {
  if (!grad.empty() && grad.size() != n)
    throw std::invalid_argument(std::string(who) + ": gradient buffer has wrong size");
}

double clamp_prob(double p) { return std::clamp(p, kProbEpsilon, 1.0 - kProbEpsilon); }

std::span<double> grad_span(Tensor* t) { return t ? t->values() : std::span<double>{}; }

}  // namespace

double loss_val(std::span<const double> a_s, std::span<const double> a_t, std::span<double> grad_s,
                std::span<double> grad_t, double scale) {
  require_same(a_s.size(), a_t.size(), "loss_val");
  require_grad(grad_s, a_s.size(), "loss_val");
  require_grad(grad_t, a_t.size(), "loss_val");
  const double n = static_cast<double>(a_s.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < a_s.size(); ++j) {
    const double d = a_s[j] - a_t[j];
    sum += d * d;
  }
  if (!grad_s.empty() || !grad_t.empty()) {
    const double k = 2.0 * scale / n;
    for (std::size_t j = 0; j < a_s.size(); ++j) {
      const double g = k * (a_s[j] - a_t[j]);
      if (!grad_s.empty()) grad_s[j] += g;
      if (!grad_t.empty()) grad_t[j] -= g;
    }
  }
  return sum / n;
}

double loss_dir(std::span<const double> a_s, std::span<const double> a_t, std::span<double> grad_s,
                std::span<double> grad_t, double scale) {
  require_same(a_s.size(), a_t.size(), "loss_dir");
  require_grad(grad_s, a_s.size(), "loss_dir");
  require_grad(grad_t, a_t.size(), "loss_dir");
  double dot = 0.0, ss = 0.0, tt = 0.0;
  for (std::size_t j = 0; j < a_s.size(); ++j) {
    dot += a_s[j] * a_t[j];
    ss += a_s[j] * a_s[j];
    tt += a_t[j] * a_t[j];
  }
  if (ss == 0.0 || tt == 0.0) throw ZeroNormError("loss_dir: cosine undefined for an all-zero activation vector");
  const double ns = std::sqrt(ss), nt = std::sqrt(tt);
  const double cosine = std::clamp(dot / (ns * nt), -1.0, 1.0);
  // d(1 - cos)/ds = -(t / (|s||t|) - cos * s / |s|^2)
  if (!grad_s.empty()) {
    const double a = scale / (ns * nt), b = scale * cosine / ss;
    for (std::size_t j = 0; j < a_s.size(); ++j) grad_s[j] -= a * a_t[j] - b * a_s[j];
  }
  if (!grad_t.empty()) {
    const double a = scale / (ns * nt), b = scale * cosine / tt;
    for (std::size_t j = 0; j < a_t.size(); ++j) grad_t[j] -= a * a_s[j] - b * a_t[j];
  }
  return 1.0 - cosine;
}

double loss_dir_batch(const Tensor& a_s, const Tensor& a_t, Tensor* grad_s, Tensor* grad_t, double scale) {
  if (a_s.shape() != a_t.shape())
    throw std::invalid_argument("loss_dir: shape mismatch " + shape_string(a_s.shape()) + " vs " +
                                shape_string(a_t.shape()));
  const int n = a_s.dim(0);
  double sum = 0.0;
  for (int i = 0; i < n; ++i)
    sum += loss_dir(a_s.sample(i), a_t.sample(i), grad_s ? grad_s->sample(i) : std::span<double>{},
                    grad_t ? grad_t->sample(i) : std::span<double>{}, scale / n);
  return sum / n;
}

double calibrate_alpha(double val_0, double dir_0) {
  if (dir_0 == 0.0) {
    warn("alpha calibration: initial direction loss is 0, using alpha = 1");
    return 1.0;
  }
  return val_0 / dir_0;
}

double loss_pair(const Tensor& a_s, const Tensor& a_t, double alpha, Tensor* grad_s, Tensor* grad_t, double scale) {
  if (a_s.shape() != a_t.shape())
    throw std::invalid_argument("distillation pair: shape mismatch " + shape_string(a_s.shape()) + " vs " +
                                shape_string(a_t.shape()));
  const double val = loss_val(a_s.values(), a_t.values(), grad_span(grad_s), grad_span(grad_t), scale);
  if (alpha == 0.0) return val;
  return val + alpha * loss_dir_batch(a_s, a_t, grad_s, grad_t, scale * alpha);
}

AdversarialTerms loss_adv(std::span<const double> prob_real, std::span<const double> prob_fake) {
  AdversarialTerms terms;
  if (!prob_fake.empty()) {
    double gen = 0.0, fake = 0.0;
    for (double p : prob_fake) {
      gen -= std::log(clamp_prob(p));
      fake -= std::log(1.0 - clamp_prob(p));
    }
    terms.gen_term = gen / static_cast<double>(prob_fake.size());
    terms.disc_term = fake / static_cast<double>(prob_fake.size());
  }
  if (!prob_real.empty()) {
    double real = 0.0;
    for (double p : prob_real) real -= std::log(clamp_prob(p));
    terms.disc_term += real / static_cast<double>(prob_real.size());
  }
  return terms;
}

void loss_adv_gen_grad(std::span<const double> prob_fake, std::span<double> grad_logit_fake, double scale) {
  require_grad(grad_logit_fake, prob_fake.size(), "loss_adv");
  const double n = static_cast<double>(prob_fake.size());
  for (std::size_t i = 0; i < prob_fake.size(); ++i) grad_logit_fake[i] += scale * (prob_fake[i] - 1.0) / n;
}

void loss_adv_disc_grad(std::span<const double> prob_real, std::span<const double> prob_fake,
                        std::span<double> grad_logit_real, std::span<double> grad_logit_fake, double scale) {
  require_grad(grad_logit_real, prob_real.size(), "loss_adv");
  require_grad(grad_logit_fake, prob_fake.size(), "loss_adv");
  const double nr = static_cast<double>(prob_real.size()), nf = static_cast<double>(prob_fake.size());
  for (std::size_t i = 0; i < prob_real.size(); ++i) grad_logit_real[i] += scale * (prob_real[i] - 1.0) / nr;
  for (std::size_t i = 0; i < prob_fake.size(); ++i) grad_logit_fake[i] += scale * prob_fake[i] / nf;
}

double loss_con(std::span<const double> x, std::span<const double> x_hat, std::span<double> grad_x,
                std::span<double> grad_x_hat, double scale) {
  require_same(x.size(), x_hat.size(), "loss_con");
  require_grad(grad_x, x.size(), "loss_con");
  require_grad(grad_x_hat, x_hat.size(), "loss_con");
  const double n = static_cast<double>(x.size());
  double sum = 0.0;
  for (std::size_t j = 0; j < x.size(); ++j) {
    const double d = x[j] - x_hat[j];
    sum += std::abs(d);
    const double g = d > 0.0 ? scale / n : (d < 0.0 ? -scale / n : 0.0);
    if (!grad_x.empty()) grad_x[j] += g;
    if (!grad_x_hat.empty()) grad_x_hat[j] -= g;
  }
  return sum / n;
}

double loss_lat(std::span<const double> f_x, std::span<const double> f_xhat, std::span<double> grad_f_x,
                std::span<double> grad_f_xhat, double scale) {
  return loss_val(f_x, f_xhat, grad_f_x, grad_f_xhat, scale);
}

double total_loss(const LossBreakdown& p, const ExperimentConfig& c) {
  return c.lambda_adv * p.l_adv + c.lambda_con * p.l_con + c.lambda_lat * p.l_lat + c.lambda_kg * p.l_kg +
         c.lambda_kd * p.l_kd + c.lambda_kz * p.l_kz;
}

namespace {

Tensor* maybe_alloc(ObjectiveGrads* grads, Tensor ObjectiveGrads::*member, const Tensor* like) {
  if (!grads || !like) return nullptr;
  Tensor& t = grads->*member;
  if (t.shape() != like->shape()) t = Tensor(like->shape());
  return &t;
}

bool have_kd(const ObjectiveInputs& in, const ExperimentConfig& c, CriticalLayer layer) {
  if (!c.uses(layer)) return false;
  switch (layer) {
    case CriticalLayer::generated_image: return in.teacher_x_hat != nullptr;
    case CriticalLayer::discriminator_features: return in.teacher_features != nullptr;
    case CriticalLayer::bottleneck_z: return in.teacher_z != nullptr && in.z != nullptr;
  }
  return false;
}

}  // namespace

LossBreakdown training_objective(const ObjectiveInputs& in, const ExperimentConfig& c, const Alphas& alphas,
                                 ObjectiveGrads* grads) {
  if (!in.x || !in.x_hat || !in.f_real || !in.f_fake || !in.prob_fake)
    throw std::invalid_argument("training_objective: missing student tensors");
  LossBreakdown parts;
  parts.alpha_g = alphas.g;
  parts.alpha_d = alphas.d;

  Tensor* g_x = maybe_alloc(grads, &ObjectiveGrads::x, in.x);
  Tensor* g_xhat = maybe_alloc(grads, &ObjectiveGrads::x_hat, in.x_hat);
  Tensor* g_freal = maybe_alloc(grads, &ObjectiveGrads::f_real, in.f_real);
  Tensor* g_ffake = maybe_alloc(grads, &ObjectiveGrads::f_fake, in.f_fake);
  Tensor* g_prob = maybe_alloc(grads, &ObjectiveGrads::logit_fake, in.prob_fake);
  Tensor* g_z = maybe_alloc(grads, &ObjectiveGrads::z, in.z);
  Tensor* g_txhat = maybe_alloc(grads, &ObjectiveGrads::teacher_x_hat, in.teacher_x_hat);
  Tensor* g_tf = maybe_alloc(grads, &ObjectiveGrads::teacher_features, in.teacher_features);
  Tensor* g_tz = maybe_alloc(grads, &ObjectiveGrads::teacher_z, in.teacher_z);
  // a term only contributes gradient when its weight is nonzero
  auto when = [](Tensor* t, double weight) { return weight != 0.0 ? t : nullptr; };

  parts.l_adv = loss_adv({}, in.prob_fake->values()).gen_term;
  if (g_prob && c.lambda_adv != 0.0) loss_adv_gen_grad(in.prob_fake->values(), g_prob->values(), c.lambda_adv);

  parts.l_con = loss_con(in.x->values(), in.x_hat->values(), grad_span(when(g_x, c.lambda_con)),
                         grad_span(when(g_xhat, c.lambda_con)), c.lambda_con);
  parts.l_lat = loss_lat(in.f_real->values(), in.f_fake->values(), grad_span(when(g_freal, c.lambda_lat)),
                         grad_span(when(g_ffake, c.lambda_lat)), c.lambda_lat);

  if (have_kd(in, c, CriticalLayer::generated_image))
    parts.l_kg = loss_kg(*in.x_hat, *in.teacher_x_hat, alphas.g, when(g_xhat, c.lambda_kg), when(g_txhat, c.lambda_kg),
                         c.lambda_kg);
  if (have_kd(in, c, CriticalLayer::discriminator_features))
    parts.l_kd = loss_kd(*in.f_fake, *in.teacher_features, alphas.d, when(g_ffake, c.lambda_kd),
                         when(g_tf, c.lambda_kd), c.lambda_kd);
  if (have_kd(in, c, CriticalLayer::bottleneck_z))
    parts.l_kz = loss_pair(*in.z, *in.teacher_z, alphas.z, when(g_z, c.lambda_kz), when(g_tz, c.lambda_kz), c.lambda_kz);

  parts.total = total_loss(parts, c);
  return parts;
}

Alphas calibrate_alphas(const ObjectiveInputs& in, const ExperimentConfig& c) {
  Alphas a;
  auto calibrate = [](const Tensor& s, const Tensor& t) {
    return calibrate_alpha(loss_val(s.values(), t.values()), loss_dir_batch(s, t));
  };
  if (have_kd(in, c, CriticalLayer::generated_image)) a.g = calibrate(*in.x_hat, *in.teacher_x_hat);
  if (have_kd(in, c, CriticalLayer::discriminator_features)) a.d = calibrate(*in.f_fake, *in.teacher_features);
  if (have_kd(in, c, CriticalLayer::bottleneck_z)) a.z = calibrate(*in.z, *in.teacher_z);
  return a;
}

}  // namespace deepdisaster
