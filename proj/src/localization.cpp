#include "deepdisaster/localization.hpp"

#include <algorithm>
#include <cmath>
#include <random>

#include <opencv2/imgproc.hpp>

#include "deepdisaster/metadata.hpp"

namespace deepdisaster {

std::string_view to_string(SaliencyMethod method) {
  switch (method) {
    case SaliencyMethod::vanilla: return "vanilla";
    case SaliencyMethod::smoothgrad: return "smoothgrad";
    case SaliencyMethod::guided: return "guided";
  }
  return "?";
}

SaliencyMethod saliency_method_from_string(std::string_view name) {
  if (name == "vanilla") return SaliencyMethod::vanilla;
  if (name == "smoothgrad") return SaliencyMethod::smoothgrad;
  if (name == "guided") return SaliencyMethod::guided;
  throw std::invalid_argument("unknown saliency method '" + std::string(name) + "' (vanilla, smoothgrad, guided)");
}

namespace {

struct Forward {
  Generator::Trace s_gen;
  Discriminator::Trace s_real, s_fake;
  Generator::Trace t_gen;
  Discriminator::Trace t_fake;
  Tensor t_features;
  ObjectiveInputs in;
};

// The traces are referenced by `in`, so Forward must stay where it was built.
void run_forward(FrozenModels& m, const Tensor& x, Forward& f) {
  if (!m.student) throw std::invalid_argument("saliency: no student network");
  f.s_gen = m.student->generator.forward(x, false);
  f.s_real = m.student->discriminator.forward(x, false);
  f.s_fake = m.student->discriminator.forward(f.s_gen.x_hat, false);
  f.in = ObjectiveInputs{&x, &f.s_gen.x_hat, &f.s_real.features, &f.s_fake.features, &f.s_fake.prob, &f.s_gen.z};
  if (m.teacher) {
    f.t_gen = m.teacher->generator.forward(x, false);
    f.t_fake = m.teacher->discriminator.forward(f.t_gen.x_hat, false);
    f.t_features = adapt_features(f.t_fake.features, f.s_fake.features.dim(1));
    f.in.teacher_x_hat = &f.t_gen.x_hat;
    f.in.teacher_features = &f.t_features;
    f.in.teacher_z = &f.t_gen.z;
  }
}

bool finite(const Tensor& t) { return t.all_finite(); }

}  // namespace

ObjectiveGradient objective_gradient(FrozenModels& m, const ExperimentConfig& config, const Tensor& x,
                                     GradRule rule) {
  Forward f;
  run_forward(m, x, f);
  ObjectiveGrads g;
  ObjectiveGradient out;
  out.parts = training_objective(f.in, config, m.alphas, &g);

  Discriminator& sd = m.student->discriminator;
  Tensor g_xhat = sd.backward(f.s_fake, g.f_fake, g.logit_fake, rule, false);
  g_xhat += g.x_hat;
  out.grad_x = m.student->generator.backward(f.s_gen, g_xhat, g.z, rule, false);
  out.grad_x += sd.backward(f.s_real, g.f_real, {}, rule, false);
  out.grad_x += g.x;
  if (m.teacher) {
    const Tensor g_tf = adapt_features_backward(g.teacher_features, f.t_fake.features.dim(1));
    Tensor g_txhat = m.teacher->discriminator.backward(f.t_fake, g_tf, {}, rule, false);
    g_txhat += g.teacher_x_hat;
    out.grad_x += m.teacher->generator.backward(f.t_gen, g_txhat, g.teacher_z, rule, false);
  }
  if (!finite(out.grad_x)) {
    const auto& p = out.parts;
    throw SaliencyError("non-finite input gradient (l_adv=" + std::to_string(p.l_adv) + " l_con=" +
                        std::to_string(p.l_con) + " l_lat=" + std::to_string(p.l_lat) + " l_kg=" +
                        std::to_string(p.l_kg) + " l_kd=" + std::to_string(p.l_kd) + " total=" +
                        std::to_string(p.total) + ")");
  }
  return out;
}

double objective_value(FrozenModels& m, const ExperimentConfig& config, const Tensor& x) {
  Forward f;
  run_forward(m, x, f);
  return training_objective(f.in, config, m.alphas).total;
}

void postprocess(SaliencyMap& m, ChannelReduction reduction) {
  const int c = m.raw.dim(1), h = m.raw.dim(2), w = m.raw.dim(3);
  m.reduced = Tensor({h, w});
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      double acc = 0.0;
      for (int k = 0; k < c; ++k) {
        const double v = std::abs(m.raw.at(0, k, y, x));
        acc = reduction == ChannelReduction::max ? std::max(acc, v) : acc + v;
      }
      m.reduced[static_cast<std::size_t>(y) * w + x] = reduction == ChannelReduction::max ? acc : acc / c;
    }
  const auto [lo, hi] = std::minmax_element(m.reduced.values().begin(), m.reduced.values().end());
  const double mn = *lo, mx = *hi;
  m.map = Tensor({h, w});
  if (mx > mn) {
    for (std::size_t i = 0; i < m.map.size(); ++i) m.map[i] = (m.reduced[i] - mn) / (mx - mn);
  } else if (mx > 0.0) {
    m.map.fill(1.0);  // constant nonzero evidence
  }
}

namespace {

SaliencyMap gradient_map(FrozenModels& models, const ExperimentConfig& config, const Tensor& x,
                         const std::string& id, SaliencyMethod method, GradRule rule) {
  if (x.rank() != 4 || x.dim(0) != 1) throw std::invalid_argument("saliency: expects a single image (1, C, H, W)");
  SaliencyMap m;
  m.sample_id = id;
  m.method = method;
  m.raw = objective_gradient(models, config, x, rule).grad_x;
  postprocess(m, config.saliency_reduction);
  return m;
}

}  // namespace

SaliencyMap vanilla_gradient(FrozenModels& models, const ExperimentConfig& config, const Tensor& x,
                             const std::string& sample_id) {
  return gradient_map(models, config, x, sample_id, SaliencyMethod::vanilla, GradRule::standard);
}

SaliencyMap guided_backprop(FrozenModels& models, const ExperimentConfig& config, const Tensor& x,
                            const std::string& sample_id) {
  return gradient_map(models, config, x, sample_id, SaliencyMethod::guided, GradRule::guided);
}

SaliencyMap smooth_gradient(FrozenModels& models, const ExperimentConfig& config, const Tensor& x, int n,
                            double sigma, std::uint64_t seed, const std::string& sample_id) {
  if (n < 1) throw std::invalid_argument("smooth_gradient: n must be at least 1");
  if (!(sigma >= 0.0)) throw std::invalid_argument("smooth_gradient: sigma must be nonnegative");
  if (x.rank() != 4 || x.dim(0) != 1) throw std::invalid_argument("saliency: expects a single image (1, C, H, W)");
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> noise(0.0, sigma > 0.0 ? sigma : 1.0);
  Tensor mean(x.shape());
  for (int k = 1; k <= n; ++k) {
    Tensor xn = x;
    if (sigma > 0.0)
      for (double& v : xn.values()) v += noise(rng);
    const Tensor g = objective_gradient(models, config, xn).grad_x;
    // running mean keeps sigma = 0 bitwise equal to a single vanilla gradient
    for (std::size_t i = 0; i < mean.size(); ++i) mean[i] += (g[i] - mean[i]) / k;
  }
  SaliencyMap m;
  m.sample_id = sample_id;
  m.method = SaliencyMethod::smoothgrad;
  m.raw = std::move(mean);
  m.n = n;
  m.sigma = sigma;
  postprocess(m, config.saliency_reduction);
  return m;
}

double saliency_quality(const Tensor& map, const DefectBox& box) {
  if (map.rank() != 2) throw std::invalid_argument("saliency_quality: map must be (H, W)");
  const int h = map.dim(0), w = map.dim(1);
  if (box.x0 < 0 || box.y0 < 0 || box.x1 > w || box.y1 > h || box.x0 >= box.x1 || box.y0 >= box.y1)
    throw std::invalid_argument("saliency_quality: degenerate or out-of-range box");
  const long inside = static_cast<long>(box.x1 - box.x0) * (box.y1 - box.y0);
  const long outside = static_cast<long>(h) * w - inside;
  if (outside == 0) throw std::invalid_argument("saliency_quality: box covers the whole image");
  double sum_in = 0.0, sum_out = 0.0;
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) {
      const double v = map[static_cast<std::size_t>(y) * w + x];
      (x >= box.x0 && x < box.x1 && y >= box.y0 && y < box.y1 ? sum_in : sum_out) += v;
    }
  return (sum_in / inside) / (sum_out / outside + 1e-8);
}

void export_heatmap(const Tensor& map, const Tensor& x, const std::filesystem::path& path,
                    const std::string& comment) {
  if (map.rank() != 2 || x.rank() != 4 || map.dim(0) != x.dim(2) || map.dim(1) != x.dim(3))
    throw std::invalid_argument("export_heatmap: map and image sizes differ");
  cv::Mat base = tensor_to_image(x);
  if (base.channels() == 1) cv::cvtColor(base, base, cv::COLOR_GRAY2BGR);
  const int h = map.dim(0), w = map.dim(1);
  cv::Mat level(h, w, CV_8UC1);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx)
      level.at<unsigned char>(y, xx) = static_cast<unsigned char>(
          std::lround(255.0 * std::clamp(map[static_cast<std::size_t>(y) * w + xx], 0.0, 1.0)));
  cv::Mat color;
  cv::applyColorMap(level, color, cv::COLORMAP_JET);
  cv::Mat out(h, w, CV_8UC3);
  for (int y = 0; y < h; ++y)
    for (int xx = 0; xx < w; ++xx) {
      const double a = std::clamp(map[static_cast<std::size_t>(y) * w + xx], 0.0, 1.0);
      const auto& b = base.at<cv::Vec3b>(y, xx);
      const auto& c = color.at<cv::Vec3b>(y, xx);
      auto& o = out.at<cv::Vec3b>(y, xx);
      for (int k = 0; k < 3; ++k) o[k] = static_cast<unsigned char>(std::lround(0.5 * b[k] + 0.5 * a * c[k]));
    }
  write_png(out, path, comment);
}

}  // namespace deepdisaster
