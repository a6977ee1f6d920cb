#include "deepdisaster/scoring.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>

#include "deepdisaster/log.hpp"
#include "deepdisaster/text.hpp"

namespace deepdisaster {

double AnomalyScore::discrepancy() const {
  double s = 0.0;
  for (const auto& l : layers) s += l.v + l.alpha * l.d;
  return s;
}

double combine_score(double l_term, double r_term, const std::vector<LayerDiscrepancy>& layers,
                     const ExperimentConfig& config) {
  double kd = 0.0;
  for (const auto& l : layers) kd += l.v + l.alpha * l.d;
  return config.omega_l * l_term + config.omega_r * r_term + config.omega_vd * kd;
}

namespace {

LayerDiscrepancy discrepancy(CriticalLayer layer, std::span<const double> s, std::span<const double> t, double alpha,
                             const std::string& sample_id) {
  LayerDiscrepancy out{layer, loss_val(s, t), 0.0, alpha};
  try {
    out.d = loss_dir(s, t);
  } catch (const ZeroNormError&) {
    throw ScoringError("sample '" + sample_id + "': zero activation on layer " + std::string(to_string(layer)) +
                       ", direction discrepancy undefined");
  }
  return out;
}

double alpha_for(const Alphas& a, CriticalLayer layer) {
  switch (layer) {
    case CriticalLayer::generated_image: return a.g;
    case CriticalLayer::discriminator_features: return a.d;
    case CriticalLayer::bottleneck_z: return a.z;
  }
  return 1.0;
}

}  // namespace

std::vector<AnomalyScore> score_batch(GanPair& student, GanPair* teacher, const Alphas& alphas,
                                      const ExperimentConfig& config, const ImageBatch& batch) {
  const Tensor& x = batch.pixels;
  const int n = x.dim(0);
  if (static_cast<std::size_t>(n) != batch.sample_ids.size())
    throw ScoringError("score_batch: pixel batch and id list differ in length");

  auto s_gen = student.generator.forward(x, false);
  auto s_real = student.discriminator.forward(x, false);
  auto s_fake = student.discriminator.forward(s_gen.x_hat, false);

  Generator::Trace t_gen;
  Tensor t_features;
  if (teacher) {
    t_gen = teacher->generator.forward(x, false);
    auto t_fake = teacher->discriminator.forward(t_gen.x_hat, false);
    t_features = adapt_features(t_fake.features, s_fake.features.dim(1));
  }

  std::vector<AnomalyScore> out(n);
  for (int i = 0; i < n; ++i) {
    AnomalyScore& s = out[i];
    s.sample_id = batch.sample_ids[i];
    s.l_term = loss_con(x.sample(i), s_gen.x_hat.sample(i));
    s.r_term = loss_val(s_real.features.sample(i), s_fake.features.sample(i));
    if (teacher) {
      for (CriticalLayer layer : config.critical_layers) {
        const Tensor* sa = nullptr;
        const Tensor* ta = nullptr;
        switch (layer) {
          case CriticalLayer::generated_image: sa = &s_gen.x_hat, ta = &t_gen.x_hat; break;
          case CriticalLayer::discriminator_features: sa = &s_fake.features, ta = &t_features; break;
          case CriticalLayer::bottleneck_z: sa = &s_gen.z, ta = &t_gen.z; break;
        }
        s.layers.push_back(discrepancy(layer, sa->sample(i), ta->sample(i), alpha_for(alphas, layer), s.sample_id));
      }
    }
    for (const auto& l : s.layers) {
      s.v_term += l.v;
      s.d_term += l.d;
    }
    s.raw = combine_score(s.l_term, s.r_term, s.layers, config);
  }
  return out;
}

std::vector<AnomalyScore> score_samples(Checkpoint& student, Checkpoint* teacher, const ExperimentConfig& config,
                                        const DatasetIndex& data, const std::vector<std::string>& ids) {
  if (teacher && !student.alphas)
    throw ScoringError("student checkpoint has no calibrated alphas; discrepancy scores are undefined");
  const Alphas alphas = student.alphas.value_or(Alphas{});
  std::vector<AnomalyScore> out;
  out.reserve(ids.size());
  const std::size_t chunk = static_cast<std::size_t>(config.batch_size);
  for (std::size_t b = 0; b < ids.size(); b += chunk) {
    const std::span<const std::string> part(ids.data() + b, std::min(chunk, ids.size() - b));
    const ImageBatch batch = load_batch(data, part, config);
    auto scores = score_batch(student.nets, teacher ? &teacher->nets : nullptr, alphas, config, batch);
    for (auto& s : scores) {
      s.label = data.find(s.sample_id).label;
      out.push_back(std::move(s));
    }
  }
  return out;
}

std::vector<AnomalyScore> normalize_scores(std::vector<AnomalyScore> scores) {
  if (scores.empty()) return scores;
  const auto [lo, hi] = std::minmax_element(scores.begin(), scores.end(),
                                            [](const auto& a, const auto& b) { return a.raw < b.raw; });
  const double mn = lo->raw, mx = hi->raw;
  if (!(mx > mn)) {
    warn("all raw scores are equal; normalized scores set to 0.5");
    for (auto& s : scores) s.normalized = 0.5;
    return scores;
  }
  for (auto& s : scores) s.normalized = (s.raw - mn) / (mx - mn);
  return scores;
}

Threshold estimate_threshold(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("estimate_threshold: length mismatch");
  int pos = 0, neg = 0;
  for (int l : labels) (l ? pos : neg)++;
  if (pos == 0 || neg == 0) throw std::invalid_argument("estimate_threshold: both labels must be present");

  std::vector<double> sorted = scores;
  std::sort(sorted.begin(), sorted.end());
  sorted.erase(std::unique(sorted.begin(), sorted.end()), sorted.end());
  std::vector<double> cuts{sorted.front()};
  for (std::size_t i = 1; i < sorted.size(); ++i) cuts.push_back(0.5 * (sorted[i - 1] + sorted[i]));

  Threshold best;
  best.youden_j = -std::numeric_limits<double>::infinity();
  for (double cut : cuts) {
    Threshold t;
    t.value = cut;
    for (std::size_t i = 0; i < scores.size(); ++i) {
      const bool predicted = scores[i] >= cut;
      if (labels[i]) (predicted ? t.tp : t.fn)++;
      else (predicted ? t.fp : t.tn)++;
    }
    t.youden_j = static_cast<double>(t.tp) / pos - static_cast<double>(t.fp) / neg;
    if (t.youden_j > best.youden_j) best = t;  // strict: ties keep the lower cut
  }
  if (best.youden_j <= 0.0) warn("threshold estimation is degenerate: best Youden J is not positive");
  return best;
}

std::vector<double> raw_scores(const std::vector<AnomalyScore>& scores) {
  std::vector<double> out;
  for (const auto& s : scores) out.push_back(s.raw);
  return out;
}

std::vector<double> normalized_scores(const std::vector<AnomalyScore>& scores) {
  std::vector<double> out;
  for (const auto& s : scores) out.push_back(s.normalized);
  return out;
}

std::vector<int> binary_labels(const std::vector<AnomalyScore>& scores) {
  std::vector<int> out;
  for (const auto& s : scores) {
    if (!s.label) throw std::invalid_argument("score for '" + s.sample_id + "' has no label");
    out.push_back(*s.label == Label::damage ? 1 : 0);
  }
  return out;
}

void write_scores_csv(const std::vector<AnomalyScore>& scores, const std::filesystem::path& path,
                      const std::string& header) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write scores file '" + path.string() + "'");
  out << header << "sample_id,label,l_term,r_term,v_term,d_term,raw,normalized";
  if (!scores.empty())
    for (const auto& l : scores.front().layers) {
      const std::string name(to_string(l.layer));
      out << ",v_" << name << ",d_" << name << ",alpha_" << name;
    }
  out << '\n';
  for (const auto& s : scores) {
    out << s.sample_id << ',' << (s.label ? to_string(*s.label) : "") << ',' << format_real(s.l_term) << ','
        << format_real(s.r_term) << ',' << format_real(s.v_term) << ',' << format_real(s.d_term) << ','
        << format_real(s.raw) << ',' << format_real(s.normalized);
    for (const auto& l : s.layers)
      out << ',' << format_real(l.v) << ',' << format_real(l.d) << ',' << format_real(l.alpha);
    out << '\n';
  }
  if (!out) throw std::runtime_error("write failure on '" + path.string() + "'");
}

std::vector<AnomalyScore> read_scores_csv(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read scores file '" + path.string() + "'");
  std::string line;
  std::vector<CriticalLayer> layers;
  bool have_header = false;
  std::vector<AnomalyScore> out;
  int lineno = 0;
  auto real = [&](const std::string& text) {
    const auto v = parse_real(text);
    if (!v) throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": bad number '" + text + "'");
    return *v;
  };
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty() || line[0] == '#') continue;
    const auto cells = split(line, ',');
    if (!have_header) {
      if (cells.size() < 8 || cells[0] != "sample_id")
        throw std::runtime_error(path.string() + ": missing scores header");
      for (std::size_t c = 8; c + 2 < cells.size(); c += 3)
        layers.push_back(critical_layer_from_string(cells[c].substr(2)));
      have_header = true;
      continue;
    }
    if (cells.size() != 8 + 3 * layers.size())
      throw std::runtime_error(path.string() + ":" + std::to_string(lineno) + ": wrong column count");
    AnomalyScore s;
    s.sample_id = cells[0];
    if (cells[1] == "damage") s.label = Label::damage;
    else if (cells[1] == "no_damage") s.label = Label::no_damage;
    s.l_term = real(cells[2]);
    s.r_term = real(cells[3]);
    s.v_term = real(cells[4]);
    s.d_term = real(cells[5]);
    s.raw = real(cells[6]);
    s.normalized = real(cells[7]);
    for (std::size_t k = 0; k < layers.size(); ++k)
      s.layers.push_back({layers[k], real(cells[8 + 3 * k]), real(cells[9 + 3 * k]), real(cells[10 + 3 * k])});
    out.push_back(std::move(s));
  }
  return out;
}

}  // namespace deepdisaster
