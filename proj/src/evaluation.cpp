#include "deepdisaster/evaluation.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>

#include <json.hpp>

namespace deepdisaster {

double auc_roc(const std::vector<double>& scores, const std::vector<int>& labels) {
  if (scores.size() != labels.size()) throw std::invalid_argument("auc_roc: scores and labels differ in length");
  std::size_t pos = 0;
  for (int l : labels) pos += l ? 1 : 0;
  const std::size_t neg = labels.size() - pos;
  if (pos == 0 || neg == 0) throw std::invalid_argument("auc_roc: both classes must be present");

  // Mann-Whitney U with midranks; all quantities are exact halves, so the result equals the pairwise count.
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double midrank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1 .. j
    for (std::size_t k = i; k < j; ++k)
      if (labels[order[k]]) rank_sum += midrank;
    i = j;
  }
  const double p = static_cast<double>(pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(neg));
}

ClassResult evaluate_class(ModelPair& model, const DatasetIndex& data, const std::string& disaster_class,
                           const ExperimentConfig& config) {
  ClassResult r;
  r.disaster_class = disaster_class;
  r.counts.train = data.ids(Split::train, disaster_class).size();
  r.counts.test_no_damage = data.count(Split::test, Label::no_damage, disaster_class);
  r.counts.test_damage = data.count(Split::test, Label::damage, disaster_class);
  r.counts.test = r.counts.test_no_damage + r.counts.test_damage;
  if (r.counts.test_no_damage == 0 || r.counts.test_damage == 0)
    throw std::invalid_argument("class '" + disaster_class + "' test split needs both damage and no_damage samples");

  auto scores = score_samples(model.student, model.teacher ? &*model.teacher : nullptr, config, data,
                              data.ids(Split::test, disaster_class));
  r.scores = normalize_scores(std::move(scores));
  const auto labels = binary_labels(r.scores);
  r.auc = auc_roc(raw_scores(r.scores), labels);
  r.threshold = estimate_threshold(normalized_scores(r.scores), labels);
  return r;
}

UnseenResult evaluate_unseen(std::map<std::string, ModelPair*>& models, const std::string& target_class,
                             const DatasetIndex& data, const ExperimentConfig& config) {
  UnseenResult r;
  r.target_class = target_class;
  for (auto& [home, model] : models) {
    if (home == target_class) continue;
    r.per_model_auc[home] = evaluate_class(*model, data, target_class, config).auc;
  }
  if (r.per_model_auc.empty())
    throw std::invalid_argument("no model trained on a class other than '" + target_class + "'");
  double sum = 0.0;
  for (const auto& [home, auc] : r.per_model_auc) sum += auc;
  r.auc = sum / static_cast<double>(r.per_model_auc.size());
  return r;
}

double EvalReport::seen_average() const {
  if (seen.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : seen) s += c.auc;
  return s / static_cast<double>(seen.size());
}

double EvalReport::unseen_average() const {
  if (unseen.empty()) return 0.0;
  double s = 0.0;
  for (const auto& c : unseen) s += c.auc;
  return s / static_cast<double>(unseen.size());
}

namespace {

std::string fixed3(double v) {
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.3f", v);
  return buf;
}

}  // namespace

std::string report_table(const EvalReport& report) {
  // Column set: every class that appears in either row, in sorted order.
  std::vector<std::string> classes;
  for (const auto& c : report.seen) classes.push_back(c.disaster_class);
  for (const auto& u : report.unseen) classes.push_back(u.target_class);
  std::sort(classes.begin(), classes.end());
  classes.erase(std::unique(classes.begin(), classes.end()), classes.end());

  std::size_t width = 8;
  for (const auto& c : classes) width = std::max(width, c.size());
  auto cell = [&](const std::string& s) { return s + std::string(width - std::min(width, s.size()) + 2, ' '); };

  std::ostringstream os;
  os << cell("model");
  for (const auto& c : classes) os << cell(c);
  os << "average\n";
  auto row = [&](const std::string& name, auto lookup, bool present, double avg) {
    if (!present) return;
    os << cell(name);
    for (const auto& c : classes) os << cell(lookup(c));
    os << fixed3(avg) << '\n';
  };
  row("seen", [&](const std::string& c) {
    for (const auto& r : report.seen) if (r.disaster_class == c) return fixed3(r.auc);
    return std::string("-");
  }, !report.seen.empty(), report.seen_average());
  row("unseen", [&](const std::string& c) {
    for (const auto& r : report.unseen) if (r.target_class == c) return fixed3(r.auc);
    return std::string("-");
  }, !report.unseen.empty(), report.unseen_average());
  return os.str();
}

void render_report(const EvalReport& report, const std::filesystem::path& out_dir, const std::string& header) {
  if (report.seen.empty() && report.unseen.empty()) throw std::invalid_argument("render_report: nothing to report");
  std::filesystem::create_directories(out_dir);

  using json = nlohmann::ordered_json;
  json j;
  json meta = json::array();
  std::istringstream hs(header);
  for (std::string line; std::getline(hs, line);) meta.push_back(line);
  j["metadata"] = meta;
  j["config_hash"] = report.config_hash;
  json seen = json::array();
  for (const auto& c : report.seen) {
    seen.push_back({{"class", c.disaster_class},
                    {"auc_roc", c.auc},
                    {"counts",
                     {{"train", c.counts.train},
                      {"test", c.counts.test},
                      {"test_no_damage", c.counts.test_no_damage},
                      {"test_damage", c.counts.test_damage}}},
                    {"threshold",
                     {{"value", c.threshold.value},
                      {"youden_j", c.threshold.youden_j},
                      {"tp", c.threshold.tp},
                      {"fp", c.threshold.fp},
                      {"tn", c.threshold.tn},
                      {"fn", c.threshold.fn}}}});
  }
  j["seen"] = seen;
  json unseen = json::array();
  for (const auto& u : report.unseen) {
    json models = json::object();
    for (const auto& [home, auc] : u.per_model_auc) models[home] = auc;
    unseen.push_back({{"class", u.target_class}, {"auc_roc", u.auc}, {"per_model_auc", models}});
  }
  j["unseen"] = unseen;
  if (!report.seen.empty()) j["seen_average"] = report.seen_average();
  if (!report.unseen.empty()) j["unseen_average"] = report.unseen_average();

  auto write = [](const std::filesystem::path& p, const std::string& text) {
    std::ofstream out(p, std::ios::trunc | std::ios::binary);
    if (!out) throw std::runtime_error("cannot write report '" + p.string() + "'");
    out << text;
    if (!out) throw std::runtime_error("write failure on '" + p.string() + "'");
  };
  write(out_dir / "results.json", j.dump(2) + "\n");
  write(out_dir / "results.txt", header + report_table(report));
}

}  // namespace deepdisaster
