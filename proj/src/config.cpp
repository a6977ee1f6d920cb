#include "deepdisaster/config.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <sstream>

#include "deepdisaster/text.hpp"

namespace deepdisaster {

std::string_view to_string(CriticalLayer layer) {
  switch (layer) {
    case CriticalLayer::generated_image: return "generated_image";
    case CriticalLayer::discriminator_features: return "discriminator_features";
    case CriticalLayer::bottleneck_z: return "bottleneck_z";
  }
  return "?";
}

CriticalLayer critical_layer_from_string(std::string_view name) {
  if (name == "generated_image" || name == "x_hat") return CriticalLayer::generated_image;
  if (name == "discriminator_features" || name == "f") return CriticalLayer::discriminator_features;
  if (name == "bottleneck_z" || name == "z") return CriticalLayer::bottleneck_z;
  throw ConfigError("unknown critical layer '" + std::string(name) + "'");
}

double LrDecay::factor(int epoch) const {
  if (kind == Kind::none) return 1.0;
  return std::pow(rate, epoch);
}

bool ExperimentConfig::uses(CriticalLayer layer) const {
  return std::find(critical_layers.begin(), critical_layers.end(), layer) != critical_layers.end();
}

ExperimentConfig default_config() { return ExperimentConfig{}; }

namespace {

std::string format_double(double v) { return format_real(v); }

double parse_double(std::string_view key, std::string_view text) {
  const auto v = parse_real(text);
  if (!v || !std::isfinite(*v))
    throw ConfigError(std::string(key) + ": expected a real number, got '" + std::string(text) + "'");
  return *v;
}

template <class Int>
Int parse_int(std::string_view key, std::string_view text) {
  Int v = 0;
  const auto res = std::from_chars(text.data(), text.data() + text.size(), v);
  if (res.ec != std::errc() || res.ptr != text.data() + text.size())
    throw ConfigError(std::string(key) + ": expected an integer, got '" + std::string(text) + "'");
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1" || text == "yes") return true;
  if (text == "false" || text == "0" || text == "no") return false;
  throw ConfigError(std::string(key) + ": expected true/false, got '" + std::string(text) + "'");
}

struct Field {
  std::string key;
  std::function<std::string(const ExperimentConfig&)> get;
  std::function<void(ExperimentConfig&, std::string_view)> set;
};

Field int_field(std::string key, int ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return std::to_string(c.*member); },
          [member, key](ExperimentConfig& c, std::string_view v) { c.*member = parse_int<int>(key, v); }};
}

Field real_field(std::string key, double ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return format_double(c.*member); },
          [member, key](ExperimentConfig& c, std::string_view v) { c.*member = parse_double(key, v); }};
}

Field bool_field(std::string key, bool ExperimentConfig::*member) {
  return {key, [member](const ExperimentConfig& c) { return std::string(c.*member ? "true" : "false"); },
          [member, key](ExperimentConfig& c, std::string_view v) { c.*member = parse_bool(key, v); }};
}

Field path_field(std::string key, std::string Paths::*member) {
  return {key, [member](const ExperimentConfig& c) { return c.paths.*member; },
          [member](ExperimentConfig& c, std::string_view v) { c.paths.*member = std::string(v); }};
}

const std::vector<Field>& fields() {
  static const std::vector<Field> table = [] {
    using C = ExperimentConfig;
    std::vector<Field> f;
    f.push_back(int_field("model.image_size", &C::image_size));
    f.push_back(int_field("model.channels", &C::channels));
    f.push_back(int_field("model.latent_dim", &C::latent_dim));
    f.push_back(int_field("model.teacher_base_width", &C::teacher_base_width));
    f.push_back(int_field("model.student_base_width", &C::student_base_width));
    f.push_back(bool_field("model.skip_connections", &C::skip_connections));
    f.push_back(bool_field("model.equal_size_student", &C::equal_size_student));
    f.push_back(real_field("optim.learning_rate", &C::learning_rate));
    f.push_back(real_field("optim.teacher_learning_rate", &C::teacher_learning_rate));
    f.push_back(real_field("optim.discriminator_learning_rate", &C::discriminator_learning_rate));
    f.push_back({"optim.lr_decay",
                 [](const C& c) {
                   return c.lr_decay.kind == LrDecay::Kind::none ? std::string("none")
                                                                 : "exponential:" + format_double(c.lr_decay.rate);
                 },
                 [](C& c, std::string_view v) {
                   if (v == "none") {
                     c.lr_decay = {LrDecay::Kind::none, 1.0};
                     return;
                   }
                   const auto colon = v.find(':');
                   if (colon == std::string_view::npos || trim(v.substr(0, colon)) != "exponential")
                     throw ConfigError("optim.lr_decay: expected 'none' or 'exponential:<rate>', got '" +
                                       std::string(v) + "'");
                   c.lr_decay = {LrDecay::Kind::exponential, parse_double("optim.lr_decay", trim(v.substr(colon + 1)))};
                 }});
    f.push_back(real_field("optim.momentum_beta1", &C::momentum_beta1));
    f.push_back(real_field("optim.momentum_beta2", &C::momentum_beta2));
    f.push_back(int_field("train.batch_size", &C::batch_size));
    f.push_back(int_field("train.epochs", &C::epochs));
    f.push_back(int_field("train.teacher_epochs", &C::teacher_epochs));
    f.push_back({"train.teacher_corpus",
                 [](const C& c) {
                   return std::string(c.teacher_corpus == TeacherCorpus::generic ? "generic" : "in_domain");
                 },
                 [](C& c, std::string_view v) {
                   if (v == "generic") c.teacher_corpus = TeacherCorpus::generic;
                   else if (v == "in_domain") c.teacher_corpus = TeacherCorpus::in_domain;
                   else throw ConfigError("train.teacher_corpus: expected in_domain or generic, got '" + std::string(v) + "'");
                 }});
    f.push_back(real_field("train.train_fraction", &C::train_fraction));
    f.push_back({"train.seed", [](const C& c) { return std::to_string(c.seed); },
                 [](C& c, std::string_view v) { c.seed = parse_int<std::int64_t>("train.seed", v); }});
    f.push_back(real_field("loss.lambda_adv", &C::lambda_adv));
    f.push_back(real_field("loss.lambda_con", &C::lambda_con));
    f.push_back(real_field("loss.lambda_lat", &C::lambda_lat));
    f.push_back(real_field("loss.lambda_kg", &C::lambda_kg));
    f.push_back(real_field("loss.lambda_kd", &C::lambda_kd));
    f.push_back(real_field("loss.lambda_kz", &C::lambda_kz));
    f.push_back(bool_field("loss.distill_discriminator", &C::distill_discriminator));
    f.push_back({"loss.critical_layers",
                 [](const C& c) {
                   std::string out;
                   for (std::size_t i = 0; i < c.critical_layers.size(); ++i) {
                     if (i) out += ',';
                     out += to_string(c.critical_layers[i]);
                   }
                   return out;
                 },
                 [](C& c, std::string_view v) {
                   std::vector<CriticalLayer> layers;
                   std::size_t start = 0;
                   while (start <= v.size()) {
                     const auto comma = v.find(',', start);
                     const auto item = trim(v.substr(start, comma == std::string_view::npos ? v.npos : comma - start));
                     if (!item.empty()) {
                       try {
                         layers.push_back(critical_layer_from_string(item));
                       } catch (const ConfigError& e) {
                         throw ConfigError(std::string("loss.critical_layers: ") + e.what());
                       }
                     }
                     if (comma == std::string_view::npos) break;
                     start = comma + 1;
                   }
                   std::sort(layers.begin(), layers.end());
                   layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
                   c.critical_layers = std::move(layers);
                 }});
    f.push_back(real_field("score.omega_l", &C::omega_l));
    f.push_back(real_field("score.omega_r", &C::omega_r));
    f.push_back(real_field("score.omega_vd", &C::omega_vd));
    f.push_back(int_field("saliency.smoothgrad_samples", &C::smoothgrad_samples));
    f.push_back(real_field("saliency.smoothgrad_sigma_fraction", &C::smoothgrad_sigma_fraction));
    f.push_back({"saliency.channel_reduction",
                 [](const C& c) { return std::string(c.saliency_reduction == ChannelReduction::max ? "max" : "mean"); },
                 [](C& c, std::string_view v) {
                   if (v == "max") c.saliency_reduction = ChannelReduction::max;
                   else if (v == "mean") c.saliency_reduction = ChannelReduction::mean;
                   else throw ConfigError("saliency.channel_reduction: expected max or mean, got '" + std::string(v) + "'");
                 }});
    f.push_back(path_field("paths.dataset_root", &Paths::dataset_root));
    f.push_back(path_field("paths.checkpoint_dir", &Paths::checkpoint_dir));
    f.push_back(path_field("paths.report_dir", &Paths::report_dir));
    f.push_back(path_field("paths.teacher_corpus_root", &Paths::teacher_corpus_root));
    return f;
  }();
  return table;
}

std::string leaf(const std::string& key) { return key.substr(key.find('.') + 1); }

const Field* find_field(std::string_view key) {
  for (const Field& f : fields())
    if (f.key == key || leaf(f.key) == key) return &f;
  return nullptr;
}

}  // namespace

std::vector<std::string> validate_config(const ExperimentConfig& c) {
  std::vector<std::string> v;
  auto positive = [&v](const char* name, double value) {
    if (!(value > 0)) v.push_back(std::string(name) + " must be positive (got " + format_double(value) + ")");
  };
  auto nonnegative = [&v](const char* name, double value) {
    if (!(value >= 0)) v.push_back(std::string(name) + " must be nonnegative (got " + format_double(value) + ")");
  };

  const bool pow2 = c.image_size > 0 && (c.image_size & (c.image_size - 1)) == 0;
  if (c.image_size < 32 || !pow2)
    v.push_back("image_size must be a power of two >= 32 (got " + std::to_string(c.image_size) + ")");
  if (c.channels != 1 && c.channels != 3)
    v.push_back("channels must be 1 or 3 (got " + std::to_string(c.channels) + ")");
  positive("latent_dim", c.latent_dim);
  positive("teacher_base_width", c.teacher_base_width);
  positive("student_base_width", c.student_base_width);
  if (c.student_base_width > 0 && c.teacher_base_width > 0) {
    if (c.student_base_width > c.teacher_base_width)
      v.push_back("student_base_width (" + std::to_string(c.student_base_width) + ") exceeds teacher_base_width (" +
                  std::to_string(c.teacher_base_width) + ")");
    else if (c.teacher_base_width % c.student_base_width != 0)
      v.push_back("teacher_base_width (" + std::to_string(c.teacher_base_width) +
                  ") must be a multiple of student_base_width (" + std::to_string(c.student_base_width) + ")");
  }
  positive("learning_rate", c.learning_rate);
  positive("teacher_learning_rate", c.teacher_learning_rate);
  positive("discriminator_learning_rate", c.discriminator_learning_rate);
  if (c.lr_decay.kind == LrDecay::Kind::exponential && !(c.lr_decay.rate > 0 && c.lr_decay.rate <= 1))
    v.push_back("lr_decay rate must lie in (0, 1] (got " + format_double(c.lr_decay.rate) + ")");
  if (!(c.momentum_beta1 >= 0 && c.momentum_beta1 < 1))
    v.push_back("momentum_beta1 must lie in [0, 1) (got " + format_double(c.momentum_beta1) + ")");
  if (!(c.momentum_beta2 >= 0 && c.momentum_beta2 < 1))
    v.push_back("momentum_beta2 must lie in [0, 1) (got " + format_double(c.momentum_beta2) + ")");
  positive("batch_size", c.batch_size);
  positive("epochs", c.epochs);
  positive("teacher_epochs", c.teacher_epochs);
  nonnegative("lambda_adv", c.lambda_adv);
  nonnegative("lambda_con", c.lambda_con);
  nonnegative("lambda_lat", c.lambda_lat);
  nonnegative("lambda_kg", c.lambda_kg);
  nonnegative("lambda_kd", c.lambda_kd);
  nonnegative("lambda_kz", c.lambda_kz);
  nonnegative("omega_l", c.omega_l);
  nonnegative("omega_r", c.omega_r);
  nonnegative("omega_vd", c.omega_vd);
  if (std::abs(c.omega_l + c.omega_r + c.omega_vd - 1.0) > 1e-9)
    v.push_back("omega_l + omega_r + omega_vd must sum to 1 (got " +
                format_double(c.omega_l + c.omega_r + c.omega_vd) + ")");
  if (c.critical_layers.empty()) v.push_back("critical_layers must not be empty");
  positive("smoothgrad_samples", c.smoothgrad_samples);
  positive("smoothgrad_sigma_fraction", c.smoothgrad_sigma_fraction);
  if (!(c.train_fraction > 0 && c.train_fraction < 1))
    v.push_back("train_fraction must lie in (0, 1) (got " + format_double(c.train_fraction) + ")");
  if (c.teacher_corpus == TeacherCorpus::generic && c.paths.teacher_corpus_root.empty())
    v.push_back("teacher_corpus_root must be set when teacher_corpus = generic");
  return v;
}

void require_valid(const ExperimentConfig& config) {
  const auto violations = validate_config(config);
  if (violations.empty()) return;
  std::string msg = "invalid configuration:";
  for (const auto& m : violations) msg += "\n  " + m;
  throw ConfigError(msg);
}

void apply_override(ExperimentConfig& config, std::string_view key, std::string_view value) {
  const Field* f = find_field(trim(key));
  if (!f) throw ConfigError("unknown configuration key '" + std::string(trim(key)) + "'");
  f->set(config, trim(value));
}

ExperimentConfig parse_config_text(std::string_view text, ExperimentConfig base, const std::string& origin) {
  std::string section;
  int line_no = 0;
  std::size_t pos = 0;
  while (pos <= text.size()) {
    const auto eol = text.find('\n', pos);
    std::string_view line = text.substr(pos, eol == std::string_view::npos ? text.npos : eol - pos);
    pos = eol == std::string_view::npos ? text.size() + 1 : eol + 1;
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string_view::npos) line = line.substr(0, hash);
    line = trim(line);
    if (line.empty()) continue;
    const std::string where = origin + ":" + std::to_string(line_no) + ": ";
    if (line.front() == '[') {
      if (line.back() != ']') throw ConfigError(where + "unterminated section header");
      section = std::string(trim(line.substr(1, line.size() - 2)));
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string_view::npos) throw ConfigError(where + "expected key = value");
    std::string key(trim(line.substr(0, eq)));
    if (key.empty()) throw ConfigError(where + "empty key");
    if (!section.empty() && key.find('.') == std::string::npos) key = section + "." + key;
    try {
      apply_override(base, key, line.substr(eq + 1));
    } catch (const ConfigError& e) {
      throw ConfigError(where + e.what());
    }
  }
  return base;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot open config file '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  ExperimentConfig config = parse_config_text(buf.str(), default_config(), path.string());
  require_valid(config);
  return config;
}

void apply_environment(ExperimentConfig& config, const char* (*lookup)(const char*)) {
  auto get = [lookup](const std::string& name) -> const char* {
    return lookup ? lookup(name.c_str()) : std::getenv(name.c_str());
  };
  auto env_name = [](const std::string& key) {
    std::string n = "DEEPDISASTER_";
    for (char ch : key) n += ch == '.' ? '_' : static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
    return n;
  };
  for (const Field& f : fields()) {
    for (const std::string& name : {env_name(leaf(f.key)), env_name(f.key)}) {
      if (const char* value = get(name)) {
        try {
          f.set(config, trim(value));
        } catch (const ConfigError& e) {
          throw ConfigError(name + ": " + e.what());
        }
      }
    }
  }
}

std::string serialize_config(const ExperimentConfig& config) {
  std::string out;
  for (const Field& f : fields()) out += f.key + " = " + f.get(config) + "\n";
  return out;
}

void save_config(const ExperimentConfig& config, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ConfigError("cannot write config file '" + path.string() + "'");
  out << serialize_config(config);
}

std::vector<std::string> config_keys() {
  std::vector<std::string> keys;
  for (const Field& f : fields()) keys.push_back(f.key);
  return keys;
}

std::string config_hash(const ExperimentConfig& config) {
  const std::string text = serialize_config(config);
  std::uint64_t h = 1469598103934665603ull;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 1099511628211ull;
  }
  char buf[17];
  std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(h));
  return buf;
}

}  // namespace deepdisaster
