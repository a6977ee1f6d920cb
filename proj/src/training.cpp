#include "deepdisaster/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <functional>
#include <iomanip>
#include <ostream>
#include <random>
#include <sstream>

#include "deepdisaster/log.hpp"

namespace deepdisaster {

std::uint64_t derive_seed(std::int64_t seed, std::uint64_t stream) {
  std::seed_seq seq{static_cast<std::uint64_t>(seed), stream, std::uint64_t{0xDD}};
  std::uint64_t out[1];
  seq.generate(reinterpret_cast<std::uint32_t*>(out), reinterpret_cast<std::uint32_t*>(out) + 2);
  return out[0];
}

namespace {

using Clock = std::chrono::steady_clock;

constexpr std::uint64_t kShuffleStream = 0x5348;

/// Frozen or live teacher outputs for one batch, detached from any graph.
struct TeacherTargets {
  Tensor x_hat;
  Tensor features;  // adapted to the student's channel count
  Tensor z;
};

/// One GAN pair with its two optimizers.
struct Learner {
  Role role;
  GanPair nets;
  Adam g_opt, d_opt;
  double g_lr = 0.0, d_lr = 0.0;
  std::int64_t g_updates = 0, d_updates = 0;

  Learner(Role r, GanPair pair, const ExperimentConfig& c)
      : role(r), nets(std::move(pair)) {
    g_lr = r == Role::teacher ? c.teacher_learning_rate : c.learning_rate;
    d_lr = c.discriminator_learning_rate;
    g_opt = Adam(nets.generator.named_params(), g_lr, c.momentum_beta1, c.momentum_beta2);
    d_opt = Adam(nets.discriminator.named_params(), d_lr, c.momentum_beta1, c.momentum_beta2);
  }
  Learner(const Learner&) = delete;

  void set_epoch(const ExperimentConfig& c, int epoch) {
    g_opt.set_learning_rate(g_lr * c.lr_decay.factor(epoch));
    d_opt.set_learning_rate(d_lr * c.lr_decay.factor(epoch));
  }
};

OptimizerState snapshot(Adam& opt) { return {opt.steps(), opt.first_moments(), opt.second_moments()}; }

std::string describe(const LossBreakdown& p) {
  std::ostringstream os;
  os << "l_adv=" << p.l_adv << " l_con=" << p.l_con << " l_lat=" << p.l_lat << " l_kg=" << p.l_kg
     << " l_kd=" << p.l_kd << " l_kz=" << p.l_kz << " l_disc=" << p.l_disc << " total=" << p.total;
  return os.str();
}

bool finite(const LossBreakdown& p) {
  for (double v : {p.l_adv, p.l_con, p.l_lat, p.l_kg, p.l_kd, p.l_kz, p.l_disc, p.total})
    if (!std::isfinite(v)) return false;
  return true;
}

/// One generator update on the full objective and one discriminator update on the minimax term,
/// both from the same forward pass. `detached` (optional) receives this pair's outputs as targets
/// for a student trained alongside it.
LossBreakdown gan_step(Learner& L, const Tensor& x, const ExperimentConfig& config, const TeacherTargets* teacher,
                       std::optional<Alphas>& alphas, TeacherTargets* detached = nullptr,
                       int student_channels = 0) {
  Generator& G = L.nets.generator;
  Discriminator& D = L.nets.discriminator;
  L.g_opt.zero_grad();
  L.d_opt.zero_grad();

  auto gen = G.forward(x, true);
  auto real = D.forward(x, true);
  auto fake = D.forward(gen.x_hat, true);

  ObjectiveInputs in{&x, &gen.x_hat, &real.features, &fake.features, &fake.prob, &gen.z};
  if (teacher) {
    in.teacher_x_hat = &teacher->x_hat;
    in.teacher_features = &teacher->features;
    in.teacher_z = &teacher->z;
    if (!alphas) alphas = calibrate_alphas(in, config);
  }
  ObjectiveGrads grads;
  LossBreakdown parts = training_objective(in, config, alphas.value_or(Alphas{}), &grads);
  const AdversarialTerms adv = loss_adv(real.prob.values(), fake.prob.values());
  parts.l_disc = adv.disc_term;
  if (!finite(parts))
    throw TrainingAborted("non-finite loss in " + std::string(to_string(L.role)) + " training: " + describe(parts));

  if (detached) {
    detached->x_hat = gen.x_hat;
    detached->features = adapt_features(fake.features, student_channels);
    detached->z = gen.z;
  }

  // generator: through D(x_hat) without touching D's gradients
  Tensor g_xhat = D.backward(fake, grads.f_fake, grads.logit_fake, GradRule::standard, false);
  g_xhat += grads.x_hat;
  G.backward(gen, g_xhat, grads.z, GradRule::standard, true);

  // discriminator: minimax term on real and generated batches
  Tensor g_real(real.prob.shape()), g_fake(fake.prob.shape());
  loss_adv_disc_grad(real.prob.values(), fake.prob.values(), g_real.values(), g_fake.values());
  D.backward(real, {}, g_real, GradRule::standard, true);
  // optionally the discriminator's own features are pulled toward the teacher's as well
  Tensor g_kd;
  if (teacher && config.distill_discriminator && config.lambda_kd != 0.0 &&
      config.uses(CriticalLayer::discriminator_features)) {
    g_kd = Tensor(fake.features.shape());
    loss_kd(fake.features, teacher->features, alphas->d, &g_kd, nullptr, config.lambda_kd);
  }
  D.backward(fake, g_kd, g_fake, GradRule::standard, true);

  L.g_opt.step();
  L.d_opt.step();
  ++L.g_updates;
  ++L.d_updates;
  return parts;
}

/// Train images kept in memory, in index order.
struct TrainSet {
  std::vector<std::string> ids;
  Tensor pixels;
};

TrainSet load_train_set(const DatasetIndex& data, const ExperimentConfig& config) {
  TrainSet set;
  for (const auto& r : data.records)
    if (r.split == Split::train) {
      if (r.label != Label::no_damage)
        throw DataError("training split contains damage sample '" + r.sample_id + "'");
      set.ids.push_back(r.sample_id);
    }
  if (set.ids.empty()) throw DataError("training data is empty");
  set.pixels = load_batch(data, set.ids, config).pixels;
  return set;
}

Tensor gather(const Tensor& all, std::span<const std::size_t> rows) {
  Shape shape = all.shape();
  shape[0] = static_cast<int>(rows.size());
  Tensor out(shape);
  const std::size_t per = all.sample_size();
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::copy_n(all.data() + rows[i] * per, per, out.data() + i * per);
  return out;
}

void add_scaled(LossBreakdown& acc, const LossBreakdown& p, double w) {
  acc.l_adv += w * p.l_adv;
  acc.l_con += w * p.l_con;
  acc.l_lat += w * p.l_lat;
  acc.l_kg += w * p.l_kg;
  acc.l_kd += w * p.l_kd;
  acc.l_kz += w * p.l_kz;
  acc.l_disc += w * p.l_disc;
  acc.total += w * p.total;
  acc.alpha_g = p.alpha_g;
  acc.alpha_d = p.alpha_d;
}

class LogWriter {
public:
  LogWriter(const std::filesystem::path& path, const std::string& header) {
    if (path.empty()) return;
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    out_.open(path, std::ios::trunc);
    if (!out_) throw std::runtime_error("cannot write training log '" + path.string() + "'");
    out_ << header;
    out_ << "iteration,epoch,l_adv,l_con,l_lat,l_kg,l_kd,l_kz,l_disc,total,alpha_g,alpha_d\n";
    out_ << std::setprecision(17);
  }
  void row(std::int64_t iteration, int epoch, const LossBreakdown& p) {
    if (!out_.is_open()) return;
    out_ << iteration << ',' << epoch << ',' << p.l_adv << ',' << p.l_con << ',' << p.l_lat << ',' << p.l_kg << ','
         << p.l_kd << ',' << p.l_kz << ',' << p.l_disc << ',' << p.total << ',' << p.alpha_g << ',' << p.alpha_d
         << '\n';
  }

private:
  std::ofstream out_;
};

std::string rng_text(const std::mt19937_64& rng) {
  std::ostringstream os;
  os << rng;
  return os.str();
}

Checkpoint make_checkpoint(Learner& L, const ExperimentConfig& config, int epoch, const std::optional<Alphas>& alphas,
                           const std::mt19937_64& rng) {
  Checkpoint c;
  c.role = L.role;
  c.config = config;
  c.nets = L.nets;
  c.generator_optimizer = snapshot(L.g_opt);
  c.discriminator_optimizer = snapshot(L.d_opt);
  c.epoch = epoch;
  c.alphas = alphas;
  c.rng_state = rng_text(rng);
  return c;
}

void progress_line(std::ostream* os, Role role, int epoch, int epochs, const LossBreakdown& m, Clock::time_point t0) {
  if (!os) return;
  const double elapsed = std::chrono::duration<double>(Clock::now() - t0).count();
  std::ostringstream line;
  line << to_string(role) << " epoch " << epoch << '/' << epochs << ' ' << describe(m) << " elapsed=" << std::fixed
       << std::setprecision(1) << elapsed << "s\n";
  *os << line.str() << std::flush;
}

/// Source of teacher targets for a batch of train rows (nullptr: no distillation).
using TargetFn = std::function<const TeacherTargets*(std::span<const std::size_t> rows, const Tensor& x)>;

struct LoopResult {
  std::vector<LossBreakdown> epochs;
  std::optional<Alphas> alphas;
  std::mt19937_64 rng;
};

/// The shared epoch/batch loop. `targets` runs ahead of each step and supplies the batch's
/// teacher targets; without it there is no distillation.
void run_loop(Learner& L, const TrainSet& set, const ExperimentConfig& config, int epochs, const TargetFn& targets,
              const TrainOptions& options, Clock::time_point t0, LoopResult& res,
              const std::function<void(int)>& on_epoch_end = {}) {
  res = LoopResult{{}, std::nullopt, std::mt19937_64(derive_seed(config.seed, kShuffleStream))};
  LogWriter log(options.log_csv, options.metadata_header);
  const std::size_t n = set.ids.size();
  std::vector<std::size_t> order(n);
  std::int64_t iteration = 0;

  for (int epoch = 0; epoch < epochs; ++epoch) {
    L.set_epoch(config, epoch);
    for (std::size_t i = 0; i < n; ++i) order[i] = i;
    std::shuffle(order.begin(), order.end(), res.rng);
    LossBreakdown mean;
    for (std::size_t b = 0; b < n; b += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t count = std::min<std::size_t>(config.batch_size, n - b);
      const std::span<const std::size_t> rows(order.data() + b, count);
      const Tensor x = gather(set.pixels, rows);
      const TeacherTargets* t = targets ? targets(rows, x) : nullptr;
      const LossBreakdown parts = gan_step(L, x, config, t, res.alphas);
      log.row(iteration++, epoch + 1, parts);
      add_scaled(mean, parts, static_cast<double>(count) / static_cast<double>(n));
    }
    res.epochs.push_back(mean);
    progress_line(options.progress, L.role, epoch + 1, epochs, mean, t0);
    if (on_epoch_end) on_epoch_end(epoch + 1);
  }
}

TrainReport make_report(const Learner& L, std::vector<LossBreakdown> epochs, Clock::time_point t0,
                        const TrainOptions& options) {
  TrainReport r;
  r.role = L.role;
  r.epochs = std::move(epochs);
  r.wall_seconds = std::chrono::duration<double>(Clock::now() - t0).count();
  r.checkpoint_path = options.checkpoint_path.string();
  r.generator_updates = L.g_updates;
  r.discriminator_updates = L.d_updates;
  return r;
}

GanPair fresh_pair(const ExperimentConfig& config, Role role) {
  GanPair p(make_arch(config, role));
  p.init(init_seed(config.seed, role));
  return p;
}

/// Runs `body`; on TrainingAborted writes the last good snapshot (if any) next to the checkpoint path.
template <class F>
auto with_last_good(const TrainOptions& options, std::optional<Checkpoint>& last_good, F&& body) {
  try {
    return body();
  } catch (const TrainingAborted& e) {
    std::string msg = e.what();
    if (last_good && !options.checkpoint_path.empty()) {
      const std::filesystem::path p = options.checkpoint_path.string() + ".last_good";
      save_checkpoint(*last_good, p);
      msg += "; last good checkpoint (epoch " + std::to_string(last_good->epoch) + ") written to " + p.string();
    }
    throw TrainingAborted(msg);
  }
}

TrainResult finish(Learner& L, const ExperimentConfig& config, LoopResult& loop, Clock::time_point t0,
                   const TrainOptions& options, const std::string& corpus) {
  TrainResult out;
  out.checkpoint = make_checkpoint(L, config, static_cast<int>(loop.epochs.size()), loop.alphas, loop.rng);
  out.checkpoint.teacher_corpus = corpus;
  out.checkpoint.metadata = options.metadata_header;
  out.report = make_report(L, std::move(loop.epochs), t0, options);
  return out;
}

std::string corpus_name(const ExperimentConfig& c) {
  return c.teacher_corpus == TeacherCorpus::generic ? "generic" : "in_domain";
}

}  // namespace

TrainResult train_adversarial(const ExperimentConfig& config, Role role, const DatasetIndex& data,
                              const TrainOptions& options) {
  require_valid(config);
  const auto t0 = Clock::now();
  const TrainSet set = load_train_set(data, config);
  Learner L(role, fresh_pair(config, role), config);
  const int epochs = role == Role::teacher ? config.teacher_epochs : config.epochs;
  std::optional<Checkpoint> last_good;
  TrainResult out = with_last_good(options, last_good, [&] {
    LoopResult loop;
    run_loop(L, set, config, epochs, {}, options, t0, loop, [&](int epoch) {
      if (!options.checkpoint_path.empty()) last_good = make_checkpoint(L, config, epoch, loop.alphas, loop.rng);
    });
    return finish(L, config, loop, t0, options, role == Role::teacher ? "in_domain" : "none");
  });
  if (!options.checkpoint_path.empty()) save_checkpoint(out.checkpoint, options.checkpoint_path);
  return out;
}

TrainResult pretrain_teacher(const ExperimentConfig& config, const DatasetIndex& data, const TrainOptions& options) {
  require_valid(config);
  if (config.teacher_corpus == TeacherCorpus::generic) {
    const DatasetIndex corpus = index_image_folder(config.paths.teacher_corpus_root);
    const TrainOptions corpus_options{options.log_csv, {}, options.metadata_header, options.progress};
    TrainResult out = train_adversarial(config, Role::teacher, corpus, corpus_options);
    out.checkpoint.teacher_corpus = corpus_name(config);
    out.report.checkpoint_path = options.checkpoint_path.string();
    if (!options.checkpoint_path.empty()) save_checkpoint(out.checkpoint, options.checkpoint_path);
    return out;
  }
  if (data.records.empty()) throw DataError("pretrain_teacher: dataset is empty");
  return train_adversarial(config, Role::teacher, data, options);
}

TrainResult train_student(const ExperimentConfig& config, const Checkpoint& teacher, const DatasetIndex& data,
                          const TrainOptions& options) {
  require_valid(config);
  if (teacher.role != Role::teacher) throw std::invalid_argument("train_student: checkpoint is not a teacher");
  const NetworkArch expected = make_arch(config, Role::teacher);
  if (!(teacher.nets.arch() == expected))
    throw std::invalid_argument("train_student: teacher architecture does not match the configuration");
  require_train_purity(data);
  const auto t0 = Clock::now();
  const TrainSet set = load_train_set(data, config);

  // The teacher is frozen: a private copy runs in evaluation mode and its outputs are cached per sample.
  GanPair frozen = teacher.nets;
  const std::uint64_t teacher_sum = frozen.checksum();
  const int student_channels = make_arch(config, Role::student).width_at(make_arch(config, Role::student).depth);
  std::vector<TeacherTargets> cache;
  cache.reserve(set.ids.size());
  const std::size_t chunk = static_cast<std::size_t>(config.batch_size);
  for (std::size_t b = 0; b < set.ids.size(); b += chunk) {
    const std::size_t count = std::min(chunk, set.ids.size() - b);
    const Tensor x = set.pixels.slice(static_cast<int>(b), static_cast<int>(count));
    auto gen = frozen.generator.forward(x, false);
    auto fake = frozen.discriminator.forward(gen.x_hat, false);
    const Tensor f = adapt_features(fake.features, student_channels);
    for (std::size_t i = 0; i < count; ++i) {
      const int k = static_cast<int>(i);
      cache.push_back({gen.x_hat.slice(k, 1), f.slice(k, 1), gen.z.slice(k, 1)});
    }
  }

  TeacherTargets batch_targets;
  TargetFn targets = [&](std::span<const std::size_t> rows, const Tensor&) -> const TeacherTargets* {
    std::vector<Tensor> xs, fs, zs;
    for (std::size_t r : rows) {
      xs.push_back(cache[r].x_hat);
      fs.push_back(cache[r].features);
      zs.push_back(cache[r].z);
    }
    batch_targets = {stack_batch(xs), stack_batch(fs), stack_batch(zs)};
    return &batch_targets;
  };

  Learner L(Role::student, fresh_pair(config, Role::student), config);
  std::optional<Checkpoint> last_good;
  TrainResult out = with_last_good(options, last_good, [&] {
    LoopResult loop;
    run_loop(L, set, config, config.epochs, targets, options, t0, loop, [&](int epoch) {
      if (!options.checkpoint_path.empty()) last_good = make_checkpoint(L, config, epoch, loop.alphas, loop.rng);
    });
    return finish(L, config, loop, t0, options, teacher.teacher_corpus);
  });
  if (frozen.checksum() != teacher_sum) throw std::logic_error("train_student: teacher parameters changed");
  out.checkpoint.teacher_checksum = teacher_sum;
  if (!options.checkpoint_path.empty()) save_checkpoint(out.checkpoint, options.checkpoint_path);
  return out;
}

JointResult train_jointly(const ExperimentConfig& config, const DatasetIndex& data, const TrainOptions& options) {
  require_valid(config);
  require_train_purity(data);
  const auto t0 = Clock::now();
  const TrainSet set = load_train_set(data, config);
  Learner T(Role::teacher, fresh_pair(config, Role::teacher), config);
  Learner S(Role::student, fresh_pair(config, Role::student), config);
  const int student_channels = make_arch(config, Role::student).width_at(make_arch(config, Role::student).depth);

  // Each batch: the teacher takes its own adversarial step, then the student distils from the
  // teacher outputs of that same step.
  std::optional<Alphas> no_alphas;
  TeacherTargets live;
  std::vector<LossBreakdown> teacher_epochs;
  LossBreakdown teacher_mean;
  const std::size_t n = set.ids.size();
  TargetFn targets = [&](std::span<const std::size_t> rows, const Tensor& x) -> const TeacherTargets* {
    const LossBreakdown p = gan_step(T, x, config, nullptr, no_alphas, &live, student_channels);
    add_scaled(teacher_mean, p, static_cast<double>(rows.size()) / static_cast<double>(n));
    return &live;
  };
  const TrainOptions loop_options{options.log_csv, {}, options.metadata_header, options.progress};
  LoopResult loop;
  run_loop(S, set, config, config.epochs, targets, loop_options, t0, loop, [&](int epoch) {
    T.set_epoch(config, epoch);
    teacher_epochs.push_back(teacher_mean);
    teacher_mean = LossBreakdown{};
  });
  JointResult out;
  std::mt19937_64 trng(derive_seed(config.seed, kShuffleStream));
  out.teacher.checkpoint = make_checkpoint(T, config, static_cast<int>(teacher_epochs.size()), std::nullopt, trng);
  out.teacher.checkpoint.teacher_corpus = "in_domain";
  out.teacher.report = make_report(T, std::move(teacher_epochs), t0, TrainOptions{});
  out.student = finish(S, config, loop, t0, options, "joint");
  out.student.checkpoint.teacher_checksum = out.teacher.checkpoint.nets.checksum();
  if (!options.checkpoint_path.empty()) save_checkpoint(out.student.checkpoint, options.checkpoint_path);
  return out;
}

}  // namespace deepdisaster
