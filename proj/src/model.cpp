#include "deepdisaster/model.hpp"

#include <bit>
#include <stdexcept>

namespace deepdisaster {

std::string_view to_string(Role role) { return role == Role::teacher ? "teacher" : "student"; }

int NetworkArch::width_at(int level) const {
  const int mult = level >= 4 ? 8 : (1 << (level - 1));
  return base_width * mult;
}

int default_depth(int image_size) { return std::bit_width(static_cast<unsigned>(image_size)) - 1 - 2; }

NetworkArch make_arch(const ExperimentConfig& config, Role role) {
  NetworkArch arch;
  arch.role = role;
  arch.base_width = role == Role::teacher ? config.teacher_base_width : config.effective_student_width();
  arch.image_size = config.image_size;
  arch.channels = config.channels;
  arch.latent_dim = config.latent_dim;
  arch.depth = default_depth(config.image_size);
  arch.skip_connections = config.skip_connections;
  return arch;
}

void validate_arch(const NetworkArch& arch) {
  auto fail = [](const std::string& m) { throw std::invalid_argument("invalid network architecture: " + m); };
  if (arch.image_size <= 0 || !std::has_single_bit(static_cast<unsigned>(arch.image_size)))
    fail("image_size must be a power of two");
  if (arch.channels <= 0) fail("channels must be positive");
  if (arch.base_width <= 0) fail("base_width must be positive");
  if (arch.latent_dim <= 0) fail("latent_dim must be positive");
  if (arch.depth < 1) fail("depth must be >= 1");
  if (arch.bottom_extent() < 2) fail("depth " + std::to_string(arch.depth) + " too large for image size " +
                                     std::to_string(arch.image_size));
}

// ---------------------------------------------------------------------------

template <class Op>
Tensor Block<Op>::forward(const Tensor& x, bool training, Trace& trace) {
  trace.input = x;
  Tensor y = op.forward(x);
  if (use_bn) {
    trace.pre_norm = std::move(y);
    y = bn.forward(trace.pre_norm, training, trace.bn_cache);
  }
  trace.output = activate(y, act);
  return trace.output;
}

template <class Op>
Tensor Block<Op>::backward(const Trace& trace, const Tensor& grad_out, GradRule rule, bool accumulate) {
  Tensor g = activate_backward(trace.output, grad_out, act, rule);
  if (use_bn) g = bn.backward(trace.pre_norm, g, trace.bn_cache, accumulate);
  return op.backward(trace.input, g, accumulate);
}

template <class Op>
void Block<Op>::append_params(const std::string& prefix, std::vector<NamedParam>& out) {
  op.append_params(prefix + ".conv", out);
  if (use_bn) bn.append_params(prefix + ".bn", out);
}

template <class Op>
void Block<Op>::append_buffers(const std::string& prefix, std::vector<NamedBuffer>& out) {
  if (use_bn) bn.append_buffers(prefix + ".bn", out);
}

template <class Op>
void Block<Op>::init(std::mt19937_64& rng) {
  op.init_normal(rng, 0.02);
  if (use_bn) bn.init_normal(rng, 0.02);
}

template struct Block<Conv2d>;
template struct Block<ConvTranspose2d>;

namespace {

template <class Op>
Block<Op> make_block(Op op, bool bn, int bn_channels, Activation act) {
  Block<Op> b;
  b.op = std::move(op);
  b.use_bn = bn;
  if (bn) b.bn = BatchNorm2d(bn_channels);
  b.act = act;
  return b;
}

void require_image(const Tensor& x, const NetworkArch& arch, const char* who) {
  if (x.rank() != 4 || x.dim(1) != arch.channels || x.dim(2) != arch.image_size || x.dim(3) != arch.image_size)
    throw std::invalid_argument(std::string(who) + ": expected input (N, " + std::to_string(arch.channels) + ", " +
                                std::to_string(arch.image_size) + ", " + std::to_string(arch.image_size) + "), got " +
                                shape_string(x.shape()));
}

template <class Net>
std::size_t count_params(Net& net) {
  std::size_t n = 0;
  for (const auto& p : net.named_params()) n += p.param->value.size();
  return n;
}

}  // namespace

// ---------------------------------------------------------------------------

Generator::Generator(const NetworkArch& arch) : arch_(arch) {
  validate_arch(arch);
  const int depth = arch.depth, b = arch.bottom_extent();
  for (int k = 1; k <= depth; ++k) {
    const int in = k == 1 ? arch.channels : arch.width_at(k - 1);
    const bool bn = k > 1;
    encoder_.push_back(make_block(Conv2d(in, arch.width_at(k), 4, 2, 1, !bn), bn, arch.width_at(k),
                                  Activation::leaky_relu));
  }
  bottleneck_ = make_block(Conv2d(arch.width_at(depth), arch.latent_dim, b, 1, 0, true), false, 0, Activation::none);
  decoder_.push_back(make_block(ConvTranspose2d(arch.latent_dim, arch.width_at(depth), b, 1, 0, false), true,
                                arch.width_at(depth), Activation::relu));
  for (int k = depth; k >= 1; --k) {
    const int in = arch.skip_connections ? 2 * arch.width_at(k) : arch.width_at(k);
    const bool last = k == 1;
    const int out = last ? arch.channels : arch.width_at(k - 1);
    decoder_.push_back(make_block(ConvTranspose2d(in, out, 4, 2, 1, last), !last, out,
                                  last ? Activation::tanh : Activation::relu));
  }
}

Generator::Trace Generator::forward(const Tensor& x, bool training) {
  require_image(x, arch_, "Generator");
  const int depth = arch_.depth;
  Trace t;
  t.encoder.resize(depth);
  t.decoder.resize(depth + 1);
  Tensor a = x;
  for (int k = 0; k < depth; ++k) a = encoder_[k].forward(a, training, t.encoder[k]);
  t.z = bottleneck_.forward(a, training, t.bottleneck);
  Tensor u = decoder_[0].forward(t.z, training, t.decoder[0]);
  for (int j = 1; j <= depth; ++j) {
    const int level = depth - j + 1;
    const Tensor in = arch_.skip_connections ? concat_channels(u, t.encoder[level - 1].output) : u;
    u = decoder_[j].forward(in, training, t.decoder[j]);
  }
  t.x_hat = std::move(u);
  return t;
}

Tensor Generator::backward(const Trace& t, const Tensor& grad_x_hat, const Tensor& grad_z, GradRule rule,
                           bool accumulate) {
  const int depth = arch_.depth;
  std::vector<Tensor> grad_enc(depth);
  for (int k = 0; k < depth; ++k) grad_enc[k] = Tensor(t.encoder[k].output.shape());

  Tensor g = grad_x_hat;
  for (int j = depth; j >= 1; --j) {
    const int level = depth - j + 1;
    Tensor g_in = decoder_[j].backward(t.decoder[j], g, rule, accumulate);
    if (arch_.skip_connections) {
      Tensor g_u, g_skip;
      split_channels(g_in, g_in.dim(1) - t.encoder[level - 1].output.dim(1), g_u, g_skip);
      grad_enc[level - 1] += g_skip;
      g = std::move(g_u);
    } else {
      g = std::move(g_in);
    }
  }
  Tensor gz = decoder_[0].backward(t.decoder[0], g, rule, accumulate);
  if (!grad_z.empty()) gz += grad_z;
  grad_enc[depth - 1] += bottleneck_.backward(t.bottleneck, gz, rule, accumulate);
  for (int k = depth - 1; k >= 1; --k) grad_enc[k - 1] += encoder_[k].backward(t.encoder[k], grad_enc[k], rule, accumulate);
  return encoder_[0].backward(t.encoder[0], grad_enc[0], rule, accumulate);
}

std::vector<NamedParam> Generator::named_params() {
  std::vector<NamedParam> out;
  for (std::size_t k = 0; k < encoder_.size(); ++k) encoder_[k].append_params("enc" + std::to_string(k + 1), out);
  bottleneck_.append_params("bottleneck", out);
  for (std::size_t j = 0; j < decoder_.size(); ++j) decoder_[j].append_params("dec" + std::to_string(j), out);
  return out;
}

std::vector<NamedBuffer> Generator::named_buffers() {
  std::vector<NamedBuffer> out;
  for (std::size_t k = 0; k < encoder_.size(); ++k) encoder_[k].append_buffers("enc" + std::to_string(k + 1), out);
  for (std::size_t j = 0; j < decoder_.size(); ++j) decoder_[j].append_buffers("dec" + std::to_string(j), out);
  return out;
}

std::size_t Generator::parameter_count() { return count_params(*this); }

void Generator::init(std::mt19937_64& rng) {
  for (auto& b : encoder_) b.init(rng);
  bottleneck_.init(rng);
  for (auto& b : decoder_) b.init(rng);
}

void Generator::zero_output_layer() {
  decoder_.back().op.weight.value.fill(0.0);
  decoder_.back().op.bias.value.fill(0.0);
}

// ---------------------------------------------------------------------------

Discriminator::Discriminator(const NetworkArch& arch) : arch_(arch) {
  validate_arch(arch);
  for (int k = 1; k <= arch.depth; ++k) {
    const int in = k == 1 ? arch.channels : arch.width_at(k - 1);
    const bool bn = k > 1;
    blocks_.push_back(make_block(Conv2d(in, arch.width_at(k), 4, 2, 1, !bn), bn, arch.width_at(k),
                                 Activation::leaky_relu));
  }
  head_ = make_block(Conv2d(arch.width_at(arch.depth), 1, arch.bottom_extent(), 1, 0, true), false, 0,
                     Activation::none);
}

Discriminator::Trace Discriminator::forward(const Tensor& x, bool training) {
  require_image(x, arch_, "Discriminator");
  Trace t;
  t.blocks.resize(blocks_.size());
  Tensor a = x;
  for (std::size_t k = 0; k < blocks_.size(); ++k) a = blocks_[k].forward(a, training, t.blocks[k]);
  t.features = a;
  t.logit = head_.forward(a, training, t.head);
  t.prob = activate(t.logit, Activation::sigmoid);
  return t;
}

Tensor Discriminator::backward(const Trace& t, const Tensor& grad_features, const Tensor& grad_logit, GradRule rule,
                               bool accumulate) {
  Tensor g = grad_logit.empty() ? Tensor(t.features.shape()) : head_.backward(t.head, grad_logit, rule, accumulate);
  if (!grad_features.empty()) g += grad_features;
  for (std::size_t k = blocks_.size(); k-- > 0;) g = blocks_[k].backward(t.blocks[k], g, rule, accumulate);
  return g;
}

std::vector<NamedParam> Discriminator::named_params() {
  std::vector<NamedParam> out;
  for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k].append_params("block" + std::to_string(k + 1), out);
  head_.append_params("head", out);
  return out;
}

std::vector<NamedBuffer> Discriminator::named_buffers() {
  std::vector<NamedBuffer> out;
  for (std::size_t k = 0; k < blocks_.size(); ++k) blocks_[k].append_buffers("block" + std::to_string(k + 1), out);
  return out;
}

std::size_t Discriminator::parameter_count() { return count_params(*this); }

void Discriminator::init(std::mt19937_64& rng) {
  for (auto& b : blocks_) b.init(rng);
  head_.init(rng);
}

// ---------------------------------------------------------------------------

void GanPair::init(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  generator.init(rng);
  discriminator.init(rng);
}

std::vector<NamedParam> GanPair::named_params() {
  std::vector<NamedParam> out;
  for (auto& p : generator.named_params()) out.push_back({"generator." + p.name, p.param});
  for (auto& p : discriminator.named_params()) out.push_back({"discriminator." + p.name, p.param});
  return out;
}

std::vector<NamedBuffer> GanPair::named_buffers() {
  std::vector<NamedBuffer> out;
  for (auto& b : generator.named_buffers()) out.push_back({"generator." + b.name, b.buffer});
  for (auto& b : discriminator.named_buffers()) out.push_back({"discriminator." + b.name, b.buffer});
  return out;
}

std::uint64_t GanPair::checksum() {
  std::uint64_t h = 0;
  for (auto& p : named_params()) h = h * 31 + deepdisaster::checksum(p.param->value.values());
  for (auto& b : named_buffers()) h = h * 31 + deepdisaster::checksum(b.buffer->values());
  return h;
}

NetworkOutputs forward_network(GanPair& nets, const Tensor& batch, bool training) {
  auto gen = nets.generator.forward(batch, training);
  auto real = nets.discriminator.forward(batch, training);
  auto fake = nets.discriminator.forward(gen.x_hat, training);
  NetworkOutputs out;
  out.x_hat = std::move(gen.x_hat);
  out.z = Tensor({gen.z.dim(0), gen.z.dim(1)}, std::vector<double>(gen.z.values().begin(), gen.z.values().end()));
  out.f_x = std::move(real.features);
  out.f_xhat = std::move(fake.features);
  out.logits_real.assign(real.prob.values().begin(), real.prob.values().end());
  out.logits_fake.assign(fake.prob.values().begin(), fake.prob.values().end());
  return out;
}

StudentTeacher build_student_teacher(const ExperimentConfig& config) {
  require_valid(config);
  StudentTeacher st{GanPair(make_arch(config, Role::student)), GanPair(make_arch(config, Role::teacher))};
  st.student.init(init_seed(config.seed, Role::student));
  st.teacher.init(init_seed(config.seed, Role::teacher));
  return st;
}

std::uint64_t init_seed(std::int64_t seed, Role role) {
  return static_cast<std::uint64_t>(seed) * 0x9E3779B97F4A7C15ull + (role == Role::student ? 0x51 : 0x7E);
}

// ---------------------------------------------------------------------------

Tensor adapt_features(const Tensor& teacher_features, int student_channels) {
  const int n = teacher_features.dim(0), ct = teacher_features.dim(1);
  if (student_channels <= 0 || ct % student_channels != 0)
    throw std::invalid_argument("adapt_features: teacher channels " + std::to_string(ct) +
                                " not a multiple of student channels " + std::to_string(student_channels));
  const int ratio = ct / student_channels;
  if (ratio == 1) return teacher_features;
  const int h = teacher_features.dim(2), w = teacher_features.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, student_channels, h, w});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < student_channels; ++c) {
      double* dst = out.data() + (static_cast<std::size_t>(i) * student_channels + c) * plane;
      for (int r = 0; r < ratio; ++r) {
        const double* src = teacher_features.data() + (static_cast<std::size_t>(i) * ct + c * ratio + r) * plane;
        for (std::size_t j = 0; j < plane; ++j) dst[j] += src[j];
      }
      for (std::size_t j = 0; j < plane; ++j) dst[j] /= ratio;
    }
  return out;
}

Tensor adapt_features_backward(const Tensor& grad_adapted, int teacher_channels) {
  const int n = grad_adapted.dim(0), cs = grad_adapted.dim(1);
  const int ratio = teacher_channels / cs;
  if (ratio == 1) return grad_adapted;
  const int h = grad_adapted.dim(2), w = grad_adapted.dim(3);
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  Tensor out({n, teacher_channels, h, w});
  for (int i = 0; i < n; ++i)
    for (int c = 0; c < teacher_channels; ++c) {
      const double* src = grad_adapted.data() + (static_cast<std::size_t>(i) * cs + c / ratio) * plane;
      double* dst = out.data() + (static_cast<std::size_t>(i) * teacher_channels + c) * plane;
      for (std::size_t j = 0; j < plane; ++j) dst[j] = src[j] / ratio;
    }
  return out;
}

}  // namespace deepdisaster
