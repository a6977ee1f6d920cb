#include "deepdisaster/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <iterator>

namespace fs = std::filesystem;

namespace deepdisaster {

namespace {

constexpr char kMagic[8] = {'D', 'D', 'C', 'K', 'P', 'T', '0', '1'};

std::uint64_t fnv1a(const char* data, std::size_t n) {
  std::uint64_t h = 1469598103934665603ull;
  for (std::size_t i = 0; i < n; ++i) {
    h ^= static_cast<unsigned char>(data[i]);
    h *= 1099511628211ull;
  }
  return h;
}

class Writer {
public:
  template <class T>
  void pod(const T& v) {
    const char* p = reinterpret_cast<const char*>(&v);
    buf_.insert(buf_.end(), p, p + sizeof(T));
  }
  void str(const std::string& s) {
    pod<std::uint64_t>(s.size());
    buf_.insert(buf_.end(), s.begin(), s.end());
  }
  void tensor(const std::string& name, const Tensor& t) {
    str(name);
    pod<std::uint32_t>(static_cast<std::uint32_t>(t.rank()));
    for (int d : t.shape()) pod<std::int32_t>(d);
    const char* p = reinterpret_cast<const char*>(t.data());
    buf_.insert(buf_.end(), p, p + t.size() * sizeof(double));
  }
  const std::vector<char>& bytes() const { return buf_; }

private:
  std::vector<char> buf_;
};

class Reader {
public:
  Reader(const std::vector<char>& buf, std::size_t end, std::string origin)
      : buf_(buf), end_(end), origin_(std::move(origin)) {}

  template <class T>
  T pod() {
    need(sizeof(T));
    T v;
    std::memcpy(&v, buf_.data() + pos_, sizeof(T));
    pos_ += sizeof(T);
    return v;
  }
  std::string str() {
    const auto n = pod<std::uint64_t>();
    need(n);
    std::string s(buf_.data() + pos_, n);
    pos_ += n;
    return s;
  }
  std::pair<std::string, Tensor> tensor() {
    std::string name = str();
    const auto rank = pod<std::uint32_t>();
    if (rank > 8) fail("implausible tensor rank");
    Shape shape(rank);
    for (auto& d : shape) d = pod<std::int32_t>();
    Tensor t(shape);
    need(t.size() * sizeof(double));
    std::memcpy(t.data(), buf_.data() + pos_, t.size() * sizeof(double));
    pos_ += t.size() * sizeof(double);
    return {std::move(name), std::move(t)};
  }
  [[noreturn]] void fail(const std::string& what) const {
    throw CheckpointError("corrupt checkpoint '" + origin_ + "': " + what);
  }

private:
  void need(std::size_t n) const {
    if (n > end_ || pos_ > end_ - n) fail("unexpected end of data");
  }
  const std::vector<char>& buf_;
  std::size_t end_;
  std::size_t pos_ = 0;
  std::string origin_;
};

void write_optimizer(Writer& w, const OptimizerState& s) {
  w.pod<std::int64_t>(s.steps);
  w.pod<std::uint64_t>(s.first_moments.size());
  for (const auto& t : s.first_moments) w.tensor("m", t);
  w.pod<std::uint64_t>(s.second_moments.size());
  for (const auto& t : s.second_moments) w.tensor("v", t);
}

OptimizerState read_optimizer(Reader& r) {
  OptimizerState s;
  s.steps = r.pod<std::int64_t>();
  const auto nm = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nm; ++i) s.first_moments.push_back(r.tensor().second);
  const auto nv = r.pod<std::uint64_t>();
  for (std::uint64_t i = 0; i < nv; ++i) s.second_moments.push_back(r.tensor().second);
  return s;
}

}  // namespace

void save_checkpoint(const Checkpoint& ckpt, const fs::path& path) {
  auto& nets = const_cast<GanPair&>(ckpt.nets);
  const NetworkArch& arch = nets.arch();
  Writer w;
  for (char c : kMagic) w.pod(c);
  w.pod<std::uint32_t>(kCheckpointVersion);
  w.str(ckpt.metadata);
  w.pod<std::uint8_t>(ckpt.role == Role::teacher ? 1 : 0);
  w.pod<std::int32_t>(arch.base_width);
  w.pod<std::int32_t>(arch.image_size);
  w.pod<std::int32_t>(arch.channels);
  w.pod<std::int32_t>(arch.latent_dim);
  w.pod<std::int32_t>(arch.depth);
  w.pod<std::uint8_t>(arch.skip_connections ? 1 : 0);
  w.str(serialize_config(ckpt.config));
  w.pod<std::int32_t>(ckpt.epoch);
  w.pod<std::uint8_t>(ckpt.alphas ? 1 : 0);
  const Alphas a = ckpt.alphas.value_or(Alphas{});
  w.pod(a.g);
  w.pod(a.d);
  w.pod(a.z);
  w.str(ckpt.rng_state);
  w.str(ckpt.teacher_corpus);
  w.pod<std::uint64_t>(ckpt.teacher_checksum);

  const auto params = nets.named_params();
  w.pod<std::uint64_t>(params.size());
  for (const auto& p : params) w.tensor(p.name, p.param->value);
  const auto buffers = nets.named_buffers();
  w.pod<std::uint64_t>(buffers.size());
  for (const auto& b : buffers) w.tensor(b.name, *b.buffer);
  write_optimizer(w, ckpt.generator_optimizer);
  write_optimizer(w, ckpt.discriminator_optimizer);
  w.pod<std::uint64_t>(fnv1a(w.bytes().data(), w.bytes().size()));

  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  const fs::path tmp = path.string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw CheckpointError("cannot write checkpoint '" + tmp.string() + "'");
    out.write(w.bytes().data(), static_cast<std::streamsize>(w.bytes().size()));
    if (!out) throw CheckpointError("write failure on '" + tmp.string() + "'");
  }
  fs::rename(tmp, path);
}

Checkpoint load_checkpoint(const fs::path& path, std::optional<Role> expected_role) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw CheckpointError("checkpoint file '" + path.string() + "' not found or unreadable");
  const std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  if (buf.size() < sizeof(kMagic) + sizeof(std::uint32_t) + sizeof(std::uint64_t) ||
      std::memcmp(buf.data(), kMagic, sizeof(kMagic)) != 0)
    throw CheckpointError("'" + path.string() + "' is not a checkpoint file");
  std::uint32_t version;
  std::memcpy(&version, buf.data() + sizeof(kMagic), sizeof(version));
  if (version != kCheckpointVersion)
    throw CheckpointError("checkpoint '" + path.string() + "' has version " + std::to_string(version) +
                          ", expected " + std::to_string(kCheckpointVersion));
  const std::size_t body = buf.size() - sizeof(std::uint64_t);
  std::uint64_t stored;
  std::memcpy(&stored, buf.data() + body, sizeof(stored));
  if (stored != fnv1a(buf.data(), body)) throw CheckpointError("corrupt checkpoint '" + path.string() + "': checksum mismatch");

  Reader r(buf, body, path.string());
  for (std::size_t i = 0; i < sizeof(kMagic); ++i) r.pod<char>();
  r.pod<std::uint32_t>();

  Checkpoint ckpt;
  ckpt.metadata = r.str();
  ckpt.role = r.pod<std::uint8_t>() ? Role::teacher : Role::student;
  if (expected_role && *expected_role != ckpt.role)
    throw CheckpointError("checkpoint '" + path.string() + "' holds a " + std::string(to_string(ckpt.role)) +
                          ", expected a " + std::string(to_string(*expected_role)));
  NetworkArch arch;
  arch.role = ckpt.role;
  arch.base_width = r.pod<std::int32_t>();
  arch.image_size = r.pod<std::int32_t>();
  arch.channels = r.pod<std::int32_t>();
  arch.latent_dim = r.pod<std::int32_t>();
  arch.depth = r.pod<std::int32_t>();
  arch.skip_connections = r.pod<std::uint8_t>() != 0;
  try {
    ckpt.config = parse_config_text(r.str(), default_config(), path.string() + " (config snapshot)");
    validate_arch(arch);
  } catch (const std::exception& e) {
    r.fail(e.what());
  }
  ckpt.epoch = r.pod<std::int32_t>();
  const bool has_alphas = r.pod<std::uint8_t>() != 0;
  Alphas a;
  a.g = r.pod<double>();
  a.d = r.pod<double>();
  a.z = r.pod<double>();
  if (has_alphas) ckpt.alphas = a;
  ckpt.rng_state = r.str();
  ckpt.teacher_corpus = r.str();
  ckpt.teacher_checksum = r.pod<std::uint64_t>();

  ckpt.nets = GanPair(arch);
  auto params = ckpt.nets.named_params();
  if (r.pod<std::uint64_t>() != params.size()) r.fail("parameter count mismatch");
  for (auto& p : params) {
    auto [name, t] = r.tensor();
    if (name != p.name || t.shape() != p.param->value.shape()) r.fail("unexpected parameter '" + name + "'");
    p.param->value = std::move(t);
  }
  auto buffers = ckpt.nets.named_buffers();
  if (r.pod<std::uint64_t>() != buffers.size()) r.fail("buffer count mismatch");
  for (auto& b : buffers) {
    auto [name, t] = r.tensor();
    if (name != b.name || t.shape() != b.buffer->shape()) r.fail("unexpected buffer '" + name + "'");
    *b.buffer = std::move(t);
  }
  ckpt.generator_optimizer = read_optimizer(r);
  ckpt.discriminator_optimizer = read_optimizer(r);
  return ckpt;
}

}  // namespace deepdisaster
