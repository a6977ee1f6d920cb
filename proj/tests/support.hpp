#pragma once

#include <atomic>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <random>
#include <string>
#include <unistd.h>

#include "deepdisaster/config.hpp"
#include "deepdisaster/data.hpp"
#include "deepdisaster/log.hpp"

namespace dd_test {

namespace fs = std::filesystem;

// Fresh directory under the system temp dir, removed on scope exit.
class TempDir {
public:
  explicit TempDir(const std::string& tag = "dd") {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            (tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

private:
  fs::path path_;
};

inline std::string read_file(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

inline void write_file(const fs::path& p, const std::string& text) {
  std::ofstream out(p, std::ios::binary | std::ios::trunc);
  out << text;
}

// Small but valid config: trains in well under a second per epoch.
inline deepdisaster::ExperimentConfig tiny_config() {
  auto c = deepdisaster::default_config();
  c.image_size = 32;
  c.channels = 1;
  c.latent_dim = 8;
  c.teacher_base_width = 8;
  c.student_base_width = 4;
  c.batch_size = 8;
  c.epochs = 1;
  c.teacher_epochs = 1;
  c.seed = 7;
  return c;
}

inline deepdisaster::SyntheticSpec tiny_spec(int normal = 20, int anomalous = 5) {
  deepdisaster::SyntheticSpec s;
  s.count_normal = normal;
  s.count_anomalous = anomalous;
  s.image_size = 32;
  s.channels = 1;
  s.defect_min = 6;
  s.defect_max = 10;
  s.seed = 3;
  return s;
}

}  // namespace dd_test
