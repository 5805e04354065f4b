#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>

#include "vacuform/regressor/model.hpp"
#include "vacuform/sim_oracle.hpp"

namespace vacuform::testing {

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "t") {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("vacuform_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& s) const { return path_ / s; }

 private:
  std::filesystem::path path_;
};

/// Small untrained model over 32 px inputs; enough for plumbing tests.
inline Model small_model(std::uint64_t seed = 3) {
  nn::Architecture a;
  a.input_size = 32;
  a.stem_channels = 4;
  a.stage_channels = {4, 8};
  a.hidden_units = 8;
  Model m;
  m.net = nn::Network<float>(a, seed);
  m.input_norm.mean = 0.4;
  m.input_norm.scale = 0.25;
  m.config_hash = "test" + std::to_string(seed);
  return m;
}

inline OracleConfig small_oracle() {
  OracleConfig c;
  c.image_size = 32;
  return c;
}

}  // namespace vacuform::testing
