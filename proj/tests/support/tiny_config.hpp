#pragma once

// Small end-to-end configuration and scratch directories for pipeline tests.

#include <atomic>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <unistd.h>

#include "dreamprm/pipeline/config.hpp"

namespace dreamprm::testing {

inline pipeline::ExperimentConfig tiny_config(const std::filesystem::path& out, std::uint64_t seed = 3) {
  auto c = pipeline::ExperimentConfig::defaults();
  c.seed = seed;
  c.output_dir = out;
  c.train_domains.resize(3);
  c.train_domains[0].name = "informative";
  c.train_domains[1] = c.train_domains[0];
  c.train_domains[1].name = "noisy";
  c.train_domains[1].label_noise = 0.5;
  c.train_domains[2] = c.train_domains[0];
  c.train_domains[2].name = "trivial";
  c.train_domains[2].triviality = 0.9;
  for (auto& d : c.train_domains) d.num_questions = 15;
  c.meta_domain.num_questions = 10;
  c.test_domain.num_questions = 20;
  c.labeling.num_rollouts = 3;
  c.train.total_outer_iterations = 8;
  c.train.checkpoint_every = 4;
  c.train.batch_size = 8;
  c.train.meta_batch_size = 8;
  c.train.arch.hidden = 6;
  return c;
}

/// Fresh empty directory under the system temp dir, removed on destruction.
class ScratchDir {
 public:
  explicit ScratchDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = std::filesystem::temp_directory_path() /
            ("dreamprm_" + tag + "_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    std::filesystem::remove_all(path_);
    std::filesystem::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  ScratchDir(const ScratchDir&) = delete;
  ScratchDir& operator=(const ScratchDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& rel) const { return path_ / rel; }

 private:
  std::filesystem::path path_;
};

inline std::string slurp(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

}  // namespace dreamprm::testing
