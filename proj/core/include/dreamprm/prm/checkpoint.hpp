#pragma once

#include <cstdint>
#include <filesystem>
#include <string>

#include "dreamprm/autodiff/param_vector.hpp"
#include "dreamprm/prm/model.hpp"

namespace dreamprm::prm {

inline constexpr int kCheckpointSchemaVersion = 1;

struct Checkpoint {
  Architecture arch;
  std::int64_t step = 0;  // completed outer iterations
  std::string variant;
  ad::ParamVector phi;
  ad::ParamVector alpha;  // K domain weights; may be empty
};

/// Binary layout:
///   8 bytes   magic "DPRMCKPT"
///   8 bytes   header length L, little-endian uint64
///   L bytes   UTF-8 JSON header: schema_version, architecture
///             {feature_dim, hidden, input_dim}, num_params, K, step, variant
///   8*N bytes phi, little-endian IEEE-754 doubles
///   8*K bytes alpha, little-endian IEEE-754 doubles
void write_checkpoint(const std::filesystem::path& path, const Checkpoint& ckpt);
Checkpoint read_checkpoint(const std::filesystem::path& path);

}  // namespace dreamprm::prm
