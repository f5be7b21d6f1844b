#pragma once

// Binary model checkpoints.
//
// Layout (little-endian):
//   "SGUD" | u32 version | u32 len + kind | u32 len + hyperparameter JSON |
//   u64 FNV-1a digest of that JSON | u32 tensor count |
//   per tensor: u32 len + name | u32 rank | u64 dims... | f32 data (row-major)

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "segdiff/io.hpp"
#include "segdiff/nn.hpp"

namespace segdiff::checkpoint {

inline constexpr std::uint32_t kVersion = 1;

std::uint64_t fnv1a(const std::string& bytes);
/// Digest of the canonical (compact, key-sorted) dump of a JSON value.
std::uint64_t digest(const io::Json& hyper);

struct Checkpoint {
  std::string kind;
  io::Json hyper;
  std::uint64_t digest = 0;
  std::vector<std::pair<std::string, Tensor>> tensors;
};

std::string serialize(const std::string& kind, const io::Json& hyper, const nn::ParamStore& params);
Checkpoint deserialize(const std::string& bytes);

void save(const std::filesystem::path& path, const std::string& kind, const io::Json& hyper,
          const nn::ParamStore& params);
/// Reads and checks magic, version and that the stored digest matches the
/// stored hyperparameters.
Checkpoint load(const std::filesystem::path& path);

/// Copy tensors into params. Refuses a different kind or a digest that does
/// not match expected_hyper.
void restore(const Checkpoint& ckpt, const std::string& kind, const io::Json& expected_hyper,
             nn::ParamStore& params);

}  // namespace segdiff::checkpoint
