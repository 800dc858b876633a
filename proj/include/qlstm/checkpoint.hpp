// checkpoint.hpp - versioned binary checkpoint container
//
// Layout (all integers little-endian):
//   magic "QLCK" | u32 version | u64 arch_hash | u32 epoch | u64 rng_state
//   | u64 opt_steps | u32 tensor_count
//   then per tensor: u32 name_len | name bytes | u32 ndim | u64 dims[]
//   then all payloads in directory order, float32 little-endian
//   trailing u32 CRC32 (IEEE) over every preceding byte
//
// Tensor names carry the namespace: model parameters as-is, learned clip
// bounds under "bounds/", optimizer slots under "opt/". Loading an FP32
// checkpoint into a quantized spec of the same architecture works because
// the arch hash ignores the quantization policy and missing "bounds/" or
// "opt/" entries simply keep their fresh initialization.
#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <string>

#include "qlstm/tensor.hpp"

namespace qlstm::train {

struct Checkpoint {
  std::uint32_t version = 1;
  std::uint64_t arch_hash = 0;
  std::uint32_t epoch = 0;
  std::uint64_t rng_state = 0;
  std::uint64_t opt_steps = 0;
  std::map<std::string, Tensor<float>> tensors;
};

// Atomic write: temp file in the same directory, then rename.
void save_checkpoint(const Checkpoint& c, const std::string& path);

// Verifies magic, version and checksum; when expect_hash is set, refuses a
// mismatched architecture unless allow_mismatch.
Checkpoint load_checkpoint(const std::string& path,
                           std::optional<std::uint64_t> expect_hash = std::nullopt,
                           bool allow_mismatch = false);

std::uint32_t crc32_ieee(const void* data, std::size_t len, std::uint32_t seed = 0);

}  // namespace qlstm::train
