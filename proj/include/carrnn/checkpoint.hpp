#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "carrnn/bptt.hpp"
#include "carrnn/dataset.hpp"
#include "carrnn/train.hpp"

namespace carrnn {

inline constexpr std::string_view kCheckpointTag = "carrnn-checkpoint";
inline constexpr int kCheckpointVersion = 1;

/// Deterministic subject split recorded with a model so evaluation can reproduce it.
struct SplitSpec {
  std::uint64_t seed = 0;
  double test_fraction = 0.2;
  double val_fraction = 0.1;
};

struct Checkpoint {
  ModelKind kind;
  FillMode fill = FillMode::None;
  bool impute = true;
  std::vector<std::string> features;
  Standardizer standardizer;
  double tau_raw = 1.0;  // bin width in dataset time units
  SplitSpec split;
  Network net;  // τ inside the CAR layers is in normalized units
};

/// Text format: tag line, one `meta` line, `tensor <name> <rows> <cols>` blocks, `end`.
std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view text);

void save_checkpoint(const Checkpoint& ckpt, const std::filesystem::path& path);
Checkpoint load_checkpoint(const std::filesystem::path& path);

/// Writes named tensors in the checkpoint block layout (used for the synthetic truth sidecar).
std::string serialize_tensors(const std::vector<ConstTensorRef>& tensors);

}  // namespace carrnn
