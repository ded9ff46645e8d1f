#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "itrl/optim.hpp"
#include "itrl/tensor.hpp"

namespace itrl {

// On-disk layout (all integers little-endian):
//   "ITRL" | u8 version | u32 len + header text (key=value lines)
//   | u32 entry count | entries...
// entry: u32 len + name | u8 rank | u32 dims[rank] | u64 payload bytes | f32 payload
// Optimizer moments are stored as "adamw.m/<param>" and "adamw.v/<param>";
// the step counter lives in the header under "adamw.step".
inline constexpr std::uint8_t kCheckpointVersion = 1;

using Header = std::map<std::string, std::string>;

// Typed header access; a missing or malformed entry raises IoError naming the key.
const std::string& header_string(const Header& h, const std::string& key);
int header_int(const Header& h, const std::string& key);
double header_double(const Header& h, const std::string& key);

struct CheckpointData {
  Header header;
  std::vector<std::pair<std::string, MatrixF>> entries;

  const MatrixF* find(const std::string& name) const;
};

void save_checkpoint(const std::filesystem::path& path, const Header& header, const ParamStore<float>& params,
                     const AdamWState<float>* optimizer = nullptr);

CheckpointData read_checkpoint(const std::filesystem::path& path);

// Copies every store parameter whose name starts with `prefix` from `data`.
// Missing entries or shape mismatches raise ShapeError naming the parameter.
void load_parameters(const CheckpointData& data, ParamStore<float>& params, const std::string& prefix = "");

// Restores moment buffers and step counter saved alongside `params`.
AdamWState<float> load_optimizer(const CheckpointData& data, const ParamStore<float>& params);

}  // namespace itrl
