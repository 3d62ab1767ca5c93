#pragma once

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

#include "protoassign/adam.hpp"

namespace protoassign {

/// Binary container of named tensors plus a JSON config header.
///
/// Layout (all integers little-endian):
///   magic "PACKPT\0\0" (8 bytes), u32 version (=1),
///   u64 header length, header bytes (UTF-8 JSON),
///   u32 tensor count, then per tensor:
///     u32 name length, name bytes, u8 element width (4 = f32, 8 = f64),
///     u32 rank, u64 dims[rank], raw little-endian element bytes.
struct CheckpointTensor {
  std::string name;
  std::vector<std::size_t> shape;
  std::uint8_t width = 4;
  std::vector<std::uint8_t> bytes;

  bool operator==(const CheckpointTensor&) const = default;
};

struct Checkpoint {
  std::string header_json;
  std::vector<CheckpointTensor> tensors;

  bool operator==(const Checkpoint&) const = default;
};

std::string serialize_checkpoint(const Checkpoint& ckpt);
Checkpoint parse_checkpoint(std::string_view bytes);
void save_checkpoint(const std::string& path, const Checkpoint& ckpt);
Checkpoint load_checkpoint(const std::string& path);

template <typename T>
Checkpoint make_checkpoint(const ParamSet<T>& params, std::string header_json);

/// Rebuilds a ParamSet; tensors stored at the other precision are converted.
template <typename T>
ParamSet<T> params_from_checkpoint(const Checkpoint& ckpt);

}  // namespace protoassign
