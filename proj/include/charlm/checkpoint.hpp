#pragma once

#include <cstdint>
#include <string>
#include <string_view>

#include <json.hpp>

#include "charlm/analysis.hpp"
#include "charlm/model.hpp"
#include "charlm/training.hpp"

namespace charlm {

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Container layout: 8-byte magic, little-endian uint64 header length, UTF-8
/// JSON header, little-endian float32 tensor blobs at the offsets listed in
/// the header, then a little-endian uint64 FNV-1a checksum of everything
/// before it.
struct Container {
  nlohmann::json header;
  std::string blobs;
};

std::string encode_container(std::string_view magic, const Container& c);
/// Throws CheckpointError on a bad magic, truncation or checksum mismatch.
Container decode_container(std::string_view magic, std::string_view bytes);

std::uint64_t fnv1a64(std::string_view bytes);

struct Checkpoint {
  Model<float> model;
  TrainState train_state;
  TrainConfig train_config;
};

std::string serialize_checkpoint(const Model<float>& model, const TrainState& state = {},
                                 const TrainConfig& train_config = {});
Checkpoint deserialize_checkpoint(std::string_view bytes);

/// Writes through a temporary file and renames it into place.
void save_checkpoint(const std::string& path, const Model<float>& model, const TrainState& state = {},
                     const TrainConfig& train_config = {});
Checkpoint load_checkpoint(const std::string& path);

std::string serialize_repr_table(const ReprTable& table);
ReprTable deserialize_repr_table(std::string_view bytes);
void save_repr_table(const std::string& path, const ReprTable& table);
ReprTable load_repr_table(const std::string& path);

/// Whole-file helpers. read_file throws CheckpointError when unreadable.
std::string read_file(const std::string& path);
void write_file_atomic(const std::string& path, std::string_view bytes);

}  // namespace charlm
