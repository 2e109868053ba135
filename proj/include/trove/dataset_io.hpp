#pragma once

// On-disk dataset directory:
//   metadata.json           config, realized Cramer's V, split counts
//   <split>.csv             sequence_id,label,flags   (flags as a 0/1 bitstring)
//   <split>.bin             optional f32 pixel tensor
//
// Tensor header (little-endian): "TRVDSET1", u32 version, u32 count,
// u32 seq_len, u32 height, u32 width, u32 channels, then count*seq_len*H*W*C
// f32 values in sequence, frame, row, col, channel order.

#include <filesystem>
#include <string>

#include <json.hpp>

#include "trove/syndata.hpp"

namespace trove {

nlohmann::json to_json(const DatasetConfig& cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json& j);
std::string config_hash(const DatasetConfig& cfg);

void save_dataset(const Dataset& ds, const std::filesystem::path& dir, bool write_tensors = true);

/// Loads labels and flags; pixels stream from tensor files when present,
/// otherwise the splits are regenerated from the stored config and checked
/// against the stored labels and flags.
Dataset load_dataset(const std::filesystem::path& dir);

void write_split_tensor(const Dataset& ds, const Split& split, const std::filesystem::path& file);

std::string flag_bitstring(const SequenceSample& s);

}  // namespace trove
