#pragma once

// Named-tensor container (little-endian):
//   "TRVTNSR1", u32 version, u32 count,
//   count x { u32 name_len, name bytes, u32 dtype (1 = f32, 2 = f64), u32 rows, u32 cols, u64 offset },
//   data blob; each tensor is stored row-major starting at `offset` bytes into the blob.

#include <filesystem>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace trove {

struct NamedTensor {
    std::string name;
    Eigen::MatrixXd values;
    bool f64 = false;  // stored precision
};

void write_tensors(const std::filesystem::path& file, const std::vector<NamedTensor>& tensors);
std::vector<NamedTensor> read_tensors(const std::filesystem::path& file);

const NamedTensor& find_tensor(const std::vector<NamedTensor>& tensors, const std::string& name);

std::string file_hash(const std::filesystem::path& file);

}  // namespace trove
