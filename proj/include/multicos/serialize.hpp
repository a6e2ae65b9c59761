#pragma once

#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include "multicos/tensor.hpp"

namespace multicos {

/// Single tensor record, all little-endian:
///   "BSFT" | version u16 | rank u16 | extents u64[rank] | data f64[numel]
inline constexpr char kTensorMagic[4] = {'B', 'S', 'F', 'T'};
inline constexpr uint16_t kTensorVersion = 1;

void write_tensor(std::ostream& os, const Tensor& t);
Tensor read_tensor(std::istream& is);

void save_tensor(const std::filesystem::path& path, const Tensor& t);
Tensor load_tensor(const std::filesystem::path& path);

using NamedTensors = std::vector<std::pair<std::string, Tensor>>;

/// Checkpoint container: a sequence of named tensor records.
///   "BSFC" | version u16 | reserved u16 | count u64 |
///   count x ( name_len u32 | name bytes | tensor record )
inline constexpr char kCheckpointMagic[4] = {'B', 'S', 'F', 'C'};

void save_checkpoint(const std::filesystem::path& path, const NamedTensors& entries);
NamedTensors load_checkpoint(const std::filesystem::path& path);

}  // namespace multicos
