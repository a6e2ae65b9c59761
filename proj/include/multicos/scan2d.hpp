#pragma once

#include <array>
#include <functional>
#include <string_view>
#include <vector>

#include "multicos/tensor.hpp"

namespace multicos {

/// Traversal orders of an H x W grid.
///   kTopLeft:     row-major
///   kBottomRight: row-major reversed
///   kTopRight:    row-major over the horizontally mirrored grid
///   kBottomLeft:  kTopRight reversed
/// The set is closed under 180-degree rotation (it swaps kTopLeft with
/// kBottomRight and kTopRight with kBottomLeft).
enum class ScanDirection { kTopLeft, kBottomRight, kTopRight, kBottomLeft };

inline constexpr std::array<ScanDirection, 4> kAllDirections = {ScanDirection::kTopLeft, ScanDirection::kBottomRight,
                                                                ScanDirection::kTopRight, ScanDirection::kBottomLeft};

std::string_view direction_name(ScanDirection dir);

/// Grid position (row-major index) visited at step l of the traversal.
std::vector<int64_t> scan_order(ScanDirection dir, int64_t h, int64_t w);

/// (B, C, H, W) -> (B, H*W, C) in traversal order.
Tensor flatten_directional(const Tensor& x, ScanDirection dir);

/// Exact inverse of flatten_directional.
Tensor unflatten_directional(const Tensor& seq, ScanDirection dir, int64_t h, int64_t w);

/// Sequence operator applied along one direction: receives one (B, L, C)
/// sequence per input map and returns a (B, L, C') sequence.
using DirectionalScan = std::function<Tensor(const std::vector<Tensor>& seqs, ScanDirection dir)>;

/// Flattens every map along each of the four directions, runs `scan`, restores
/// the grid layout and averages the four results.
Tensor multi_direction_scan(const std::vector<Tensor>& maps, const DirectionalScan& scan);

inline Tensor multi_direction_ssm(const Tensor& x, const std::function<Tensor(const Tensor&, ScanDirection)>& scan) {
  return multi_direction_scan({x}, [&](const std::vector<Tensor>& s, ScanDirection d) { return scan(s[0], d); });
}

}  // namespace multicos
