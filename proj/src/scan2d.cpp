#include "multicos/scan2d.hpp"

#include "multicos/ops.hpp"

namespace multicos {

std::string_view direction_name(ScanDirection dir) {
  switch (dir) {
    case ScanDirection::kTopLeft: return "TL_BR";
    case ScanDirection::kBottomRight: return "BR_TL";
    case ScanDirection::kTopRight: return "TR_BL";
    case ScanDirection::kBottomLeft: return "BL_TR";
  }
  return "?";
}

std::vector<int64_t> scan_order(ScanDirection dir, int64_t h, int64_t w) {
  const int64_t n = h * w;
  std::vector<int64_t> order(static_cast<size_t>(n));
  for (int64_t l = 0; l < n; ++l) {
    const bool reversed = dir == ScanDirection::kBottomRight || dir == ScanDirection::kBottomLeft;
    const bool mirrored = dir == ScanDirection::kTopRight || dir == ScanDirection::kBottomLeft;
    const int64_t k = reversed ? n - 1 - l : l;
    const int64_t r = k / w, c = k % w;
    order[static_cast<size_t>(l)] = r * w + (mirrored ? w - 1 - c : c);
  }
  return order;
}

Tensor flatten_directional(const Tensor& x, ScanDirection dir) {
  if (x.rank() != 4) throw ShapeMismatch("flatten_directional expects a rank-4 map, got " + shape_str(x.shape()));
  const int64_t B = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3), L = H * W;
  const auto order = scan_order(dir, H, W);
  std::vector<int64_t> index(static_cast<size_t>(B * L * C));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t l = 0; l < L; ++l)
      for (int64_t c = 0; c < C; ++c)
        index[static_cast<size_t>((b * L + l) * C + c)] = (b * C + c) * L + order[static_cast<size_t>(l)];
  return gather(x, {B, L, C}, std::move(index));
}

Tensor unflatten_directional(const Tensor& seq, ScanDirection dir, int64_t h, int64_t w) {
  if (seq.rank() != 3) throw ShapeMismatch("unflatten_directional expects (B, L, C), got " + shape_str(seq.shape()));
  const int64_t B = seq.dim(0), L = seq.dim(1), C = seq.dim(2);
  if (h < 1 || w < 1 || L != h * w) {
    throw LengthMismatch("sequence of length " + std::to_string(L) + " cannot fill a " + std::to_string(h) + "x" +
                         std::to_string(w) + " grid");
  }
  const auto order = scan_order(dir, h, w);
  std::vector<int64_t> step_of(static_cast<size_t>(L));
  for (int64_t l = 0; l < L; ++l) step_of[static_cast<size_t>(order[static_cast<size_t>(l)])] = l;
  std::vector<int64_t> index(static_cast<size_t>(B * C * L));
  for (int64_t b = 0; b < B; ++b)
    for (int64_t c = 0; c < C; ++c)
      for (int64_t p = 0; p < L; ++p)
        index[static_cast<size_t>((b * C + c) * L + p)] = (b * L + step_of[static_cast<size_t>(p)]) * C + c;
  return gather(seq, {B, C, h, w}, std::move(index));
}

Tensor multi_direction_scan(const std::vector<Tensor>& maps, const DirectionalScan& scan) {
  if (maps.empty()) throw ShapeMismatch("multi_direction_scan needs at least one map");
  const Tensor& ref = maps.front();
  if (ref.rank() != 4) throw ShapeMismatch("multi_direction_scan expects rank-4 maps");
  for (const auto& m : maps) {
    if (m.dim(0) != ref.dim(0) || m.dim(2) != ref.dim(2) || m.dim(3) != ref.dim(3)) {
      throw ShapeMismatch("maps " + shape_str(ref.shape()) + " and " + shape_str(m.shape()) + " differ in extent");
    }
  }
  const int64_t H = ref.dim(2), W = ref.dim(3);
  std::optional<Tensor> total;
  for (ScanDirection dir : kAllDirections) {
    std::vector<Tensor> seqs;
    seqs.reserve(maps.size());
    for (const auto& m : maps) seqs.push_back(flatten_directional(m, dir));
    Tensor restored = unflatten_directional(scan(seqs, dir), dir, H, W);
    total = total ? *total + restored : restored;
  }
  return *total * 0.25;
}

}  // namespace multicos
