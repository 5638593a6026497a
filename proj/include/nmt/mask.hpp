#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "nmt/tensor.hpp"

namespace nmt {

/// Rank-4 boolean mask, true == attendable. Any axis of size 1 broadcasts
/// against the [batch, heads, query, key] score tensor.
struct AttentionMask {
  Shape shape;
  std::vector<std::uint8_t> allowed;

  AttentionMask() = default;
  AttentionMask(Shape s, std::vector<std::uint8_t> values) : shape(std::move(s)), allowed(std::move(values)) {
    if (shape.size() != 4 || shape_numel(shape) != static_cast<Index>(allowed.size())) {
      throw DimensionError("attention mask must be rank 4 with matching data, got " + shape_str(shape));
    }
  }

  bool at(Index b, Index h, Index q, Index k) const {
    const Index bb = shape[0] == 1 ? 0 : b;
    const Index hh = shape[1] == 1 ? 0 : h;
    const Index qq = shape[2] == 1 ? 0 : q;
    const Index kk = shape[3] == 1 ? 0 : k;
    return allowed[static_cast<std::size_t>(((bb * shape[1] + hh) * shape[2] + qq) * shape[3] + kk)] != 0;
  }

  /// True when this mask can be broadcast onto a score tensor of `scores` shape.
  bool broadcasts_to(const Shape& scores) const {
    if (scores.size() != 4) return false;
    for (std::size_t i = 0; i < 4; ++i) {
      if (shape[i] != 1 && shape[i] != scores[i]) return false;
    }
    return true;
  }
};

/// Elementwise AND with broadcasting of size-1 axes.
inline AttentionMask combine_masks(const AttentionMask& a, const AttentionMask& b) {
  Shape out(4);
  for (std::size_t i = 0; i < 4; ++i) {
    if (a.shape[i] != b.shape[i] && a.shape[i] != 1 && b.shape[i] != 1) {
      throw DimensionError("cannot combine masks " + shape_str(a.shape) + " and " + shape_str(b.shape));
    }
    out[i] = std::max(a.shape[i], b.shape[i]);
  }
  std::vector<std::uint8_t> values(static_cast<std::size_t>(shape_numel(out)));
  std::size_t idx = 0;
  for (Index i0 = 0; i0 < out[0]; ++i0)
    for (Index i1 = 0; i1 < out[1]; ++i1)
      for (Index i2 = 0; i2 < out[2]; ++i2)
        for (Index i3 = 0; i3 < out[3]; ++i3) values[idx++] = a.at(i0, i1, i2, i3) && b.at(i0, i1, i2, i3);
  return AttentionMask(std::move(out), std::move(values));
}

}  // namespace nmt
