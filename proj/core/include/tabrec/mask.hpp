#pragma once

#include <cstddef>
#include <cstdint>
#include <limits>
#include <span>
#include <vector>

#include "tabrec/tensor.hpp"

namespace tabrec::attn {

enum class MaskKind { kGlobal, kCausalLocal, kCellwise };

/// Marks the SOS slot in a cell-wise layout.
inline constexpr int kSosCell = -1;

/// Additive attention mask with entries in {0, -inf}, stored as a visibility
/// bitmap. Every query row admits at least one key.
class AttnMask {
 public:
  AttnMask(MaskKind kind, std::size_t queries, std::size_t keys, std::vector<std::uint8_t> bitmap);

  /// Unmasked attention over a rectangular query/key grid.
  static AttnMask global(std::size_t queries, std::size_t keys);

  MaskKind kind() const { return kind_; }
  std::size_t queries() const { return queries_; }
  std::size_t keys() const { return keys_; }

  bool visible(std::size_t i, std::size_t j) const { return visible_[i * keys_ + j] != 0; }
  /// The additive value M_ij.
  double value(std::size_t i, std::size_t j) const {
    return visible(i, j) ? 0.0 : -std::numeric_limits<double>::infinity();
  }

  template <typename T>
  Mat<T> additive() const {
    Mat<T> m(queries_, keys_);
    for (std::size_t i = 0; i < queries_; ++i)
      for (std::size_t j = 0; j < keys_; ++j)
        m(i, j) = visible(i, j) ? T(0) : -std::numeric_limits<T>::infinity();
    return m;
  }

  bool operator==(const AttnMask& o) const = default;

 private:
  MaskKind kind_;
  std::size_t queries_;
  std::size_t keys_;
  std::vector<std::uint8_t> visible_;
};

/// M_ij = 0 iff 0 <= i - j <= window.
AttnMask build_local_mask(std::size_t n, std::size_t window);

/// M_ij = 0 iff key j is the SOS slot, or i and j share a cell and
/// 0 <= i - j <= window. `layout` holds a cell index per token, kSosCell for
/// SOS. Throws std::invalid_argument for an empty layout or a row with no
/// visible key.
AttnMask build_cellwise_mask(std::span<const int> layout, std::size_t window);

}  // namespace tabrec::attn
