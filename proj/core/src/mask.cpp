#include "tabrec/mask.hpp"

#include <stdexcept>
#include <string>

namespace tabrec::attn {

AttnMask::AttnMask(MaskKind kind, std::size_t queries, std::size_t keys, std::vector<std::uint8_t> bitmap)
    : kind_(kind), queries_(queries), keys_(keys), visible_(std::move(bitmap)) {
  if (visible_.size() != queries_ * keys_) throw std::invalid_argument("AttnMask: bitmap size mismatch");
  for (std::size_t i = 0; i < queries_; ++i) {
    bool any = false;
    for (std::size_t j = 0; j < keys_ && !any; ++j) any = visible(i, j);
    if (!any) throw std::invalid_argument("AttnMask: query row " + std::to_string(i) + " is fully masked");
  }
}

AttnMask AttnMask::global(std::size_t queries, std::size_t keys) {
  return AttnMask(MaskKind::kGlobal, queries, keys, std::vector<std::uint8_t>(queries * keys, 1));
}

AttnMask build_local_mask(std::size_t n, std::size_t window) {
  if (n == 0) throw std::invalid_argument("build_local_mask: empty sequence");
  std::vector<std::uint8_t> vis(n * n, 0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = (i > window ? i - window : 0); j <= i; ++j) vis[i * n + j] = 1;
  return AttnMask(MaskKind::kCausalLocal, n, n, std::move(vis));
}

AttnMask build_cellwise_mask(std::span<const int> layout, std::size_t window) {
  const std::size_t n = layout.size();
  if (n == 0) throw std::invalid_argument("build_cellwise_mask: empty layout");
  std::vector<std::uint8_t> vis(n * n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < n; ++j) {
      const bool same_cell = layout[i] != kSosCell && layout[i] == layout[j] && j <= i && i - j <= window;
      if (layout[j] == kSosCell || same_cell) vis[i * n + j] = 1;
    }
  }
  return AttnMask(MaskKind::kCellwise, n, n, std::move(vis));
}

}  // namespace tabrec::attn
