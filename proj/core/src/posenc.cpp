#include <cmath>
#include <stdexcept>

#include "tabrec/attncore.hpp"

namespace tabrec::attn {

std::vector<double> pos_encode_1d(std::size_t n, std::size_t d) {
  if (d == 0 || d % 2 != 0) throw std::invalid_argument("pos_encode_1d: channel count must be even");
  std::vector<double> p(d);
  const double pos = static_cast<double>(n);
  for (std::size_t i = 0; i < d / 2; ++i) {
    const double freq = std::pow(10000.0, -2.0 * static_cast<double>(i) / static_cast<double>(d));
    p[2 * i] = std::sin(pos * freq);
    p[2 * i + 1] = std::cos(pos * freq);
  }
  return p;
}

std::vector<double> pos_encode_2d(std::size_t i, std::size_t j, std::size_t d) {
  if (d == 0 || d % 4 != 0) throw std::invalid_argument("pos_encode_2d: channel count must be divisible by 4");
  auto row = pos_encode_1d(i, d / 2);
  const auto col = pos_encode_1d(j, d / 2);
  row.insert(row.end(), col.begin(), col.end());
  return row;
}

}  // namespace tabrec::attn
