#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <vector>

#include "tabrec/netgraph.hpp"
#include "tabrec/synthgen.hpp"

namespace tabrec::fixtures {

/// Small model used by the forward/backward tests.
inline net::ModelConfig tiny_config(net::Variant variant = net::Variant::kFull) {
  net::ModelConfig c;
  c.image_side = 32;
  c.channels = 16;
  c.heads = 2;
  c.ff_mult = 2;
  c.html_blocks = 1;
  c.cell_blocks = 1;
  c.refiner_blocks = 1;
  c.variant = variant;
  return c;
}

/// Small table that fits a 32-pixel image: 1x2 with short contents.
inline synth::TableRecord tiny_record(std::uint64_t seed, int rows = 1, int cols = 2) {
  synth::TableSpec spec;
  spec.rows = rows;
  spec.cols = cols;
  spec.len_min = 1;
  spec.len_max = 1;
  spec.side = 32;
  return synth::generate(spec, seed);
}

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& name) {
  auto p = std::filesystem::temp_directory_path() / ("tabrec_test_" + name);
  std::filesystem::remove_all(p);
  std::filesystem::create_directories(p);
  return p;
}

template <typename T>
attn::Mat<T> random_mat(std::mt19937_64& rng, Eigen::Index rows, Eigen::Index cols, double scale = 1.0) {
  std::normal_distribution<double> nd(0.0, scale);
  attn::Mat<T> m(rows, cols);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = T(nd(rng));
  return m;
}

}  // namespace tabrec::fixtures
