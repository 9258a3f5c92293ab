#include "tabrec/checkpoint.hpp"

#include <algorithm>
#include <array>
#include <bit>
#include <cstring>
#include <fstream>
#include <stdexcept>

namespace tabrec {

namespace {

constexpr std::array<char, 8> kMagic = {'T', 'A', 'B', 'R', 'E', 'C', 'C', 'K'};
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kFloat32 = 0;
constexpr std::uint8_t kFloat64 = 1;

template <typename V>
void put(std::ostream& out, V v) {
  std::array<char, sizeof(V)> bytes;
  std::memcpy(bytes.data(), &v, sizeof(V));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  out.write(bytes.data(), sizeof(V));
}

template <typename V>
V get(std::istream& in, const std::filesystem::path& path) {
  std::array<char, sizeof(V)> bytes;
  if (!in.read(bytes.data(), sizeof(V))) throw std::runtime_error(path.string() + ": truncated checkpoint");
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes.begin(), bytes.end());
  V v;
  std::memcpy(&v, bytes.data(), sizeof(V));
  return v;
}

std::string get_string(std::istream& in, const std::filesystem::path& path, std::size_t limit) {
  const auto n = get<std::uint64_t>(in, path);
  if (n > limit) throw std::runtime_error(path.string() + ": implausible string length");
  std::string s(n, '\0');
  if (!in.read(s.data(), static_cast<std::streamsize>(n))) throw std::runtime_error(path.string() + ": truncated checkpoint");
  return s;
}

net::ModelConfig read_header(std::istream& in, const std::filesystem::path& path) {
  std::array<char, 8> magic{};
  if (!in.read(magic.data(), magic.size()) || magic != kMagic)
    throw std::runtime_error(path.string() + ": not a tabrec checkpoint");
  const auto version = get<std::uint32_t>(in, path);
  if (version != kVersion) throw std::runtime_error(path.string() + ": unsupported checkpoint version " + std::to_string(version));
  return net::ModelConfig::from_text(get_string(in, path, 1 << 20));
}

}  // namespace

template <typename T>
void save_checkpoint(const net::TableModel<T>& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out.write(kMagic.data(), kMagic.size());
  put<std::uint32_t>(out, kVersion);
  const std::string cfg = model.config().to_text();
  put<std::uint64_t>(out, cfg.size());
  out.write(cfg.data(), static_cast<std::streamsize>(cfg.size()));
  put<std::uint32_t>(out, static_cast<std::uint32_t>(model.params().size()));
  for (const auto& p : model.params()) {
    put<std::uint64_t>(out, p.name.size());
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    put<std::uint8_t>(out, std::is_same_v<T, float> ? kFloat32 : kFloat64);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.rows()));
    put<std::uint32_t>(out, static_cast<std::uint32_t>(p.value.cols()));
    for (Eigen::Index i = 0; i < p.value.size(); ++i) put<T>(out, p.value.data()[i]);
  }
  if (!out) throw std::runtime_error("write failed for " + path.string());
}

template <typename T>
net::TableModel<T> load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  net::TableModel<T> model(read_header(in, path), 0);
  auto& params = model.params();
  const auto count = get<std::uint32_t>(in, path);
  if (count != params.size())
    throw std::runtime_error(path.string() + ": " + std::to_string(count) + " tensors, model has " +
                             std::to_string(params.size()));
  for (std::uint32_t k = 0; k < count; ++k) {
    const std::string name = get_string(in, path, 4096);
    const auto handle = params.find(name);
    if (!handle) throw std::runtime_error(path.string() + ": unknown tensor " + name);
    auto& value = params[*handle].value;
    const auto dtype = get<std::uint8_t>(in, path);
    const auto rows = get<std::uint32_t>(in, path);
    const auto cols = get<std::uint32_t>(in, path);
    if (rows != value.rows() || cols != value.cols())
      throw std::runtime_error(path.string() + ": shape mismatch for " + name);
    if (dtype != kFloat32 && dtype != kFloat64) throw std::runtime_error(path.string() + ": unknown dtype tag for " + name);
    for (Eigen::Index i = 0; i < value.size(); ++i)
      value.data()[i] = dtype == kFloat32 ? T(get<float>(in, path)) : T(get<double>(in, path));
  }
  return model;
}

net::ModelConfig read_checkpoint_config(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path.string());
  return read_header(in, path);
}

template void save_checkpoint(const net::TableModel<float>&, const std::filesystem::path&);
template void save_checkpoint(const net::TableModel<double>&, const std::filesystem::path&);
template net::TableModel<float> load_checkpoint(const std::filesystem::path&);
template net::TableModel<double> load_checkpoint(const std::filesystem::path&);

}  // namespace tabrec
