#pragma once

#include <filesystem>

#include "tabrec/netgraph.hpp"

namespace tabrec {

/// Binary checkpoint: the model config followed by every named tensor.
/// Values are stored little-endian in the model's scalar type.
template <typename T>
void save_checkpoint(const net::TableModel<T>& model, const std::filesystem::path& path);

/// Reads a checkpoint into a model of scalar type T, converting if the file
/// was written with another type. Throws std::runtime_error on a malformed
/// file or a tensor layout that does not match the stored config.
template <typename T>
net::TableModel<T> load_checkpoint(const std::filesystem::path& path);

/// Only the config of a checkpoint.
net::ModelConfig read_checkpoint_config(const std::filesystem::path& path);

}  // namespace tabrec
