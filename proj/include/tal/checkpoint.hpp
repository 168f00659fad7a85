// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "tal/adapter.hpp"

namespace tal {

inline constexpr int kCheckpointVersion = 1;

/// Named float32 tensors in a little-endian binary archive.
void write_tensor_archive(const std::filesystem::path& path, const std::map<std::string, Mat<float>>& tensors);
std::map<std::string, Mat<float>> read_tensor_archive(const std::filesystem::path& path);

/// Directory with model.json (config, vocabulary, version) and weights.bin.
void save_model(const Transformer<float>& model, const std::filesystem::path& dir);
Transformer<float> load_model(const std::filesystem::path& dir);

/// Directory with adapter.json (rank, alpha, targets, version) and adapter.bin.
/// Loading checks target names and shapes against `base`.
void save_adapter(const LowRankAdapter<float>& adapter, const std::filesystem::path& dir);
LowRankAdapter<float> load_adapter(const std::filesystem::path& dir, const Transformer<float>& base);

/// Hex SHA-256 over target names and factor values; identifies an adapter state.
std::string adapter_fingerprint(const LowRankAdapter<float>& adapter);

}  // namespace tal
