// SPDX-License-Identifier: Apache-2.0
#include "tal/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <json.hpp>

#include "tal/corpus.hpp"
#include "tal/error.hpp"

namespace tal {
namespace {

using nlohmann::json;
constexpr char kMagic[4] = {'T', 'A', 'L', 'W'};

static_assert(std::endian::native == std::endian::little, "archive format assumes a little-endian host");

void put_u32(std::ostream& out, std::uint32_t v) { out.write(reinterpret_cast<const char*>(&v), 4); }

std::uint32_t get_u32(std::istream& in, const std::filesystem::path& path) {
  std::uint32_t v = 0;
  if (!in.read(reinterpret_cast<char*>(&v), 4)) fail(errc::kMalformed, "truncated archive " + path.string());
  return v;
}

json read_json(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) fail(errc::kNotFound, "missing " + path.string());
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    fail(errc::kMalformed, path.string() + ": " + e.what());
  }
}

void write_json(const std::filesystem::path& path, const json& j) {
  std::ofstream out(path);
  if (!out) fail(errc::kIo, "cannot write " + path.string());
  out << j.dump(2) << "\n";
}

void check_version(const json& j, const std::filesystem::path& path) {
  if (!j.contains("format_version") || j["format_version"].get<int>() != kCheckpointVersion)
    fail(errc::kMalformed, path.string() + ": unsupported format version");
}

}  // namespace

void write_tensor_archive(const std::filesystem::path& path, const std::map<std::string, Mat<float>>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) fail(errc::kIo, "cannot write " + path.string());
  out.write(kMagic, 4);
  put_u32(out, static_cast<std::uint32_t>(kCheckpointVersion));
  put_u32(out, static_cast<std::uint32_t>(tensors.size()));
  for (const auto& [name, m] : tensors) {
    put_u32(out, static_cast<std::uint32_t>(name.size()));
    out.write(name.data(), static_cast<std::streamsize>(name.size()));
    put_u32(out, static_cast<std::uint32_t>(m.rows()));
    put_u32(out, static_cast<std::uint32_t>(m.cols()));
    out.write(reinterpret_cast<const char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float)));
  }
  if (!out) fail(errc::kIo, "failed writing " + path.string());
}

std::map<std::string, Mat<float>> read_tensor_archive(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(errc::kNotFound, "missing archive " + path.string());
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) fail(errc::kMalformed, "bad archive header " + path.string());
  if (get_u32(in, path) != kCheckpointVersion) fail(errc::kMalformed, "unsupported archive version " + path.string());
  const std::uint32_t count = get_u32(in, path);
  std::map<std::string, Mat<float>> out;
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name(get_u32(in, path), '\0');
    if (!in.read(name.data(), static_cast<std::streamsize>(name.size()))) fail(errc::kMalformed, "truncated archive " + path.string());
    const auto rows = get_u32(in, path), cols = get_u32(in, path);
    Mat<float> m(rows, cols);
    if (!in.read(reinterpret_cast<char*>(m.data()), static_cast<std::streamsize>(m.size() * sizeof(float))))
      fail(errc::kMalformed, "truncated archive " + path.string());
    out.emplace(std::move(name), std::move(m));
  }
  return out;
}

void save_model(const Transformer<float>& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  const auto& c = model.config;
  json j = {{"format_version", kCheckpointVersion},
            {"layer_count", c.layer_count},
            {"model_width", c.model_width},
            {"head_count", c.head_count},
            {"context_length", c.context_length},
            {"ff_width", c.ff_width},
            {"seed", c.seed},
            {"vocabulary", c.vocabulary.tokens()}};
  write_json(dir / "model.json", j);
  std::map<std::string, Mat<float>> tensors;
  for (size_t i = 0; i < model.params.size(); ++i) tensors.emplace(model.params.name(i), model.params[i]);
  write_tensor_archive(dir / "weights.bin", tensors);
}

Transformer<float> load_model(const std::filesystem::path& dir) {
  const json j = read_json(dir / "model.json");
  check_version(j, dir / "model.json");
  ModelConfig c;
  try {
    c.layer_count = j.at("layer_count");
    c.model_width = j.at("model_width");
    c.head_count = j.at("head_count");
    c.context_length = j.at("context_length");
    c.ff_width = j.at("ff_width");
    c.seed = j.at("seed");
    c.vocabulary = Vocabulary::from_tokens(j.at("vocabulary").get<std::vector<std::string>>());
  } catch (const json::exception& e) {
    fail(errc::kMalformed, (dir / "model.json").string() + ": " + e.what());
  }
  auto model = Transformer<float>::allocate(c);
  auto tensors = read_tensor_archive(dir / "weights.bin");
  if (tensors.size() != model.params.size()) fail(errc::kShapeMismatch, "weight count does not match the config");
  for (size_t i = 0; i < model.params.size(); ++i) {
    auto it = tensors.find(model.params.name(i));
    if (it == tensors.end()) fail(errc::kShapeMismatch, "missing tensor " + model.params.name(i));
    if (it->second.rows() != model.params[i].rows() || it->second.cols() != model.params[i].cols())
      fail(errc::kShapeMismatch, "tensor " + it->first + " has the wrong shape");
    model.params[i] = std::move(it->second);
  }
  return model;
}

void save_adapter(const LowRankAdapter<float>& adapter, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  std::vector<std::string> targets;
  std::map<std::string, Mat<float>> tensors;
  for (const auto& [name, f] : adapter.factors) {
    targets.push_back(name);
    tensors.emplace(name + ".down", f.down);
    tensors.emplace(name + ".up", f.up);
  }
  write_json(dir / "adapter.json", {{"format_version", kCheckpointVersion},
                                    {"rank", adapter.rank},
                                    {"alpha", adapter.alpha},
                                    {"targets", targets}});
  write_tensor_archive(dir / "adapter.bin", tensors);
}

LowRankAdapter<float> load_adapter(const std::filesystem::path& dir, const Transformer<float>& base) {
  const json j = read_json(dir / "adapter.json");
  check_version(j, dir / "adapter.json");
  LowRankAdapter<float> a;
  std::vector<std::string> targets;
  try {
    a.rank = j.at("rank");
    a.alpha = j.at("alpha");
    targets = j.at("targets").get<std::vector<std::string>>();
  } catch (const json::exception& e) {
    fail(errc::kMalformed, (dir / "adapter.json").string() + ": " + e.what());
  }
  auto tensors = read_tensor_archive(dir / "adapter.bin");
  for (const auto& t : targets) {
    auto d = tensors.find(t + ".down"), u = tensors.find(t + ".up");
    if (d == tensors.end() || u == tensors.end()) fail(errc::kMalformed, "adapter archive lacks factors for " + t);
    a.factors[t] = {d->second, u->second};
  }
  a.check_compatible(base);
  return a;
}

std::string adapter_fingerprint(const LowRankAdapter<float>& adapter) {
  std::string bytes = std::to_string(adapter.rank) + ":" + std::to_string(adapter.alpha);
  for (const auto& [name, f] : adapter.factors) {
    bytes += name;
    for (const Mat<float>* m : {&f.down, &f.up})
      bytes.append(reinterpret_cast<const char*>(m->data()), static_cast<size_t>(m->size()) * sizeof(float));
  }
  return sha256_hex(bytes);
}

}  // namespace tal
