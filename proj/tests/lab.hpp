// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <filesystem>

#include "tal/eval.hpp"
#include "tal/orchestration.hpp"

namespace lab {

/// Small shared fixture: a toy corpus, its split, a briefly pretrained base
/// and a ratio-50 unlearned adapter. Built once per process.
struct ToyLab {
  tal::Corpus corpus;
  tal::Corpus pretraining;
  tal::SplitManifest manifest;
  tal::ModelConfig model_config;
  tal::Transformer<float> base;
  tal::LowRankAdapter<float> unlearned50;
};

std::map<std::string, int> toy_shape();
tal::ModelConfig toy_model_config(const tal::Corpus& corpus, const tal::Corpus& pretraining);
tal::PretrainConfig toy_pretrain_config();
tal::UnlearnConfig toy_unlearn_config();
const ToyLab& toy_lab();

/// RunConfig matching the toy lab, rooted at `root`.
tal::RunConfig toy_run_config(const std::filesystem::path& root);

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag);
  ~TempDir();
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;
  const std::filesystem::path& path() const { return path_; }

 private:
  std::filesystem::path path_;
};

/// Toy workspace under a process-lifetime temp root with corpora, split,
/// seed-1 base and seed-1 unlearn runs at ratios 10 and 50.
const tal::Workspace& toy_workspace();

tal::McqItem sample_item(const std::string& id = "q1", char answer = 'B');

}  // namespace lab
