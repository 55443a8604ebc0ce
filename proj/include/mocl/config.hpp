#pragma once

#include <optional>

#include "mocl/baselines.hpp"
#include "mocl/eval.hpp"

namespace mocl {

// A fully validated experiment definition. Everything an experiment does is
// determined by this struct plus the seed; unknown config keys are rejected
// so files stay reproducible.
struct ExperimentConfig {
  // [run]
  Method method = Method::mocl;
  Protocol protocol = Protocol::both;
  std::vector<std::uint64_t> seeds = {1};
  std::string outdir = "out";
  bool compute_fwt = true;

  // [model]
  int model_dim = 64;
  int layers = 2;
  int heads = 4;
  int max_len = 32;
  int ffn_dim = 256;
  int max_vocab = 2048;
  WarmupConfig warmup;

  // [peft]
  PeftConfig peft;

  // [train]
  Hyperparams train;

  // [suite] or [corpus]; exactly one.
  std::optional<SuiteConfig> suite;   // suite.seed == 0 means "use the run seed"
  std::optional<std::string> corpus_path;
  std::vector<int> corpus_order;      // optional 1-based permutation for corpora

  BackboneConfig backbone_config(int vocab_size) const;
  PeftConfig peft_config() const;  // with model dims filled in
  void validate() const;
};

ExperimentConfig parse_config_text(const std::string& text, const std::string& origin);
ExperimentConfig parse_config_file(const std::string& path);

// Canonical section.key=value listing of every semantic field (seeds and
// outdir excluded); the config hash is FNV-1a over this text.
std::string canonical_config(const ExperimentConfig& cfg);
std::string config_hash(const ExperimentConfig& cfg);

// FNV-1a over a file's bytes, hex-encoded; used to pin suite files to
// checkpoints.
std::string file_hash(const std::string& path);

}  // namespace mocl
