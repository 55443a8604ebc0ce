#pragma once

#include "mocl/baselines.hpp"

namespace mocl {

inline constexpr const char* kCodeVersion = "0.1.0";

// Identity block embedded in every checkpoint; eval and heatmap refuse
// artifacts whose hashes do not match the files they are asked to use.
struct CheckpointMeta {
  std::string method;
  std::uint64_t seed = 0;
  std::string config_hash;
  std::string suite_hash;
  std::string code_version = kCodeVersion;
  std::string backbone_hash;
};

void save_checkpoint(const std::string& dir, const LearnerState& st, const CheckpointMeta& meta);
void save_checkpoint(const std::string& dir, const PerTaskState& st, const CheckpointMeta& meta);
void save_checkpoint(const std::string& dir, const ProgressiveState& st,
                     const CheckpointMeta& meta);
void save_checkpoint(const std::string& dir, const SequentialState& st,
                     const CheckpointMeta& meta);

// Inference-ready state reloaded from disk; exactly one member is engaged,
// matching meta.method.
struct LoadedCheckpoint {
  CheckpointMeta meta;
  Method method = Method::mocl;
  std::optional<LearnerState> learner;
  std::optional<PerTaskState> per_task;
  std::optional<ProgressiveState> progressive;
  std::optional<SequentialState> sequential;
};

LoadedCheckpoint load_checkpoint(const std::string& dir);

}  // namespace mocl
