#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mocl/error.hpp"

namespace mocl {

struct Example {
  std::string text;
  int label = 0;  // local class index within the task
};

// A labeled text-classification task with disjoint global label space.
struct TaskSpec {
  int id = 0;  // 1-based position in the training sequence
  std::string name;
  std::vector<std::string> label_names;
  int label_base = 0;  // global id of local class 0
  std::vector<Example> train, val, test;

  int num_classes() const { return static_cast<int>(label_names.size()); }
  int global_label(int local) const { return label_base + local; }
};

// Controls for the synthetic near-/far-domain suite generator.
struct SuiteConfig {
  int n_tasks = 4;
  int classes_per_task = 2;
  int train_per_task = 96;
  int val_per_task = 32;
  int test_per_task = 64;
  int vocab_size = 512;      // budget for distinct content tokens
  double relatedness = 0.0;  // rho: shared-vocabulary fraction between consecutive tasks
  bool interference = false; // share tokens with flipped label associations
  int tokens_per_class = 12;
  int min_len = 6;
  int max_len = 16;
  std::uint64_t seed = 1;
  std::vector<int> order;  // optional 1-based permutation applied after generation

  void validate() const;
};

// Bag-of-words suite: each class draws i.i.d. tokens from a class-specific
// pool; consecutive tasks share a rho fraction of their pools (class-aligned,
// or label-flipped when interference is set). Deterministic given the seed.
std::vector<TaskSpec> gen_suite(const SuiteConfig& cfg);

// Reorders tasks by a 1-based permutation of current ids and reindexes ids to
// 1..N; data, names, and global label bases are unchanged.
std::vector<TaskSpec> apply_order(std::vector<TaskSpec> tasks, const std::vector<int>& order);

// JSON-lines corpus: one object per line with keys text, label, task and
// optional split. Tasks are grouped in first-appearance order; per-task label
// maps follow first appearance; absent splits fall back to a deterministic
// 80/10/10 assignment by text hash.
std::vector<TaskSpec> load_jsonl(const std::string& path);
void save_jsonl(const std::vector<TaskSpec>& tasks, const std::string& path);
std::string to_jsonl(const std::vector<TaskSpec>& tasks);

// Set of distinct tokens appearing in any split of the task.
std::vector<std::string> task_token_pool(const TaskSpec& task);

}  // namespace mocl
