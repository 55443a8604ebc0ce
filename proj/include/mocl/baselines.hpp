#pragma once

#include <memory>
#include <optional>
#include <utility>

#include "mocl/learner.hpp"

namespace mocl {

enum class Method { mocl, seq_ft_full, seq_ft_peft, per_task, progressive, prototype_cil };

std::string to_string(Method m);
Method method_from_string(const std::string& s);

// Sequential fine-tuning: one set of shared parameters (the whole backbone in
// full mode, a single PEFT module in peft mode) updated across every task,
// plus one shared head over the union of the global label spaces. TIL
// evaluation restricts the head to the queried task's label slice.
struct SequentialState {
  std::shared_ptr<Backbone> backbone;
  bool full = false;
  PeftConfig peft;
  Hyperparams hp;
  std::uint64_t seed = 1;

  std::optional<PeftModule> module;  // peft mode only
  Head head;                         // union label space
  int total_classes = 0;

  std::vector<int> task_ids;
  std::vector<std::string> task_names;
  std::vector<int> label_bases;
  std::vector<int> class_counts;
  int tasks_trained = 0;

  int position_of(int task_id) const;
};

SequentialState make_sequential(std::shared_ptr<Backbone> backbone,
                                const std::vector<TaskSpec>& all_tasks, bool full,
                                PeftConfig peft, Hyperparams hp, std::uint64_t seed);
void sequential_train_next(SequentialState& st, const Vocab& vocab, const TaskSpec& task);
void train_sequential(SequentialState& st, const Vocab& vocab,
                      const std::vector<TaskSpec>& tasks);
// One evolving model, one prediction rule: argmax over the whole union head.
// The task id is used only to score the prediction, so drift toward recent
// tasks shows up as forgetting. Returns the predicted global label.
int sequential_predict_til(const SequentialState& st, const TokenSeq& toks, int task_id);

// Per-task fine-tuning: an independent module and head per task, no
// composition, no feature vectors. Prototypes (mean bare pooled embedding of
// each task's training set) are stored during training for the
// nearest-prototype class-incremental baseline.
struct PerTaskState {
  std::shared_ptr<Backbone> backbone;
  PeftConfig peft;
  Hyperparams hp;
  std::uint64_t seed = 1;

  std::vector<PeftModule> modules;
  std::vector<Head> heads;
  std::vector<RowVector> prototypes;

  std::vector<int> task_ids;
  std::vector<std::string> task_names;
  std::vector<int> label_bases;
  std::vector<int> class_counts;
  int tasks_trained = 0;

  int position_of(int task_id) const;
};

PerTaskState make_per_task(std::shared_ptr<Backbone> backbone, PeftConfig peft, Hyperparams hp,
                           std::uint64_t seed);
void per_task_train_next(PerTaskState& st, const Vocab& vocab, const TaskSpec& task);
void train_per_task(PerTaskState& st, const Vocab& vocab, const std::vector<TaskSpec>& tasks);
int per_task_predict_til(const PerTaskState& st, const TokenSeq& toks, int task_id);

// Nearest prototype by cosine identifies the task (ties break toward the
// lowest task id), then that task's module and head classify.
std::pair<int, int> infer_prototype_cil(const PerTaskState& st, const TokenSeq& toks);

// Progressive concatenation: training task n runs the forward with the
// prefix stack [P_1; ...; P_n]; earlier modules are frozen. Prefix kind only.
struct ProgressiveState {
  std::shared_ptr<Backbone> backbone;
  PeftConfig peft;
  Hyperparams hp;
  std::uint64_t seed = 1;

  std::vector<PeftModule> modules;
  std::vector<Head> heads;

  std::vector<int> task_ids;
  std::vector<std::string> task_names;
  std::vector<int> label_bases;
  std::vector<int> class_counts;
  int tasks_trained = 0;

  int position_of(int task_id) const;
};

ProgressiveState make_progressive(std::shared_ptr<Backbone> backbone, PeftConfig peft,
                                  Hyperparams hp, std::uint64_t seed);
void progressive_train_next(ProgressiveState& st, const Vocab& vocab, const TaskSpec& task);
void train_progressive(ProgressiveState& st, const Vocab& vocab,
                       const std::vector<TaskSpec>& tasks);
// Inference for task k uses the stack [P_1; ...; P_k], which later tasks
// never modify.
int progressive_predict_til(const ProgressiveState& st, const TokenSeq& toks, int task_id);

}  // namespace mocl
