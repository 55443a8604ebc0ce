#pragma once

#include <memory>
#include <utility>

#include "mocl/training.hpp"

namespace mocl {

// Frozen backbone plus the ordered module bank, task feature vectors and
// per-task heads. Indices below tasks_trained are frozen; the bank, feature
// rows and heads always share ordering and length.
struct LearnerState {
  std::shared_ptr<Backbone> backbone;
  PeftConfig peft;
  Hyperparams hp;
  std::uint64_t seed = 1;

  std::vector<PeftModule> bank;
  std::vector<Tensor> features;  // v_k, 1 x model_dim, frozen after task k
  std::vector<Head> heads;
  std::vector<int> task_ids;
  std::vector<std::string> task_names;
  std::vector<int> label_bases;
  std::vector<int> class_counts;
  int tasks_trained = 0;

  int position_of(int task_id) const;  // LookupError on unknown id
};

LearnerState make_learner(std::shared_ptr<Backbone> backbone, PeftConfig peft, Hyperparams hp,
                          std::uint64_t seed);

// alpha_k = cos(x, v_k) for the first n feature vectors.
Vector matching_scores(const LearnerState& st, const RowVector& x, int n);

// Trains task n+1: appends a fresh module, feature vector and head, runs the
// composed cross-entropy-minus-cosine objective over minibatches with
// per-example matching scores, then freezes the new module and feature
// vector. Task ids must arrive strictly sequentially.
void train_task(LearnerState& st, const Vocab& vocab, const TaskSpec& task);

// Task-incremental inference: the task's own module with unit weight.
// Returns the predicted global label.
int infer_til(const LearnerState& st, const TokenSeq& toks, int task_id);

// Class-incremental inference: per-example matching scores weight the whole
// bank; the argmax-score task's head classifies. Returns (task id, global
// label).
std::pair<int, int> infer_cil(const LearnerState& st, const TokenSeq& toks);

// Mean Eq-1 objective (cross-entropy minus weighted cosine) of the examples
// under the current parameters of the task at bank position `pos`.
double mocl_objective(const LearnerState& st, const Vocab& vocab,
                      const std::vector<Example>& examples, int pos);

}  // namespace mocl
