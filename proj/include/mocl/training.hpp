#pragma once

#include <functional>

#include "mocl/data.hpp"
#include "mocl/model.hpp"
#include "mocl/optim.hpp"

namespace mocl {

// Optimizer and schedule knobs shared by every method.
struct Hyperparams {
  double lr = 2e-3;
  int batch_size = 8;
  int max_epochs = 40;
  int patience = 5;
  double weight_decay = 0.0;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // Eq-1 specifics (ignored by the plain cross-entropy baselines).
  double cosine_weight = 1.0;   // lambda on the feature-matching term
  bool alpha_softmax = false;   // softmax-normalize matching scores (ablation)
  bool alpha_force_one = false; // replace matching scores by 1 (ablation)
  bool alpha_stop_grad = false; // treat alpha as constant in the forward path

  void validate() const;
};

// Minibatch AdamW loop with per-epoch shuffling, early stopping on the
// validation objective (patience epochs without improvement) and best-epoch
// parameter restore. Builders produce the per-example objective; train_loss
// runs under an active tape, val_loss under NoGradScope. Returns the number
// of optimizer steps taken. Throws DivergenceError on a non-finite loss.
long run_train_loop(const Hyperparams& hp, std::vector<Tensor> params, int n_train,
                    const std::function<Tensor(int)>& train_loss, int n_val,
                    const std::function<double(int)>& val_loss,
                    const std::function<Rng(int)>& epoch_stream);

// Vocabulary over the training splits, iterated in task-name order so the
// result is invariant to the task sequence order. When the distinct-token
// count exceeds max_size - 3, the most frequent tokens are kept; insertion
// order (and therefore ids) follows first appearance.
Vocab build_vocab(const std::vector<TaskSpec>& tasks, int max_size = 2048);

struct WarmupConfig {
  bool enabled = true;
  int epochs = 3;
  double lr = 2e-3;
  int batch_size = 8;
  // Weight on the auxiliary task-identity term relative to the class term.
  // Larger values tighten per-task embedding clusters.
  double task_loss_weight = 2.0;
};

// Gives the randomly initialized backbone nontrivial features before the
// continual-learning sequence: trains it with a throwaway head on the mixture
// of all tasks' training splits (global labels), then freezes it. This is the
// stand-in for pretraining, not part of the task sequence.
void warm_train_backbone(Backbone& bb, const Vocab& vocab,
                         const std::vector<TaskSpec>& tasks, const WarmupConfig& cfg,
                         std::uint64_t seed);

}  // namespace mocl
