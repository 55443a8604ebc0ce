#pragma once

#include <memory>

#include "mocl/baselines.hpp"
#include "mocl/eval.hpp"

namespace mocl::testfx {

// A generated suite plus a warm-trained frozen backbone, sized for fast tests.
struct Lab {
  std::vector<TaskSpec> tasks;
  Vocab vocab;
  std::shared_ptr<Backbone> backbone;
  BackboneConfig bc;
  PeftConfig pc;
  Hyperparams hp;
  std::uint64_t seed = 1;

  std::shared_ptr<Backbone> fresh_backbone() const {
    return std::make_shared<Backbone>(backbone->clone());
  }
  LearnerState learner() const { return make_learner(fresh_backbone(), pc, hp, seed); }
  PerTaskState per_task() const { return make_per_task(fresh_backbone(), pc, hp, seed); }
  ProgressiveState progressive() const {
    return make_progressive(fresh_backbone(), pc, hp, seed);
  }
  SequentialState sequential(bool full) const {
    return make_sequential(fresh_backbone(), tasks, full, pc, hp, seed);
  }
  TokenSeq toks(const Example& e) const { return tokenize(vocab, e.text, bc.max_len); }
};

inline SuiteConfig quick_suite(int tasks, double rho, std::uint64_t seed = 1,
                               bool interference = false) {
  SuiteConfig sc;
  sc.n_tasks = tasks;
  sc.classes_per_task = 2;
  sc.train_per_task = 48;
  sc.val_per_task = 16;
  sc.test_per_task = 40;
  sc.vocab_size = 400;
  sc.relatedness = rho;
  sc.interference = interference;
  sc.tokens_per_class = 10;
  sc.min_len = 4;
  sc.max_len = 12;
  sc.seed = seed;
  return sc;
}

inline Lab make_lab(const SuiteConfig& sc, std::uint64_t seed = 1,
                    PeftKind kind = PeftKind::prefix, int max_epochs = 12,
                    int warm_epochs = 2, double warm_task_weight = 2.0) {
  Lab lab;
  lab.seed = seed;
  lab.tasks = gen_suite(sc);
  lab.vocab = build_vocab(lab.tasks);

  lab.bc.vocab_size = lab.vocab.size();
  lab.bc.model_dim = 32;
  lab.bc.layers = 2;
  lab.bc.heads = 4;
  lab.bc.max_len = 16;
  lab.bc.ffn_dim = 64;

  Backbone bb = make_backbone(lab.bc, Rng(seed));
  WarmupConfig wc;
  wc.epochs = warm_epochs;
  wc.task_loss_weight = warm_task_weight;
  warm_train_backbone(bb, lab.vocab, lab.tasks, wc, seed);
  lab.backbone = std::make_shared<Backbone>(std::move(bb));

  lab.pc.kind = kind;
  lab.pc.layers = lab.bc.layers;
  lab.pc.model_dim = lab.bc.model_dim;
  lab.pc.heads = lab.bc.heads;
  lab.pc.prefix_len = 4;
  lab.pc.lora_rank = 4;

  lab.hp.max_epochs = max_epochs;
  lab.hp.patience = 4;
  return lab;
}

}  // namespace mocl::testfx
