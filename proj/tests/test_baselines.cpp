#include <cmath>

#include "doctest.h"
#include "fixture.hpp"

using namespace mocl;
using testfx::Lab;
using testfx::make_lab;
using testfx::quick_suite;

TEST_CASE("method names round-trip") {
  for (Method m : {Method::mocl, Method::seq_ft_full, Method::seq_ft_peft, Method::per_task,
                   Method::progressive, Method::prototype_cil})
    CHECK(method_from_string(to_string(m)) == m);
  CHECK_THROWS_AS(method_from_string("nope"), ConfigError);
}

TEST_CASE("sequential full fine-tuning with zero learning rate is the identity") {
  Lab lab = make_lab(quick_suite(2, 0.5), 1, PeftKind::prefix, 3);
  lab.hp.lr = 0.0;
  SequentialState st = lab.sequential(/*full=*/true);
  std::uint64_t bb_hash = st.backbone->param_hash();
  std::uint64_t head_hash = st.head.param_hash();
  train_sequential(st, lab.vocab, lab.tasks);
  CHECK(st.backbone->param_hash() == bb_hash);
  CHECK(st.head.param_hash() == head_hash);
}

TEST_CASE("on a single task, sequential-PEFT equals per-task fine-tuning bit for bit") {
  Lab lab = make_lab(quick_suite(1, 0.0), 1, PeftKind::prefix, 8);
  SequentialState seq = lab.sequential(/*full=*/false);
  train_sequential(seq, lab.vocab, lab.tasks);

  PerTaskState pt = lab.per_task();
  train_per_task(pt, lab.vocab, lab.tasks);

  CHECK(seq.module->param_hash() == pt.modules[0].param_hash());
  CHECK(seq.head.param_hash() == pt.heads[0].param_hash());
  for (const Example& e : lab.tasks[0].test) {
    TokenSeq toks = lab.toks(e);
    CHECK(sequential_predict_til(seq, toks, 1) == per_task_predict_til(pt, toks, 1));
  }
}

TEST_CASE("per-task accuracy does not depend on the task order") {
  SuiteConfig sc = quick_suite(3, 0.5);
  Lab lab = make_lab(sc, 1, PeftKind::prefix, 6);

  PerTaskState a = lab.per_task();
  train_per_task(a, lab.vocab, lab.tasks);

  std::vector<TaskSpec> reordered = apply_order(lab.tasks, {3, 1, 2});
  PerTaskState b = lab.per_task();
  train_per_task(b, lab.vocab, reordered);

  for (const TaskSpec& t : lab.tasks) {
    // Find the same underlying task (by name) in both runs.
    int id_a = t.id;
    int id_b = -1;
    for (std::size_t i = 0; i < reordered.size(); ++i)
      if (reordered[i].name == t.name) id_b = reordered[i].id;
    REQUIRE(id_b > 0);
    CHECK(a.modules[static_cast<std::size_t>(a.position_of(id_a))].param_hash() ==
          b.modules[static_cast<std::size_t>(b.position_of(id_b))].param_hash());
    for (const Example& e : t.test) {
      TokenSeq toks = lab.toks(e);
      CHECK(per_task_predict_til(a, toks, id_a) == per_task_predict_til(b, toks, id_b));
    }
  }
}

TEST_CASE("single task: per-task equals MoCL with cosine off and alpha forced to one") {
  Lab lab = make_lab(quick_suite(1, 0.0), 1, PeftKind::prefix, 8);

  PerTaskState pt = lab.per_task();
  train_per_task(pt, lab.vocab, lab.tasks);

  Lab mlab = lab;
  mlab.hp.cosine_weight = 0.0;
  mlab.hp.alpha_force_one = true;
  LearnerState st = mlab.learner();
  train_task(st, mlab.vocab, mlab.tasks[0]);

  CHECK(pt.modules[0].param_hash() == st.bank[0].param_hash());
  CHECK(pt.heads[0].param_hash() == st.heads[0].param_hash());
  for (const Example& e : lab.tasks[0].test) {
    TokenSeq toks = lab.toks(e);
    CHECK(per_task_predict_til(pt, toks, 1) == infer_til(st, toks, 1));
  }
}

TEST_CASE("progressive: frozen stack keeps task-1 predictions bit-identical") {
  Lab lab = make_lab(quick_suite(2, 0.5), 1, PeftKind::prefix, 6);
  ProgressiveState st = lab.progressive();
  progressive_train_next(st, lab.vocab, lab.tasks[0]);

  std::vector<int> before;
  for (const Example& e : lab.tasks[0].test)
    before.push_back(progressive_predict_til(st, lab.toks(e), 1));
  std::uint64_t h1 = st.modules[0].param_hash();

  progressive_train_next(st, lab.vocab, lab.tasks[1]);
  CHECK(st.modules[0].param_hash() == h1);

  std::vector<int> after;
  for (const Example& e : lab.tasks[0].test)
    after.push_back(progressive_predict_til(st, lab.toks(e), 1));
  CHECK(before == after);

  // Training task 2 used the concatenated stack: its width doubled.
  ComposedModule stack = concat_prefixes({&st.modules[0], &st.modules[1]});
  CHECK(stack.prefix_len == 2 * lab.pc.prefix_len);
}

TEST_CASE("progressive rejects LoRA modules") {
  Lab lab = make_lab(quick_suite(1, 0.0), 1, PeftKind::lora, 2);
  CHECK_THROWS_AS(lab.progressive(), UnsupportedKindError);
}

TEST_CASE("progressive and MoCL share identical first modules under matched flags") {
  Lab lab = make_lab(quick_suite(1, 0.0), 1, PeftKind::prefix, 8);

  ProgressiveState prog = lab.progressive();
  progressive_train_next(prog, lab.vocab, lab.tasks[0]);

  Lab mlab = lab;
  mlab.hp.cosine_weight = 0.0;
  mlab.hp.alpha_force_one = true;
  LearnerState st = mlab.learner();
  train_task(st, mlab.vocab, mlab.tasks[0]);

  CHECK(prog.modules[0].param_hash() == st.bank[0].param_hash());
  CHECK(prog.heads[0].param_hash() == st.heads[0].param_hash());
}

TEST_CASE("prototype identification on disjoint vocabularies") {
  Lab lab = make_lab(quick_suite(2, 0.0), 1, PeftKind::prefix, 8);
  PerTaskState st = lab.per_task();
  train_per_task(st, lab.vocab, lab.tasks);

  SUBCASE("held-out identification beats 95% and matches the brute-force oracle") {
    int ok = 0, total = 0;
    for (const TaskSpec& t : lab.tasks) {
      for (const Example& e : t.test) {
        TokenSeq toks = lab.toks(e);
        auto [tid, label] = infer_prototype_cil(st, toks);

        // Brute-force nearest-prototype oracle.
        RowVector x = pooled_embedding(*st.backbone, toks);
        int best = -1;
        double bc = -2;
        for (int k = 0; k < st.tasks_trained; ++k) {
          const RowVector& p = st.prototypes[static_cast<std::size_t>(k)];
          double c = x.dot(p) / (x.norm() * p.norm());
          if (c > bc) {
            bc = c;
            best = st.task_ids[static_cast<std::size_t>(k)];
          }
        }
        CHECK(tid == best);
        // Given the identified task, inference equals per-task inference.
        CHECK(label == per_task_predict_til(st, toks, tid));
        if (tid == t.id) ++ok;
        ++total;
      }
    }
    CHECK(static_cast<double>(ok) / total >= 0.95);
  }
  SUBCASE("exact ties resolve to the lowest task id") {
    st.prototypes[1] = st.prototypes[0];
    TokenSeq toks = lab.toks(lab.tasks[1].test[0]);
    auto [tid, label] = infer_prototype_cil(st, toks);
    CHECK(tid == 1);
    (void)label;
  }
  SUBCASE("one-hot prototypes pick the axis the query lies closest to") {
    st.prototypes[0] = RowVector::Zero(lab.bc.model_dim);
    st.prototypes[1] = RowVector::Zero(lab.bc.model_dim);
    st.prototypes[0](0) = 1.0;
    st.prototypes[1](1) = 1.0;
    TokenSeq toks = lab.toks(lab.tasks[0].test[0]);
    RowVector x = pooled_embedding(*st.backbone, toks);
    auto [tid, label] = infer_prototype_cil(st, toks);
    CHECK(tid == (x(0) >= x(1) ? 1 : 2));
    (void)label;
  }
}

TEST_CASE("sequential PEFT forgets on the label-flipped fixture, per-task does not") {
  // Cold backbone: the shared PEFT parameters must carry the class
  // discrimination for interference to bite.
  SuiteConfig sc = quick_suite(2, 1.0, 1, /*interference=*/true);
  Lab lab = make_lab(sc, 1, PeftKind::prefix, 10, /*warm_epochs=*/0);

  SequentialState seq = lab.sequential(/*full=*/false);
  sequential_train_next(seq, lab.vocab, lab.tasks[0]);
  double before = test_accuracy(lab.tasks[0], lab.vocab, lab.bc.max_len,
                                [&](const TokenSeq& t) {
                                  return sequential_predict_til(seq, t, 1);
                                });
  sequential_train_next(seq, lab.vocab, lab.tasks[1]);
  double after = test_accuracy(lab.tasks[0], lab.vocab, lab.bc.max_len,
                               [&](const TokenSeq& t) {
                                 return sequential_predict_til(seq, t, 1);
                               });
  CHECK(before - after > 0.10);
}
