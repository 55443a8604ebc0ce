#include "mocl/baselines.hpp"

#include <algorithm>

namespace mocl {

std::string to_string(Method m) {
  switch (m) {
    case Method::mocl: return "mocl";
    case Method::seq_ft_full: return "seq_ft_full";
    case Method::seq_ft_peft: return "seq_ft_peft";
    case Method::per_task: return "per_task";
    case Method::progressive: return "progressive";
    case Method::prototype_cil: return "prototype_cil";
  }
  throw ConfigError("unknown method enum value");
}

Method method_from_string(const std::string& s) {
  if (s == "mocl") return Method::mocl;
  if (s == "seq_ft_full") return Method::seq_ft_full;
  if (s == "seq_ft_peft") return Method::seq_ft_peft;
  if (s == "per_task") return Method::per_task;
  if (s == "progressive") return Method::progressive;
  if (s == "prototype_cil") return Method::prototype_cil;
  throw ConfigError("unknown method '" + s +
                    "' (expected mocl | seq_ft_full | seq_ft_peft | per_task | progressive | "
                    "prototype_cil)");
}

namespace {

int find_position(const std::vector<int>& ids, int task_id) {
  for (std::size_t i = 0; i < ids.size(); ++i)
    if (ids[i] == task_id) return static_cast<int>(i);
  throw LookupError("unknown task id " + std::to_string(task_id));
}

void check_sequential_id(int got, int expected) {
  if (got != expected)
    throw ProtocolError("baseline training: expected task id " + std::to_string(expected) +
                        ", got " + std::to_string(got));
}

struct Tokenized {
  std::vector<TokenSeq> train_toks, val_toks;
  std::vector<int> train_y, val_y;  // local class indices
};

Tokenized tokenize_task(const Vocab& vocab, const TaskSpec& task, int max_len) {
  Tokenized t;
  for (const Example& e : task.train) {
    t.train_toks.push_back(tokenize(vocab, e.text, max_len));
    t.train_y.push_back(e.label);
  }
  for (const Example& e : task.val) {
    t.val_toks.push_back(tokenize(vocab, e.text, max_len));
    t.val_y.push_back(e.label);
  }
  return t;
}

void register_task(std::vector<int>& ids, std::vector<std::string>& names,
                   std::vector<int>& bases, std::vector<int>& counts, const TaskSpec& task) {
  ids.push_back(task.id);
  names.push_back(task.name);
  bases.push_back(task.label_base);
  counts.push_back(task.num_classes());
}

}  // namespace

// ---------------------------------------------------------------------------
// Sequential fine-tuning

int SequentialState::position_of(int task_id) const { return find_position(task_ids, task_id); }

SequentialState make_sequential(std::shared_ptr<Backbone> backbone,
                                const std::vector<TaskSpec>& all_tasks, bool full,
                                PeftConfig peft, Hyperparams hp, std::uint64_t seed) {
  if (!backbone) throw ConfigError("make_sequential: null backbone");
  if (all_tasks.empty()) throw ConfigError("make_sequential: empty task list");
  SequentialState st;
  st.backbone = std::move(backbone);
  st.full = full;
  st.peft = peft;
  st.hp = hp;
  st.seed = seed;
  for (const TaskSpec& t : all_tasks)
    st.total_classes = std::max(st.total_classes, t.label_base + t.num_classes());

  Rng root(seed);
  const std::uint64_t first_h = Rng::fnv1a(all_tasks.front().name);
  st.head = make_head(0, st.backbone->cfg.model_dim, st.total_classes,
                      root.derive("head", first_h));
  if (full) {
    st.backbone->set_frozen(false);
  } else {
    st.module = init_module(peft.kind, 0, peft, root.derive("module", first_h));
  }
  return st;
}

void sequential_train_next(SequentialState& st, const Vocab& vocab, const TaskSpec& task) {
  check_sequential_id(task.id, st.tasks_trained + 1);
  register_task(st.task_ids, st.task_names, st.label_bases, st.class_counts, task);

  Tokenized data = tokenize_task(vocab, task, st.backbone->cfg.max_len);
  std::vector<Tensor> params;
  if (st.full) {
    params = st.backbone->parameters();
  } else {
    params = st.module->parameters();
  }
  for (const Tensor& p : st.head.parameters()) params.push_back(p);

  auto loss_of = [&](const TokenSeq& toks, int local_label) {
    ComposedModule cm;
    const ComposedModule* mp = nullptr;
    if (st.module) {
      cm = compose({&*st.module}, Vector::Ones(1));
      mp = &cm;
    }
    Tensor logits = classify(encode(*st.backbone, toks, mp).pooled, st.head);
    return cross_entropy(logits, task.global_label(local_label));
  };
  auto train_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return loss_of(data.train_toks[k], data.train_y[k]);
  };
  auto val_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return loss_of(data.val_toks[k], data.val_y[k]).item();
  };

  Rng root(st.seed);
  const std::uint64_t name_h = Rng::fnv1a(task.name);
  run_train_loop(st.hp, params, static_cast<int>(data.train_toks.size()), train_loss,
                 static_cast<int>(data.val_toks.size()), val_loss, [&](int epoch) {
                   return root.derive("shuffle", name_h, static_cast<std::uint64_t>(epoch));
                 });
  ++st.tasks_trained;
}

void train_sequential(SequentialState& st, const Vocab& vocab,
                      const std::vector<TaskSpec>& tasks) {
  for (const TaskSpec& t : tasks) sequential_train_next(st, vocab, t);
}

int sequential_predict_til(const SequentialState& st, const TokenSeq& toks, int task_id) {
  (void)st.position_of(task_id);  // validate the id; scoring happens upstream
  NoGradScope no_grad;
  ComposedModule cm;
  const ComposedModule* mp = nullptr;
  if (st.module) {
    cm = compose({&*st.module}, Vector::Ones(1));
    mp = &cm;
  }
  RowVector logits =
      classify(encode(*st.backbone, toks, mp).pooled, st.head).value().row(0);
  return argmax_row(logits);
}

// ---------------------------------------------------------------------------
// Per-task fine-tuning (+ nearest-prototype CIL)

int PerTaskState::position_of(int task_id) const { return find_position(task_ids, task_id); }

PerTaskState make_per_task(std::shared_ptr<Backbone> backbone, PeftConfig peft, Hyperparams hp,
                           std::uint64_t seed) {
  if (!backbone) throw ConfigError("make_per_task: null backbone");
  PerTaskState st;
  st.backbone = std::move(backbone);
  st.peft = peft;
  st.hp = hp;
  st.seed = seed;
  return st;
}

void per_task_train_next(PerTaskState& st, const Vocab& vocab, const TaskSpec& task) {
  if (!st.backbone->frozen)
    throw ProtocolError("per_task: backbone must be frozen");
  register_task(st.task_ids, st.task_names, st.label_bases, st.class_counts, task);

  Rng root(st.seed);
  const std::uint64_t name_h = Rng::fnv1a(task.name);
  st.modules.push_back(init_module(st.peft.kind, task.id, st.peft, root.derive("module", name_h)));
  st.heads.push_back(make_head(task.id, st.backbone->cfg.model_dim, task.num_classes(),
                               root.derive("head", name_h)));
  PeftModule& module = st.modules.back();
  Head& head = st.heads.back();

  Tokenized data = tokenize_task(vocab, task, st.backbone->cfg.max_len);

  // Prototype: mean bare pooled embedding over the training split.
  RowVector proto = RowVector::Zero(st.backbone->cfg.model_dim);
  for (const TokenSeq& toks : data.train_toks) proto += pooled_embedding(*st.backbone, toks);
  proto /= static_cast<double>(data.train_toks.size());
  st.prototypes.push_back(std::move(proto));

  std::vector<Tensor> params = module.parameters();
  for (const Tensor& p : head.parameters()) params.push_back(p);

  auto loss_of = [&](const TokenSeq& toks, int label) {
    ComposedModule cm = compose({&module}, Vector::Ones(1));
    return cross_entropy(classify(encode(*st.backbone, toks, &cm).pooled, head), label);
  };
  auto train_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return loss_of(data.train_toks[k], data.train_y[k]);
  };
  auto val_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return loss_of(data.val_toks[k], data.val_y[k]).item();
  };
  run_train_loop(st.hp, params, static_cast<int>(data.train_toks.size()), train_loss,
                 static_cast<int>(data.val_toks.size()), val_loss, [&](int epoch) {
                   return root.derive("shuffle", name_h, static_cast<std::uint64_t>(epoch));
                 });

  module.set_frozen(true);
  for (Tensor p : head.parameters()) p.set_requires_grad(false);
  ++st.tasks_trained;
}

void train_per_task(PerTaskState& st, const Vocab& vocab, const std::vector<TaskSpec>& tasks) {
  for (const TaskSpec& t : tasks) per_task_train_next(st, vocab, t);
}

int per_task_predict_til(const PerTaskState& st, const TokenSeq& toks, int task_id) {
  int pos = st.position_of(task_id);
  NoGradScope no_grad;
  ComposedModule cm = compose({&st.modules[static_cast<std::size_t>(pos)]}, Vector::Ones(1));
  RowVector logits = classify(encode(*st.backbone, toks, &cm).pooled,
                              st.heads[static_cast<std::size_t>(pos)])
                         .value()
                         .row(0);
  return st.label_bases[static_cast<std::size_t>(pos)] + argmax_row(logits);
}

std::pair<int, int> infer_prototype_cil(const PerTaskState& st, const TokenSeq& toks) {
  if (st.tasks_trained < 1) throw LookupError("infer_prototype_cil: no trained tasks");
  NoGradScope no_grad;
  RowVector x = pooled_embedding(*st.backbone, toks);
  double nx = x.norm();
  if (nx == 0.0) throw DegenerateInputError("infer_prototype_cil: zero pooled embedding");

  int best = 0;
  double best_cos = -2.0;
  for (int k = 0; k < st.tasks_trained; ++k) {
    const RowVector& p = st.prototypes[static_cast<std::size_t>(k)];
    double np = p.norm();
    if (np == 0.0) throw DegenerateInputError("infer_prototype_cil: zero prototype");
    double c = x.dot(p) / (nx * np);
    if (c > best_cos) {  // strict: ties keep the lowest task id
      best_cos = c;
      best = k;
    }
  }
  int task_id = st.task_ids[static_cast<std::size_t>(best)];
  return {task_id, per_task_predict_til(st, toks, task_id)};
}

// ---------------------------------------------------------------------------
// Progressive prefix concatenation

int ProgressiveState::position_of(int task_id) const { return find_position(task_ids, task_id); }

ProgressiveState make_progressive(std::shared_ptr<Backbone> backbone, PeftConfig peft,
                                  Hyperparams hp, std::uint64_t seed) {
  if (!backbone) throw ConfigError("make_progressive: null backbone");
  if (peft.kind != PeftKind::prefix)
    throw UnsupportedKindError("progressive: only applicable with prefix-tuning modules");
  ProgressiveState st;
  st.backbone = std::move(backbone);
  st.peft = peft;
  st.hp = hp;
  st.seed = seed;
  return st;
}

namespace {

ComposedModule progressive_stack(const ProgressiveState& st, int upto) {
  std::vector<const PeftModule*> mods;
  for (int k = 0; k <= upto; ++k) mods.push_back(&st.modules[static_cast<std::size_t>(k)]);
  return concat_prefixes(mods);
}

}  // namespace

void progressive_train_next(ProgressiveState& st, const Vocab& vocab, const TaskSpec& task) {
  check_sequential_id(task.id, st.tasks_trained + 1);
  if (!st.backbone->frozen)
    throw ProtocolError("progressive: backbone must be frozen");
  register_task(st.task_ids, st.task_names, st.label_bases, st.class_counts, task);

  Rng root(st.seed);
  const std::uint64_t name_h = Rng::fnv1a(task.name);
  st.modules.push_back(init_module(st.peft.kind, task.id, st.peft, root.derive("module", name_h)));
  st.heads.push_back(make_head(task.id, st.backbone->cfg.model_dim, task.num_classes(),
                               root.derive("head", name_h)));
  Head& head = st.heads.back();
  const int pos = st.tasks_trained;

  Tokenized data = tokenize_task(vocab, task, st.backbone->cfg.max_len);
  std::vector<Tensor> params = st.modules.back().parameters();
  for (const Tensor& p : head.parameters()) params.push_back(p);

  auto loss_of = [&](const TokenSeq& toks, int label) {
    ComposedModule cm = progressive_stack(st, pos);
    return cross_entropy(classify(encode(*st.backbone, toks, &cm).pooled, head), label);
  };
  auto train_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return loss_of(data.train_toks[k], data.train_y[k]);
  };
  auto val_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return loss_of(data.val_toks[k], data.val_y[k]).item();
  };
  run_train_loop(st.hp, params, static_cast<int>(data.train_toks.size()), train_loss,
                 static_cast<int>(data.val_toks.size()), val_loss, [&](int epoch) {
                   return root.derive("shuffle", name_h, static_cast<std::uint64_t>(epoch));
                 });

  st.modules.back().set_frozen(true);
  for (Tensor p : head.parameters()) p.set_requires_grad(false);
  ++st.tasks_trained;
}

void train_progressive(ProgressiveState& st, const Vocab& vocab,
                       const std::vector<TaskSpec>& tasks) {
  for (const TaskSpec& t : tasks) progressive_train_next(st, vocab, t);
}

int progressive_predict_til(const ProgressiveState& st, const TokenSeq& toks, int task_id) {
  int pos = st.position_of(task_id);
  NoGradScope no_grad;
  ComposedModule cm = progressive_stack(st, pos);
  RowVector logits = classify(encode(*st.backbone, toks, &cm).pooled,
                              st.heads[static_cast<std::size_t>(pos)])
                         .value()
                         .row(0);
  return st.label_bases[static_cast<std::size_t>(pos)] + argmax_row(logits);
}

}  // namespace mocl
