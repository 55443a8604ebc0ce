#include "mocl/learner.hpp"

namespace mocl {

namespace {

double cosine_double(const RowVector& a, const RowVector& b) {
  double na = a.norm(), nb = b.norm();
  if (na == 0.0 || nb == 0.0)
    throw DegenerateInputError("matching: zero-norm embedding or feature vector");
  return a.dot(b) / (na * nb);
}

// Per-example Eq-1 objective for the task at bank position pos: cross-entropy
// of the head under the alpha-composed bank, minus the weighted cosine
// between the bare pooled embedding and the task's feature vector.
Tensor example_objective(const LearnerState& st, const TokenSeq& toks, int label_local,
                         const RowVector& x_bare, int pos) {
  const Hyperparams& hp = st.hp;
  const int n = pos + 1;

  std::vector<const PeftModule*> modules;
  modules.reserve(static_cast<std::size_t>(n));
  for (int k = 0; k < n; ++k) modules.push_back(&st.bank[static_cast<std::size_t>(k)]);

  Tensor xc;
  const bool need_x = !hp.alpha_force_one || hp.cosine_weight != 0.0;
  if (need_x) xc = Tensor::constant(Matrix(x_bare));

  Tensor cos_n;
  std::vector<Tensor> alphas;
  alphas.reserve(static_cast<std::size_t>(n));
  if (hp.alpha_force_one) {
    for (int k = 0; k < n; ++k) alphas.push_back(Tensor::scalar(1.0));
  } else {
    for (int k = 0; k < n - 1; ++k)
      alphas.push_back(Tensor::scalar(
          cosine_double(x_bare, st.features[static_cast<std::size_t>(k)].value().row(0))));
    cos_n = cosine_similarity(xc, st.features[static_cast<std::size_t>(pos)]);
    alphas.push_back(hp.alpha_stop_grad ? Tensor::scalar(cos_n.item()) : cos_n);
    if (hp.alpha_softmax) {
      Tensor row = softmax_rows(hstack(alphas));
      for (int k = 0; k < n; ++k) alphas[static_cast<std::size_t>(k)] = cols(row, k, 1);
    }
  }

  ComposedModule composed = compose(modules, alphas);
  Tensor logits = classify(encode(*st.backbone, toks, &composed).pooled,
                           st.heads[static_cast<std::size_t>(pos)]);
  Tensor loss = cross_entropy(logits, label_local);
  if (hp.cosine_weight != 0.0) {
    if (!cos_n.defined())
      cos_n = cosine_similarity(xc, st.features[static_cast<std::size_t>(pos)]);
    loss = sub(loss, scale(cos_n, hp.cosine_weight));
  }
  return loss;
}

}  // namespace

int LearnerState::position_of(int task_id) const {
  for (std::size_t i = 0; i < task_ids.size(); ++i)
    if (task_ids[i] == task_id) return static_cast<int>(i);
  throw LookupError("unknown task id " + std::to_string(task_id));
}

LearnerState make_learner(std::shared_ptr<Backbone> backbone, PeftConfig peft, Hyperparams hp,
                          std::uint64_t seed) {
  if (!backbone) throw ConfigError("make_learner: null backbone");
  if (peft.model_dim != backbone->cfg.model_dim || peft.layers != backbone->cfg.layers ||
      peft.heads != backbone->cfg.heads)
    throw ConfigError("make_learner: PEFT dimensions do not match the backbone");
  LearnerState st;
  st.backbone = std::move(backbone);
  st.peft = peft;
  st.hp = hp;
  st.seed = seed;
  return st;
}

Vector matching_scores(const LearnerState& st, const RowVector& x, int n) {
  if (n < 1 || n > static_cast<int>(st.features.size()))
    throw LookupError("matching_scores: n out of range");
  Vector alpha(n);
  for (int k = 0; k < n; ++k)
    alpha(k) = cosine_double(x, st.features[static_cast<std::size_t>(k)].value().row(0));
  return alpha;
}

void train_task(LearnerState& st, const Vocab& vocab, const TaskSpec& task) {
  if (task.id != st.tasks_trained + 1)
    throw ProtocolError("train_task: expected task id " + std::to_string(st.tasks_trained + 1) +
                        ", got " + std::to_string(task.id));
  if (!st.backbone->frozen)
    throw ProtocolError("train_task: backbone must be frozen before the task sequence");
  st.hp.validate();

  const int d = st.backbone->cfg.model_dim;
  const int max_len = st.backbone->cfg.max_len;
  Rng root(st.seed);
  const std::uint64_t name_h = Rng::fnv1a(task.name);

  st.bank.push_back(init_module(st.peft.kind, task.id, st.peft, root.derive("module", name_h)));
  {
    Rng frng = root.derive("feature", name_h);
    Matrix v(1, d);
    for (int j = 0; j < d; ++j) v(0, j) = frng.normal(0.0, 0.02);
    st.features.push_back(Tensor::param(std::move(v)));
  }
  st.heads.push_back(make_head(task.id, d, task.num_classes(), root.derive("head", name_h)));
  st.task_ids.push_back(task.id);
  st.task_names.push_back(task.name);
  st.label_bases.push_back(task.label_base);
  st.class_counts.push_back(task.num_classes());

  const int pos = st.tasks_trained;

  std::vector<TokenSeq> train_toks, val_toks;
  std::vector<int> train_y, val_y;
  for (const Example& e : task.train) {
    train_toks.push_back(tokenize(vocab, e.text, max_len));
    train_y.push_back(e.label);
  }
  for (const Example& e : task.val) {
    val_toks.push_back(tokenize(vocab, e.text, max_len));
    val_y.push_back(e.label);
  }

  // The bare pooled embedding of an example is fixed once the backbone is
  // frozen, so it is cached across epochs.
  const bool need_x = !st.hp.alpha_force_one || st.hp.cosine_weight != 0.0;
  std::vector<RowVector> train_x(train_toks.size()), val_x(val_toks.size());
  if (need_x) {
    for (std::size_t i = 0; i < train_toks.size(); ++i)
      train_x[i] = pooled_embedding(*st.backbone, train_toks[i]);
    for (std::size_t i = 0; i < val_toks.size(); ++i)
      val_x[i] = pooled_embedding(*st.backbone, val_toks[i]);
  }

  std::vector<Tensor> params = st.bank[static_cast<std::size_t>(pos)].parameters();
  params.push_back(st.features[static_cast<std::size_t>(pos)]);
  for (const Tensor& p : st.heads[static_cast<std::size_t>(pos)].parameters())
    params.push_back(p);

  auto train_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return example_objective(st, train_toks[k], train_y[k], train_x[k], pos);
  };
  auto val_loss = [&](int i) {
    std::size_t k = static_cast<std::size_t>(i);
    return example_objective(st, val_toks[k], val_y[k], val_x[k], pos).item();
  };
  run_train_loop(st.hp, params, static_cast<int>(train_toks.size()), train_loss,
                 static_cast<int>(val_toks.size()), val_loss, [&](int epoch) {
                   return root.derive("shuffle", name_h, static_cast<std::uint64_t>(epoch));
                 });

  // Freeze the finished task's parameters; later training must not move them.
  st.bank[static_cast<std::size_t>(pos)].set_frozen(true);
  st.features[static_cast<std::size_t>(pos)].set_requires_grad(false);
  for (Tensor p : st.heads[static_cast<std::size_t>(pos)].parameters())
    p.set_requires_grad(false);
  st.tasks_trained = pos + 1;
}

int infer_til(const LearnerState& st, const TokenSeq& toks, int task_id) {
  int pos = st.position_of(task_id);
  NoGradScope no_grad;
  ComposedModule cm =
      compose({&st.bank[static_cast<std::size_t>(pos)]}, Vector::Ones(1));
  Tensor logits = classify(encode(*st.backbone, toks, &cm).pooled,
                           st.heads[static_cast<std::size_t>(pos)]);
  return st.label_bases[static_cast<std::size_t>(pos)] + argmax_row(logits.value().row(0));
}

std::pair<int, int> infer_cil(const LearnerState& st, const TokenSeq& toks) {
  if (st.tasks_trained < 1) throw LookupError("infer_cil: no trained tasks");
  NoGradScope no_grad;
  RowVector x = pooled_embedding(*st.backbone, toks);
  Vector alpha = matching_scores(st, x, st.tasks_trained);

  int best = 0;
  for (int k = 1; k < alpha.size(); ++k)
    if (alpha(k) > alpha(best)) best = k;

  std::vector<const PeftModule*> modules;
  for (int k = 0; k < st.tasks_trained; ++k)
    modules.push_back(&st.bank[static_cast<std::size_t>(k)]);
  ComposedModule cm = compose(modules, alpha);
  Tensor logits = classify(encode(*st.backbone, toks, &cm).pooled,
                           st.heads[static_cast<std::size_t>(best)]);
  int label = st.label_bases[static_cast<std::size_t>(best)] + argmax_row(logits.value().row(0));
  return {st.task_ids[static_cast<std::size_t>(best)], label};
}

double mocl_objective(const LearnerState& st, const Vocab& vocab,
                      const std::vector<Example>& examples, int pos) {
  if (pos < 0 || pos >= static_cast<int>(st.bank.size()))
    throw LookupError("mocl_objective: bank position out of range");
  if (examples.empty()) throw DegenerateInputError("mocl_objective: empty example list");
  NoGradScope no_grad;
  double total = 0.0;
  for (const Example& e : examples) {
    TokenSeq toks = tokenize(vocab, e.text, st.backbone->cfg.max_len);
    RowVector x = pooled_embedding(*st.backbone, toks);
    total += example_objective(st, toks, e.label, x, pos).item();
  }
  return total / static_cast<double>(examples.size());
}

}  // namespace mocl
