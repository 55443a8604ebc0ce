#include "mocl/training.hpp"

#include <algorithm>
#include <cctype>
#include <limits>
#include <numeric>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

namespace mocl {

void Hyperparams::validate() const {
  if (lr < 0.0) throw ConfigError("train: lr must be >= 0");
  if (batch_size < 1) throw ConfigError("train: batch_size must be >= 1");
  if (max_epochs < 0 || max_epochs > 40)
    throw ConfigError("train: epochs must lie in [0, 40]");
  if (patience < 1) throw ConfigError("train: patience must be >= 1");
  if (cosine_weight < 0.0) throw ConfigError("train: cosine_weight must be >= 0");
}

long run_train_loop(const Hyperparams& hp, std::vector<Tensor> params, int n_train,
                    const std::function<Tensor(int)>& train_loss, int n_val,
                    const std::function<double(int)>& val_loss,
                    const std::function<Rng(int)>& epoch_stream) {
  hp.validate();
  AdamW opt(params, hp.lr, hp.beta1, hp.beta2, hp.adam_eps, hp.weight_decay);

  double best_val = std::numeric_limits<double>::infinity();
  std::vector<Matrix> best_snapshot;
  int patience_left = hp.patience;
  long global_step = 0;

  std::vector<int> order(static_cast<std::size_t>(n_train));
  std::iota(order.begin(), order.end(), 0);

  for (int epoch = 0; epoch < hp.max_epochs; ++epoch) {
    Rng shuffle_rng = epoch_stream(epoch);
    shuffle_rng.shuffle(order);

    for (int start = 0; start < n_train; start += hp.batch_size) {
      int bs = std::min(hp.batch_size, n_train - start);
      Tape tape;
      Tensor loss;
      try {
        TapeScope scope(tape);
        for (const Tensor& p : params) tape.watch(p);
        Tensor total = train_loss(order[static_cast<std::size_t>(start)]);
        for (int i = 1; i < bs; ++i)
          total = add(total, train_loss(order[static_cast<std::size_t>(start + i)]));
        loss = scale(total, 1.0 / bs);
        if (!std::isfinite(loss.item()))
          throw NumericError("train_loop: non-finite loss");
        tape.backward(loss);
      } catch (const NumericError& e) {
        throw DivergenceError(std::string("training diverged at step ") +
                                  std::to_string(global_step) + ": " + e.what(),
                              global_step);
      }
      opt.step();
      opt.zero_grad();
      ++global_step;
    }

    if (n_val > 0) {
      double val = 0.0;
      {
        NoGradScope no_grad;
        for (int i = 0; i < n_val; ++i) val += val_loss(i);
      }
      val /= n_val;
      if (val < best_val) {
        best_val = val;
        best_snapshot.clear();
        for (const Tensor& p : params) best_snapshot.push_back(p.value());
        patience_left = hp.patience;
      } else if (--patience_left <= 0) {
        break;
      }
    }
  }

  if (!best_snapshot.empty())
    for (std::size_t i = 0; i < params.size(); ++i)
      params[i].mutable_value() = best_snapshot[i];
  return global_step;
}

Vocab build_vocab(const std::vector<TaskSpec>& tasks, int max_size) {
  if (max_size < 4) throw ConfigError("build_vocab: max_size leaves no room for tokens");

  std::vector<const TaskSpec*> by_name;
  for (const TaskSpec& t : tasks) by_name.push_back(&t);
  std::sort(by_name.begin(), by_name.end(),
            [](const TaskSpec* a, const TaskSpec* b) { return a->name < b->name; });

  struct Stat {
    long count = 0;
    long first = 0;
  };
  std::unordered_map<std::string, Stat> stats;
  std::vector<std::string> appearance;
  long at = 0;
  for (const TaskSpec* t : by_name) {
    for (const Example& e : t->train) {
      std::istringstream is(e.text);
      std::string tok;
      while (is >> tok) {
        for (char& c : tok) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
        auto [it, inserted] = stats.emplace(tok, Stat{0, at});
        if (inserted) appearance.push_back(tok);
        ++it->second.count;
        ++at;
      }
    }
  }

  Vocab vocab;
  const std::size_t budget = static_cast<std::size_t>(max_size - 3);
  if (appearance.size() <= budget) {
    for (const std::string& tok : appearance) vocab.add(tok);
    return vocab;
  }
  std::vector<std::string> ranked = appearance;
  std::sort(ranked.begin(), ranked.end(), [&](const std::string& a, const std::string& b) {
    const Stat& sa = stats[a];
    const Stat& sb = stats[b];
    if (sa.count != sb.count) return sa.count > sb.count;
    return sa.first < sb.first;
  });
  std::unordered_set<std::string> keep(ranked.begin(),
                                       ranked.begin() + static_cast<long>(budget));
  for (const std::string& tok : appearance)
    if (keep.count(tok)) vocab.add(tok);
  return vocab;
}

void warm_train_backbone(Backbone& bb, const Vocab& vocab,
                         const std::vector<TaskSpec>& tasks, const WarmupConfig& cfg,
                         std::uint64_t seed) {
  if (bb.frozen) throw ProtocolError("warm_train_backbone: backbone already frozen");
  if (cfg.enabled && cfg.epochs > 0) {
    int total_classes = 0;
    for (const TaskSpec& t : tasks)
      total_classes = std::max(total_classes, t.label_base + t.num_classes());

    // Mixture in task-name order, so the warmed backbone does not depend on
    // the training sequence order.
    std::vector<const TaskSpec*> by_name;
    for (const TaskSpec& t : tasks) by_name.push_back(&t);
    std::sort(by_name.begin(), by_name.end(),
              [](const TaskSpec* a, const TaskSpec* b) { return a->name < b->name; });

    std::vector<TokenSeq> toks;
    std::vector<int> labels;      // global class ids
    std::vector<int> task_index;  // position in the by-name ordering
    for (std::size_t ti = 0; ti < by_name.size(); ++ti) {
      for (const Example& e : by_name[ti]->train) {
        toks.push_back(tokenize(vocab, e.text, bb.cfg.max_len));
        labels.push_back(by_name[ti]->global_label(e.label));
        task_index.push_back(static_cast<int>(ti));
      }
    }

    Rng root(seed);
    Head class_head =
        make_head(0, bb.cfg.model_dim, total_classes, root.derive("warmup-head"));
    std::vector<Tensor> params = bb.parameters();
    for (const Tensor& p : class_head.parameters()) params.push_back(p);

    // A second throwaway head predicts the task (domain), pulling each task's
    // pooled embeddings together. Feature vectors and prototypes match
    // against exactly these embeddings later.
    const bool with_task_head = tasks.size() >= 2;
    Head task_head;
    if (with_task_head) {
      task_head = make_head(0, bb.cfg.model_dim, static_cast<int>(tasks.size()),
                            root.derive("warmup-task-head"));
      for (const Tensor& p : task_head.parameters()) params.push_back(p);
    }

    Hyperparams hp;
    hp.lr = cfg.lr;
    hp.batch_size = cfg.batch_size;
    hp.max_epochs = cfg.epochs;
    hp.patience = cfg.epochs;  // no early stop; run the configured epochs
    auto loss = [&](int i) {
      std::size_t k = static_cast<std::size_t>(i);
      Tensor pooled = encode(bb, toks[k]).pooled;
      Tensor out = cross_entropy(classify(pooled, class_head), labels[k]);
      if (with_task_head)
        out = add(out, scale(cross_entropy(classify(pooled, task_head), task_index[k]),
                             cfg.task_loss_weight));
      return out;
    };
    run_train_loop(hp, params, static_cast<int>(toks.size()), loss, 0, nullptr,
                   [&root](int epoch) {
                     return root.derive("warmup-shuffle", static_cast<std::uint64_t>(epoch));
                   });
  }
  bb.set_frozen(true);
}

}  // namespace mocl
