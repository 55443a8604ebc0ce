#include "mocl/data.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <set>
#include <sstream>
#include <unordered_map>
#include <unordered_set>

#include <json.hpp>

#include "mocl/rng.hpp"

namespace mocl {

using nlohmann::json;

void SuiteConfig::validate() const {
  if (n_tasks < 1) throw ConfigError("suite: n_tasks must be >= 1");
  if (classes_per_task < 2) throw ConfigError("suite: classes_per_task must be >= 2");
  if (train_per_task < classes_per_task || val_per_task < 1 || test_per_task < classes_per_task)
    throw ConfigError("suite: split sizes too small for the class count");
  if (relatedness < 0.0 || relatedness > 1.0)
    throw ConfigError("suite: relatedness must lie in [0, 1]");
  if (tokens_per_class < 2) throw ConfigError("suite: tokens_per_class must be >= 2");
  if (min_len < 1 || max_len < min_len) throw ConfigError("suite: bad example length range");

  int shared = static_cast<int>(std::lround(relatedness * tokens_per_class));
  int fresh_needed = classes_per_task * tokens_per_class +
                     (n_tasks - 1) * classes_per_task * (tokens_per_class - shared);
  if (fresh_needed > vocab_size)
    throw ConfigError("suite: vocab_size " + std::to_string(vocab_size) +
                      " too small; this configuration needs " + std::to_string(fresh_needed) +
                      " distinct tokens (n_tasks * classes * tokens_per_class minus sharing)");
}

std::vector<TaskSpec> gen_suite(const SuiteConfig& cfg) {
  cfg.validate();
  Rng root(cfg.seed);
  const int c = cfg.classes_per_task;
  const int m = cfg.tokens_per_class;
  const int shared = static_cast<int>(std::lround(cfg.relatedness * m));

  int next_token = 0;
  auto fresh_token = [&next_token] {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "w%04d", next_token++);
    return std::string(buf);
  };

  // pools[t][c]: the class-conditional token pool for task t.
  std::vector<std::vector<std::vector<std::string>>> pools;
  for (int t = 0; t < cfg.n_tasks; ++t) {
    std::vector<std::vector<std::string>> task_pools(static_cast<std::size_t>(c));
    for (int cl = 0; cl < c; ++cl) {
      std::vector<std::string>& pool = task_pools[static_cast<std::size_t>(cl)];
      if (t > 0 && shared > 0) {
        // Borrow from the previous task's aligned class; label-flipped
        // (reversed class index) when building an interference fixture.
        int src = cfg.interference ? (c - 1 - cl) : cl;
        std::vector<std::string> donor = pools.back()[static_cast<std::size_t>(src)];
        Rng pick = root.derive("pool", static_cast<std::uint64_t>(t),
                               static_cast<std::uint64_t>(cl));
        pick.shuffle(donor);
        pool.assign(donor.begin(), donor.begin() + shared);
      }
      while (static_cast<int>(pool.size()) < m) pool.push_back(fresh_token());
      std::sort(pool.begin(), pool.end());
    }
    pools.push_back(std::move(task_pools));
  }

  std::vector<TaskSpec> tasks;
  for (int t = 0; t < cfg.n_tasks; ++t) {
    TaskSpec task;
    task.id = t + 1;
    task.name = "task" + std::to_string(t + 1);
    for (int cl = 0; cl < c; ++cl)
      task.label_names.push_back(task.name + "_c" + std::to_string(cl));
    task.label_base = t * c;

    std::unordered_set<std::string> seen;
    auto fill_split = [&](std::vector<Example>& split, int count, const char* split_name) {
      Rng ex = root.derive("examples", static_cast<std::uint64_t>(t),
                           Rng::fnv1a(split_name));
      for (int i = 0; i < count; ++i) {
        int cl = i % c;
        const std::vector<std::string>& pool = pools[static_cast<std::size_t>(t)]
                                                    [static_cast<std::size_t>(cl)];
        std::string text;
        for (int attempt = 0;; ++attempt) {
          if (attempt >= 100)
            throw ConfigError("suite: cannot generate " + std::to_string(count) +
                              " distinct examples for " + task.name +
                              "; enlarge tokens_per_class or the length range");
          int len = cfg.min_len + ex.uniform_int(cfg.max_len - cfg.min_len + 1);
          std::ostringstream os;
          for (int w = 0; w < len; ++w) {
            if (w) os << ' ';
            os << pool[static_cast<std::size_t>(ex.uniform_int(static_cast<int>(pool.size())))];
          }
          text = os.str();
          if (seen.insert(text).second) break;
        }
        split.push_back({std::move(text), cl});
      }
    };
    fill_split(task.train, cfg.train_per_task, "train");
    fill_split(task.val, cfg.val_per_task, "val");
    fill_split(task.test, cfg.test_per_task, "test");
    tasks.push_back(std::move(task));
  }

  if (!cfg.order.empty()) return apply_order(std::move(tasks), cfg.order);
  return tasks;
}

std::vector<TaskSpec> apply_order(std::vector<TaskSpec> tasks, const std::vector<int>& order) {
  if (order.size() != tasks.size())
    throw ConfigError("apply_order: permutation has " + std::to_string(order.size()) +
                      " entries for " + std::to_string(tasks.size()) + " tasks");
  std::vector<bool> used(tasks.size(), false);
  std::vector<TaskSpec> out;
  out.reserve(tasks.size());
  for (int idx : order) {
    if (idx < 1 || idx > static_cast<int>(tasks.size()) || used[static_cast<std::size_t>(idx - 1)])
      throw ConfigError("apply_order: order is not a permutation of 1.." +
                        std::to_string(tasks.size()));
    used[static_cast<std::size_t>(idx - 1)] = true;
    out.push_back(std::move(tasks[static_cast<std::size_t>(idx - 1)]));
    out.back().id = static_cast<int>(out.size());
  }
  return out;
}

std::string to_jsonl(const std::vector<TaskSpec>& tasks) {
  std::ostringstream os;
  for (const TaskSpec& task : tasks) {
    auto dump_split = [&](const std::vector<Example>& split, const char* name) {
      for (const Example& e : split) {
        json j;
        j["text"] = e.text;
        j["label"] = task.label_names[static_cast<std::size_t>(e.label)];
        j["task"] = task.name;
        j["split"] = name;
        os << j.dump() << "\n";
      }
    };
    dump_split(task.train, "train");
    dump_split(task.val, "val");
    dump_split(task.test, "test");
  }
  return os.str();
}

void save_jsonl(const std::vector<TaskSpec>& tasks, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write corpus file " + path);
  out << to_jsonl(tasks);
}

std::vector<TaskSpec> load_jsonl(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read corpus file " + path);

  std::vector<TaskSpec> tasks;
  std::unordered_map<std::string, std::size_t> task_index;
  std::string line;
  long line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    json j;
    try {
      j = json::parse(line);
    } catch (const json::exception& e) {
      throw ParseError(path + ":" + std::to_string(line_no) + ": invalid JSON: " + e.what(),
                       line_no);
    }
    for (const char* key : {"text", "label", "task"}) {
      if (!j.contains(key) || !j[key].is_string())
        throw ParseError(path + ":" + std::to_string(line_no) + ": missing string field '" +
                         key + "'", line_no);
    }
    std::string task_name = j["task"].get<std::string>();
    if (task_name.empty())
      throw ParseError(path + ":" + std::to_string(line_no) + ": empty task name", line_no);

    auto [it, inserted] = task_index.emplace(task_name, tasks.size());
    if (inserted) {
      TaskSpec t;
      t.id = static_cast<int>(tasks.size()) + 1;
      t.name = task_name;
      tasks.push_back(std::move(t));
    }
    TaskSpec& task = tasks[it->second];

    std::string label_name = j["label"].get<std::string>();
    int label = -1;
    for (std::size_t i = 0; i < task.label_names.size(); ++i)
      if (task.label_names[i] == label_name) label = static_cast<int>(i);
    if (label < 0) {
      label = static_cast<int>(task.label_names.size());
      task.label_names.push_back(label_name);
    }

    std::string split;
    if (j.contains("split")) {
      if (!j["split"].is_string())
        throw ParseError(path + ":" + std::to_string(line_no) + ": 'split' must be a string",
                         line_no);
      split = j["split"].get<std::string>();
      if (split != "train" && split != "val" && split != "test")
        throw ParseError(path + ":" + std::to_string(line_no) + ": unknown split '" + split +
                         "'", line_no);
    } else {
      // Deterministic 80/10/10 by text hash.
      std::uint64_t bucket = Rng::fnv1a(j["text"].get<std::string>()) % 10;
      split = bucket < 8 ? "train" : (bucket == 8 ? "val" : "test");
    }
    Example e{j["text"].get<std::string>(), label};
    if (split == "train")
      task.train.push_back(std::move(e));
    else if (split == "val")
      task.val.push_back(std::move(e));
    else
      task.test.push_back(std::move(e));
  }

  // Global label offsetting in task order keeps label spaces disjoint.
  int base = 0;
  for (TaskSpec& t : tasks) {
    if (t.num_classes() < 2)
      throw ParseError(path + ": task '" + t.name + "' has fewer than two labels");
    t.label_base = base;
    base += t.num_classes();
  }
  if (tasks.empty()) throw ParseError(path + ": corpus contains no examples");
  return tasks;
}

std::vector<std::string> task_token_pool(const TaskSpec& task) {
  std::set<std::string> pool;
  auto scan = [&pool](const std::vector<Example>& split) {
    for (const Example& e : split) {
      std::istringstream is(e.text);
      std::string tok;
      while (is >> tok) pool.insert(tok);
    }
  };
  scan(task.train);
  scan(task.val);
  scan(task.test);
  return {pool.begin(), pool.end()};
}

}  // namespace mocl
