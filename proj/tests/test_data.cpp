#include <algorithm>
#include <filesystem>
#include <fstream>
#include <array>
#include <map>
#include <set>
#include <sstream>

#include "doctest.h"
#include "mocl/data.hpp"

using namespace mocl;

namespace {

SuiteConfig small_cfg(double rho = 0.0, int tasks = 3) {
  SuiteConfig c;
  c.n_tasks = tasks;
  c.classes_per_task = 2;
  c.train_per_task = 20;
  c.val_per_task = 6;
  c.test_per_task = 10;
  c.vocab_size = 256;
  c.relatedness = rho;
  c.tokens_per_class = 8;
  c.min_len = 4;
  c.max_len = 8;
  c.seed = 1;
  return c;
}

double consecutive_overlap(const TaskSpec& a, const TaskSpec& b) {
  std::vector<std::string> pa = task_token_pool(a), pb = task_token_pool(b);
  std::set<std::string> sa(pa.begin(), pa.end());
  int shared = 0;
  for (const std::string& t : pb)
    if (sa.count(t)) ++shared;
  return static_cast<double>(shared) / static_cast<double>(pb.size());
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("gen_suite is byte-deterministic for a fixed seed") {
  std::vector<TaskSpec> a = gen_suite(small_cfg(0.5));
  std::vector<TaskSpec> b = gen_suite(small_cfg(0.5));
  CHECK(to_jsonl(a) == to_jsonl(b));

  SuiteConfig other = small_cfg(0.5);
  other.seed = 2;
  CHECK(to_jsonl(a) != to_jsonl(gen_suite(other)));
}

TEST_CASE("rho = 0 gives pairwise-disjoint task vocabularies") {
  std::vector<TaskSpec> tasks = gen_suite(small_cfg(0.0, 4));
  for (std::size_t i = 0; i < tasks.size(); ++i) {
    for (std::size_t j = i + 1; j < tasks.size(); ++j) {
      std::vector<std::string> pi = task_token_pool(tasks[i]);
      std::set<std::string> si(pi.begin(), pi.end());
      for (const std::string& t : task_token_pool(tasks[j])) CHECK(!si.count(t));
    }
  }
}

TEST_CASE("rho = 1 makes later pools subsets and transfer possible") {
  SuiteConfig cfg = small_cfg(1.0, 2);
  std::vector<TaskSpec> tasks = gen_suite(cfg);
  std::vector<std::string> p1 = task_token_pool(tasks[0]);
  std::set<std::string> s1(p1.begin(), p1.end());
  for (const std::string& t : task_token_pool(tasks[1])) CHECK(s1.count(t));

  // Majority-token oracle trained on task 1 transfers above chance to task 2.
  std::map<std::string, std::array<int, 2>> votes;
  for (const Example& e : tasks[0].train) {
    std::istringstream is(e.text);
    std::string tok;
    while (is >> tok) votes[tok][static_cast<std::size_t>(e.label)]++;
  }
  int correct = 0;
  for (const Example& e : tasks[1].test) {
    std::istringstream is(e.text);
    std::string tok;
    double score = 0;
    while (is >> tok) {
      auto it = votes.find(tok);
      if (it != votes.end()) score += it->second[1] - it->second[0];
    }
    int pred = score > 0 ? 1 : 0;
    if (pred == e.label) ++correct;
  }
  double acc = static_cast<double>(correct) / tasks[1].test.size();
  CHECK(acc > 0.5);  // above 1/C chance
}

TEST_CASE("interference flag flips the shared class pools") {
  SuiteConfig cfg = small_cfg(1.0, 2);
  cfg.interference = true;
  std::vector<TaskSpec> tasks = gen_suite(cfg);

  // Majority-token oracle trained on task 1 now transfers BELOW chance.
  std::map<std::string, std::array<int, 2>> votes;
  for (const Example& e : tasks[0].train) {
    std::istringstream is(e.text);
    std::string tok;
    while (is >> tok) votes[tok][static_cast<std::size_t>(e.label)]++;
  }
  int correct = 0;
  for (const Example& e : tasks[1].test) {
    std::istringstream is(e.text);
    std::string tok;
    double score = 0;
    while (is >> tok) {
      auto it = votes.find(tok);
      if (it != votes.end()) score += it->second[1] - it->second[0];
    }
    int pred = score > 0 ? 1 : 0;
    if (pred == e.label) ++correct;
  }
  double acc = static_cast<double>(correct) / tasks[1].test.size();
  CHECK(acc < 0.5);
}

TEST_CASE("global label ids never collide across tasks") {
  std::vector<TaskSpec> tasks = gen_suite(small_cfg(0.5, 4));
  std::set<int> seen;
  for (const TaskSpec& t : tasks)
    for (int c = 0; c < t.num_classes(); ++c) CHECK(seen.insert(t.global_label(c)).second);
}

TEST_CASE("splits are disjoint within a task") {
  std::vector<TaskSpec> tasks = gen_suite(small_cfg(0.5));
  for (const TaskSpec& t : tasks) {
    std::set<std::string> texts;
    for (const auto* split : {&t.train, &t.val, &t.test})
      for (const Example& e : *split) CHECK(texts.insert(e.text).second);
  }
}

TEST_CASE("measured overlap is nondecreasing in rho") {
  double prev = -1.0;
  for (double rho : {0.0, 0.5, 1.0}) {
    std::vector<TaskSpec> tasks = gen_suite(small_cfg(rho, 2));
    double ov = consecutive_overlap(tasks[0], tasks[1]);
    CHECK(ov >= prev);
    prev = ov;
  }
  CHECK(prev == 1.0);
}

TEST_CASE("apply_order permutes and reindexes") {
  std::vector<TaskSpec> tasks = gen_suite(small_cfg(0.0, 3));
  std::vector<std::string> names = {tasks[0].name, tasks[1].name, tasks[2].name};

  std::vector<TaskSpec> same = apply_order(tasks, {1, 2, 3});
  CHECK(to_jsonl(same) == to_jsonl(tasks));

  std::vector<TaskSpec> perm = apply_order(tasks, {3, 1, 2});
  CHECK(perm[0].name == names[2]);
  CHECK(perm[0].id == 1);
  CHECK(perm[1].id == 2);
  CHECK(perm[0].label_base == tasks[2].label_base);  // data unchanged

  std::vector<TaskSpec> back = apply_order(perm, {2, 3, 1});
  CHECK(to_jsonl(back) == to_jsonl(tasks));

  CHECK_THROWS_AS(apply_order(tasks, {1, 2}), ConfigError);
  CHECK_THROWS_AS(apply_order(tasks, {1, 1, 2}), ConfigError);
  CHECK_THROWS_AS(apply_order(tasks, {0, 1, 2}), ConfigError);
}

TEST_CASE("jsonl round trip and parse errors") {
  std::string path = temp_path("mocl_data_test.jsonl");

  SUBCASE("two lines, one task, two labels") {
    std::ofstream out(path);
    out << R"({"text":"x y","label":"pos","task":"t","split":"train"})" << "\n";
    out << R"({"text":"z w","label":"neg","task":"t","split":"test"})" << "\n";
    out.close();
    std::vector<TaskSpec> tasks = load_jsonl(path);
    REQUIRE(tasks.size() == 1);
    CHECK(tasks[0].num_classes() == 2);
    CHECK(tasks[0].train.size() == 1);
    CHECK(tasks[0].test.size() == 1);
  }
  SUBCASE("missing label names the line") {
    std::ofstream out(path);
    out << R"({"text":"x","label":"a","task":"t"})" << "\n";
    out << R"({"text":"y","task":"t"})" << "\n";
    out.close();
    try {
      load_jsonl(path);
      FAIL("expected ParseError");
    } catch (const ParseError& e) {
      CHECK(e.line == 2);
      CHECK(std::string(e.what()).find("label") != std::string::npos);
    }
  }
  SUBCASE("empty task name is rejected") {
    std::ofstream out(path);
    out << R"({"text":"x","label":"a","task":""})" << "\n";
    out.close();
    CHECK_THROWS_AS(load_jsonl(path), ParseError);
  }
  SUBCASE("hash-based default split is deterministic") {
    {
      std::ofstream out(path);
      for (int i = 0; i < 60; ++i)
        out << R"({"text":"w)" << i << R"( w)" << (i % 7) << R"(","label":"l)" << (i % 2)
            << R"(","task":"t"})" << "\n";
    }
    std::vector<TaskSpec> a = load_jsonl(path);
    std::vector<TaskSpec> b = load_jsonl(path);
    CHECK(to_jsonl(a) == to_jsonl(b));
    CHECK(a[0].train.size() + a[0].val.size() + a[0].test.size() == 60);
    CHECK(a[0].train.size() > a[0].test.size());
  }
  SUBCASE("generated suites survive a save/load round trip") {
    std::vector<TaskSpec> tasks = gen_suite(small_cfg(0.5));
    save_jsonl(tasks, path);
    std::vector<TaskSpec> loaded = load_jsonl(path);
    CHECK(to_jsonl(loaded) == to_jsonl(tasks));
  }
  std::filesystem::remove(path);
}

TEST_CASE("infeasible suite configurations are explained") {
  SuiteConfig cfg = small_cfg(0.0, 8);
  cfg.vocab_size = 10;
  try {
    gen_suite(cfg);
    FAIL("expected ConfigError");
  } catch (const ConfigError& e) {
    CHECK(std::string(e.what()).find("vocab_size") != std::string::npos);
  }
}
