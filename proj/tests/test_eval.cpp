#include <cmath>
#include <filesystem>
#include <fstream>

#include "doctest.h"
#include "fixture.hpp"

using namespace mocl;
using testfx::Lab;
using testfx::make_lab;
using testfx::quick_suite;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::ostringstream os;
  os << in.rdbuf();
  return os.str();
}

std::string temp_path(const char* name) {
  return (std::filesystem::temp_directory_path() / name).string();
}

}  // namespace

TEST_CASE("fwt matches hand calculations") {
  SUBCASE("diagonal equal to references gives zero") {
    AccuracyMatrix m = AccuracyMatrix::empty({"a", "b", "c"});
    m.a(0, 0) = 0.9;
    m.a(1, 1) = 0.7;
    m.a(2, 2) = 0.6;
    m.reference(1) = 0.7;
    m.reference(2) = 0.6;
    CHECK(std::abs(fwt(m)) <= 1e-12);
  }
  SUBCASE("two tasks") {
    AccuracyMatrix m = AccuracyMatrix::empty({"a", "b"});
    m.a(1, 1) = 0.8;
    m.reference(1) = 0.6;
    CHECK(std::abs(fwt(m) - 0.2) <= 1e-12);
  }
  SUBCASE("three tasks") {
    AccuracyMatrix m = AccuracyMatrix::empty({"a", "b", "c"});
    m.a(1, 1) = 0.7;
    m.a(2, 2) = 0.9;
    m.reference(1) = 0.6;
    m.reference(2) = 0.6;
    CHECK(std::abs(fwt(m) - 0.2) <= 1e-12);
  }
  SUBCASE("errors") {
    AccuracyMatrix one = AccuracyMatrix::empty({"a"});
    CHECK_THROWS_AS(fwt(one), ConfigError);
    AccuracyMatrix m = AccuracyMatrix::empty({"a", "b"});
    m.a(1, 1) = 0.8;  // reference missing
    CHECK_THROWS_AS(fwt(m), ConfigError);
  }
}

TEST_CASE("avg_final matches hand calculations") {
  SUBCASE("single task") {
    AccuracyMatrix m = AccuracyMatrix::empty({"a"});
    m.a(0, 0) = 0.77;
    CHECK(avg_final(m) == 0.77);
  }
  SUBCASE("constant matrix") {
    AccuracyMatrix m = AccuracyMatrix::empty({"a", "b"});
    m.a.row(1) << 0.5, 0.5;
    CHECK(std::abs(avg_final(m) - 0.5) <= 1e-12);
  }
  SUBCASE("final row mean") {
    AccuracyMatrix m = AccuracyMatrix::empty({"a", "b", "c"});
    m.a.row(2) << 0.2, 0.4, 0.9;
    CHECK(std::abs(avg_final(m) - 0.5) <= 1e-12);
  }
  SUBCASE("missing final entries are an error") {
    AccuracyMatrix m = AccuracyMatrix::empty({"a", "b"});
    m.a(1, 0) = 0.4;
    CHECK_THROWS_AS(avg_final(m), ConfigError);
  }
}

TEST_CASE("accuracy equals a brute-force re-evaluation loop") {
  Lab lab = make_lab(quick_suite(2, 0.0), 1, PeftKind::prefix, 8);
  LearnerState st = lab.learner();
  train_task(st, lab.vocab, lab.tasks[0]);
  train_task(st, lab.vocab, lab.tasks[1]);

  for (const TaskSpec& task : lab.tasks) {
    long correct_til = 0, correct_cil = 0;
    for (const Example& e : task.test) {
      TokenSeq toks = lab.toks(e);
      if (infer_til(st, toks, task.id) == task.global_label(e.label)) ++correct_til;
      if (infer_cil(st, toks).second == task.global_label(e.label)) ++correct_cil;
    }
    double til = static_cast<double>(correct_til) / task.test.size();
    double cil = static_cast<double>(correct_cil) / task.test.size();
    CHECK(accuracy(st, lab.vocab, task, Protocol::til) == til);
    CHECK(accuracy(st, lab.vocab, task, Protocol::cil) == cil);
  }

  SUBCASE("empty test set is an error") {
    TaskSpec empty = lab.tasks[0];
    empty.test.clear();
    CHECK_THROWS_AS(accuracy(st, lab.vocab, empty, Protocol::til), DegenerateInputError);
  }
  SUBCASE("constant predictor on a balanced set scores exactly 1/C") {
    double acc = test_accuracy(lab.tasks[0], lab.vocab, lab.bc.max_len,
                               [&](const TokenSeq&) { return lab.tasks[0].global_label(0); });
    CHECK(acc == 0.5);  // balanced binary test split
  }
  SUBCASE("all-correct predictor scores exactly one") {
    std::size_t at = 0;
    const TaskSpec& task = lab.tasks[0];
    double acc = test_accuracy(task, lab.vocab, lab.bc.max_len, [&](const TokenSeq&) {
      return task.global_label(task.test[at++].label);
    });
    CHECK(acc == 1.0);
  }
}

TEST_CASE("heatmap is lower-triangular with cosine-bounded entries") {
  Lab lab = make_lab(quick_suite(2, 0.5), 1, PeftKind::prefix, 8);
  LearnerState st = lab.learner();
  train_task(st, lab.vocab, lab.tasks[0]);

  SUBCASE("single trained task: one entry equal to the mean cosine") {
    HeatmapMatrix hm = heatmap(st, lab.vocab, {lab.tasks[0]});
    REQUIRE(hm.n() == 1);
    double mean = 0;
    for (const Example& e : lab.tasks[0].train) {
      RowVector x = pooled_embedding(*st.backbone, lab.toks(e));
      mean += matching_scores(st, x, 1)(0);
    }
    mean /= lab.tasks[0].train.size();
    CHECK(std::abs(hm.w(0, 0) - mean) <= 1e-12);
  }
  SUBCASE("two tasks: upper triangle absent, entries in [-1, 1]") {
    train_task(st, lab.vocab, lab.tasks[1]);
    HeatmapMatrix hm = heatmap(st, lab.vocab, lab.tasks);
    REQUIRE(hm.n() == 2);
    CHECK(std::isnan(hm.w(0, 1)));
    for (int i = 0; i < 2; ++i)
      for (int j = 0; j <= i; ++j) {
        CHECK(hm.w(i, j) <= 1.0);
        CHECK(hm.w(i, j) >= -1.0);
      }
  }
  SUBCASE("task list must match the trained bank") {
    CHECK_THROWS_AS(heatmap(st, lab.vocab, lab.tasks), ConfigError);
  }
}

TEST_CASE("csv files round-trip byte-for-byte at six decimals") {
  AccuracyMatrix m = AccuracyMatrix::empty({"alpha", "beta", "gamma"});
  m.a(0, 0) = 0.123456789;  // rounds to 0.123457
  m.a(1, 0) = 0.5;
  m.a(1, 1) = 1.0 / 3.0;
  m.a(2, 0) = 0.0;
  m.a(2, 1) = 1.0;
  m.a(2, 2) = 0.875;
  m.reference(1) = 0.25;
  m.reference(2) = 0.66;

  std::string p1 = temp_path("mocl_acc1.csv");
  std::string p2 = temp_path("mocl_acc2.csv");
  write_accuracy_csv(m, p1);
  AccuracyMatrix r = read_accuracy_csv(p1);
  CHECK(r.task_names == m.task_names);
  CHECK(std::abs(r.a(1, 1) - 0.333333) <= 1e-12);  // six-decimal value, exactly
  CHECK(std::isnan(r.a(0, 1)));
  write_accuracy_csv(r, p2);
  CHECK(slurp(p1) == slurp(p2));

  std::string pr1 = temp_path("mocl_ref1.csv");
  std::string pr2 = temp_path("mocl_ref2.csv");
  write_reference_csv(m, pr1);
  AccuracyMatrix q = AccuracyMatrix::empty(m.task_names);
  read_reference_csv(pr1, q);
  CHECK(std::isnan(q.reference(0)));
  CHECK(q.reference(1) == 0.25);
  write_reference_csv(q, pr2);
  CHECK(slurp(pr1) == slurp(pr2));

  HeatmapMatrix hm;
  hm.task_names = {"a", "b"};
  hm.w = Matrix::Constant(2, 2, std::numeric_limits<double>::quiet_NaN());
  hm.w(0, 0) = -0.333333333;
  hm.w(1, 0) = 0.721;
  hm.w(1, 1) = 0.9;
  std::string ph1 = temp_path("mocl_hm1.csv");
  std::string ph2 = temp_path("mocl_hm2.csv");
  write_heatmap_csv(hm, ph1);
  HeatmapMatrix hr = read_heatmap_csv(ph1);
  write_heatmap_csv(hr, ph2);
  CHECK(slurp(ph1) == slurp(ph2));
  CHECK(std::isnan(hr.w(0, 1)));

  for (const std::string& p : {p1, p2, pr1, pr2, ph1, ph2}) std::filesystem::remove(p);
}
