#pragma once

#include <functional>

#include "mocl/learner.hpp"

namespace mocl {

enum class Protocol { til, cil, both };

std::string to_string(Protocol p);
Protocol protocol_from_string(const std::string& s);

// Lower-triangular accuracy matrix: a(i, j) is the accuracy on task j+1's
// test set after training through task i+1. Entries above the diagonal are
// NaN. reference(i) holds the isolated-training accuracy used by fwt (NaN
// when absent).
struct AccuracyMatrix {
  Matrix a;
  Vector reference;
  std::vector<std::string> task_names;

  int n() const { return static_cast<int>(a.rows()); }
  static AccuracyMatrix empty(const std::vector<std::string>& names);
};

// Mean of the final row.
double avg_final(const AccuracyMatrix& m);

// (1 / (N-1)) * sum_{i=2..N} (a_{i,i} - reference_i); requires N >= 2 and a
// reference for every i in 2..N.
double fwt(const AccuracyMatrix& m);

// Fraction of test examples whose predicted global label equals the gold
// global label.
double test_accuracy(const TaskSpec& task, const Vocab& vocab, int max_len,
                     const std::function<int(const TokenSeq&)>& predict_global);

// TIL uses infer_til with the gold task id; CIL uses infer_cil, counting a
// prediction correct only when the chosen head yields the gold global label.
double accuracy(const LearnerState& st, const Vocab& vocab, const TaskSpec& task, Protocol p);

// Mean matching weights w(n, k) = mean over task n+1's training examples of
// alpha_{k+1}, for k <= n; strictly lower-triangular-plus-diagonal.
struct HeatmapMatrix {
  Matrix w;
  std::vector<std::string> task_names;
  int n() const { return static_cast<int>(w.rows()); }
};

HeatmapMatrix heatmap(const LearnerState& st, const Vocab& vocab,
                      const std::vector<TaskSpec>& tasks);

// CSV with row/column headers; entries printed with 6 decimal places, NaN as
// an empty cell. Reading back a written file and re-writing it is
// byte-identical.
void write_named_csv(const Matrix& m, const std::vector<std::string>& row_names,
                     const std::vector<std::string>& col_names, const std::string& corner,
                     const std::string& path);
Matrix read_named_csv(const std::string& path, std::vector<std::string>* row_names,
                      std::vector<std::string>* col_names);

void write_accuracy_csv(const AccuracyMatrix& m, const std::string& path);
AccuracyMatrix read_accuracy_csv(const std::string& path);
void write_reference_csv(const AccuracyMatrix& m, const std::string& path);
// Loads reference accuracies into an existing matrix (names must match).
void read_reference_csv(const std::string& path, AccuracyMatrix& m);
void write_heatmap_csv(const HeatmapMatrix& m, const std::string& path);
HeatmapMatrix read_heatmap_csv(const std::string& path);

}  // namespace mocl
