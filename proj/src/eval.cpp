#include "mocl/eval.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace mocl {

namespace {
constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();
}

std::string to_string(Protocol p) {
  switch (p) {
    case Protocol::til: return "til";
    case Protocol::cil: return "cil";
    case Protocol::both: return "both";
  }
  throw ConfigError("unknown protocol enum value");
}

Protocol protocol_from_string(const std::string& s) {
  if (s == "til" || s == "TIL") return Protocol::til;
  if (s == "cil" || s == "CIL") return Protocol::cil;
  if (s == "both") return Protocol::both;
  throw ConfigError("unknown protocol '" + s + "' (expected til | cil | both)");
}

AccuracyMatrix AccuracyMatrix::empty(const std::vector<std::string>& names) {
  AccuracyMatrix m;
  const Eigen::Index n = static_cast<Eigen::Index>(names.size());
  m.a = Matrix::Constant(n, n, kNaN);
  m.reference = Vector::Constant(n, kNaN);
  m.task_names = names;
  return m;
}

double avg_final(const AccuracyMatrix& m) {
  if (m.n() < 1) throw ConfigError("avg_final: empty matrix");
  const Eigen::Index last = m.a.rows() - 1;
  double sum = 0.0;
  for (Eigen::Index j = 0; j < m.a.cols(); ++j) {
    double v = m.a(last, j);
    if (std::isnan(v)) throw ConfigError("avg_final: missing entry in final row");
    sum += v;
  }
  return sum / static_cast<double>(m.a.cols());
}

double fwt(const AccuracyMatrix& m) {
  const int n = m.n();
  if (n < 2) throw ConfigError("fwt: need at least 2 tasks");
  double sum = 0.0;
  for (int i = 1; i < n; ++i) {
    double diag = m.a(i, i);
    double ref = m.reference(i);
    if (std::isnan(diag)) throw ConfigError("fwt: missing diagonal entry for task " +
                                            std::to_string(i + 1));
    if (std::isnan(ref))
      throw ConfigError("fwt: missing reference accuracy for task " + std::to_string(i + 1));
    sum += diag - ref;
  }
  return sum / static_cast<double>(n - 1);
}

double test_accuracy(const TaskSpec& task, const Vocab& vocab, int max_len,
                     const std::function<int(const TokenSeq&)>& predict_global) {
  if (task.test.empty())
    throw DegenerateInputError("accuracy: task '" + task.name + "' has an empty test set");
  long correct = 0;
  for (const Example& e : task.test) {
    TokenSeq toks = tokenize(vocab, e.text, max_len);
    if (predict_global(toks) == task.global_label(e.label)) ++correct;
  }
  return static_cast<double>(correct) / static_cast<double>(task.test.size());
}

double accuracy(const LearnerState& st, const Vocab& vocab, const TaskSpec& task, Protocol p) {
  const int max_len = st.backbone->cfg.max_len;
  if (p == Protocol::til)
    return test_accuracy(task, vocab, max_len,
                         [&](const TokenSeq& toks) { return infer_til(st, toks, task.id); });
  if (p == Protocol::cil)
    return test_accuracy(task, vocab, max_len,
                         [&](const TokenSeq& toks) { return infer_cil(st, toks).second; });
  throw ConfigError("accuracy: pass til or cil, not both");
}

HeatmapMatrix heatmap(const LearnerState& st, const Vocab& vocab,
                      const std::vector<TaskSpec>& tasks) {
  if (static_cast<int>(tasks.size()) != st.tasks_trained)
    throw ConfigError("heatmap: task list does not match the trained bank");
  const int n = st.tasks_trained;
  HeatmapMatrix hm;
  hm.w = Matrix::Constant(n, n, kNaN);
  for (int row = 0; row < n; ++row) {
    const TaskSpec& task = tasks[static_cast<std::size_t>(row)];
    if (task.id != st.task_ids[static_cast<std::size_t>(row)])
      throw ConfigError("heatmap: task order does not match the trained bank");
    hm.task_names.push_back(task.name);
    if (task.train.empty())
      throw DegenerateInputError("heatmap: task '" + task.name + "' has no training examples");
    Vector mean = Vector::Zero(row + 1);
    for (const Example& e : task.train) {
      TokenSeq toks = tokenize(vocab, e.text, st.backbone->cfg.max_len);
      RowVector x = pooled_embedding(*st.backbone, toks);
      mean += matching_scores(st, x, row + 1);
    }
    mean /= static_cast<double>(task.train.size());
    for (int k = 0; k <= row; ++k) hm.w(row, k) = mean(k);
  }
  return hm;
}

// ---------------------------------------------------------------------------
// CSV

namespace {

std::string format_cell(double v) {
  if (std::isnan(v)) return "";
  char buf[32];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> out;
  std::string cell;
  for (char c : line) {
    if (c == ',') {
      out.push_back(cell);
      cell.clear();
    } else if (c != '\r') {
      cell.push_back(c);
    }
  }
  out.push_back(cell);
  return out;
}

}  // namespace

void write_named_csv(const Matrix& m, const std::vector<std::string>& row_names,
                     const std::vector<std::string>& col_names, const std::string& corner,
                     const std::string& path) {
  if (static_cast<Eigen::Index>(row_names.size()) != m.rows() ||
      static_cast<Eigen::Index>(col_names.size()) != m.cols())
    throw ConfigError("write_named_csv: header sizes do not match the matrix");
  std::ofstream out(path);
  if (!out) throw IoError("cannot write csv file " + path);
  out << corner;
  for (const std::string& c : col_names) out << ',' << c;
  out << '\n';
  for (Eigen::Index i = 0; i < m.rows(); ++i) {
    out << row_names[static_cast<std::size_t>(i)];
    for (Eigen::Index j = 0; j < m.cols(); ++j) out << ',' << format_cell(m(i, j));
    out << '\n';
  }
}

Matrix read_named_csv(const std::string& path, std::vector<std::string>* row_names,
                      std::vector<std::string>* col_names) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read csv file " + path);
  std::string line;
  if (!std::getline(in, line)) throw ParseError(path + ": empty csv", 1);
  std::vector<std::string> header = split_csv_line(line);
  if (header.size() < 2) throw ParseError(path + ": csv header needs at least one column", 1);
  if (col_names) col_names->assign(header.begin() + 1, header.end());
  const std::size_t ncols = header.size() - 1;

  std::vector<std::vector<double>> rows;
  long line_no = 1;
  if (row_names) row_names->clear();
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    std::vector<std::string> cells = split_csv_line(line);
    if (cells.size() != ncols + 1)
      throw ParseError(path + ":" + std::to_string(line_no) + ": expected " +
                       std::to_string(ncols + 1) + " cells, got " + std::to_string(cells.size()),
                       line_no);
    if (row_names) row_names->push_back(cells[0]);
    std::vector<double> row;
    for (std::size_t j = 1; j < cells.size(); ++j) {
      if (cells[j].empty()) {
        row.push_back(kNaN);
      } else {
        try {
          std::size_t used = 0;
          double v = std::stod(cells[j], &used);
          if (used != cells[j].size()) throw std::invalid_argument("trailing characters");
          row.push_back(v);
        } catch (const std::exception&) {
          throw ParseError(path + ":" + std::to_string(line_no) + ": bad number '" + cells[j] +
                           "'", line_no);
        }
      }
    }
    rows.push_back(std::move(row));
  }
  Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(ncols));
  for (std::size_t i = 0; i < rows.size(); ++i)
    for (std::size_t j = 0; j < ncols; ++j)
      m(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) = rows[i][j];
  return m;
}

void write_accuracy_csv(const AccuracyMatrix& m, const std::string& path) {
  write_named_csv(m.a, m.task_names, m.task_names, "after_task", path);
}

AccuracyMatrix read_accuracy_csv(const std::string& path) {
  AccuracyMatrix m;
  std::vector<std::string> rows, cols;
  m.a = read_named_csv(path, &rows, &cols);
  if (rows != cols) throw ParseError(path + ": row and column headers differ");
  m.task_names = rows;
  m.reference = Vector::Constant(m.a.rows(), kNaN);
  return m;
}

void write_reference_csv(const AccuracyMatrix& m, const std::string& path) {
  Matrix row(1, m.reference.size());
  row.row(0) = m.reference.transpose();
  write_named_csv(row, {"reference"}, m.task_names, "task", path);
}

void read_reference_csv(const std::string& path, AccuracyMatrix& m) {
  std::vector<std::string> rows, cols;
  Matrix row = read_named_csv(path, &rows, &cols);
  if (rows.size() != 1 || rows[0] != "reference")
    throw ParseError(path + ": expected a single 'reference' row");
  if (cols != m.task_names)
    throw ParseError(path + ": task names do not match the accuracy matrix");
  m.reference = row.row(0).transpose();
}

void write_heatmap_csv(const HeatmapMatrix& m, const std::string& path) {
  write_named_csv(m.w, m.task_names, m.task_names, "task", path);
}

HeatmapMatrix read_heatmap_csv(const std::string& path) {
  HeatmapMatrix m;
  std::vector<std::string> rows, cols;
  m.w = read_named_csv(path, &rows, &cols);
  if (rows != cols) throw ParseError(path + ": row and column headers differ");
  m.task_names = rows;
  return m;
}

}  // namespace mocl
