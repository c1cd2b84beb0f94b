#include "ms4/eval.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <ostream>

#include "ms4/errors.hpp"
#include "ms4/io.hpp"

namespace ms4 {

void EvalTable::check() const {
  const auto m = static_cast<Eigen::Index>(models.size());
  const auto d = static_cast<Eigen::Index>(datasets.size());
  if (error.rows() != m || error.cols() != d) {
    throw ParameterError("eval table: error matrix shape does not match labels");
  }
  if (stddev && (stddev->rows() != m || stddev->cols() != d)) {
    throw ParameterError("eval table: STD matrix shape differs from error matrix");
  }
  for (Eigen::Index i = 0; i < error.size(); ++i) {
    const double e = error.data()[i];
    if (!std::isnan(e) && !(e >= 0.0 && e <= 1.0)) {
      throw ParameterError("eval table: error " + format_double(e) +
                           " outside [0, 1]");
    }
  }
}

std::size_t EvalTable::model_index(const std::string& name) const {
  const auto it = std::find(models.begin(), models.end(), name);
  if (it == models.end()) throw ParameterError("unknown model " + name);
  return static_cast<std::size_t>(it - models.begin());
}

EvalTable EvalTable::select(const std::vector<std::string>& names) const {
  EvalTable out;
  out.models = names;
  out.datasets = datasets;
  out.error.resize(static_cast<Eigen::Index>(names.size()), error.cols());
  if (stddev) out.stddev = Eigen::MatrixXd(out.error.rows(), error.cols());
  for (std::size_t i = 0; i < names.size(); ++i) {
    const auto src = static_cast<Eigen::Index>(model_index(names[i]));
    out.error.row(static_cast<Eigen::Index>(i)) = error.row(src);
    if (stddev) out.stddev->row(static_cast<Eigen::Index>(i)) = stddev->row(src);
  }
  return out;
}

double misclassification_error(std::span<const int> predictions,
                               std::span<const int> labels) {
  if (predictions.size() != labels.size()) {
    throw ParameterError("misclassification_error: length mismatch");
  }
  if (predictions.empty()) {
    throw ParameterError("misclassification_error: empty input");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    wrong += predictions[i] != labels[i];
  }
  return static_cast<double>(wrong) / static_cast<double>(labels.size());
}

Eigen::MatrixXd rank_matrix(const EvalTable& table) {
  table.check();
  const Eigen::Index n_models = table.error.rows();
  if (n_models == 0 || table.error.cols() == 0) {
    throw ParameterError("rank: empty table");
  }
  if (table.error.hasNaN()) throw ParameterError("rank: error matrix has missing cells");
  Eigen::MatrixXd ranks(n_models, table.error.cols());
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n_models));
  for (Eigen::Index d = 0; d < table.error.cols(); ++d) {
    const auto col = table.error.col(d);
    std::iota(order.begin(), order.end(), Eigen::Index{0});
    std::stable_sort(order.begin(), order.end(),
                     [&](Eigen::Index a, Eigen::Index b) { return col(a) < col(b); });
    for (std::size_t i = 0; i < order.size();) {
      std::size_t j = i;
      while (j + 1 < order.size() && col(order[j + 1]) == col(order[i])) ++j;
      // Positions i..j (0-based) share rank mean(i+1 .. j+1).
      const double shared = 0.5 * static_cast<double>(i + j) + 1.0;
      for (std::size_t k = i; k <= j; ++k) ranks(order[k], d) = shared;
      i = j + 1;
    }
  }
  return ranks;
}

Eigen::VectorXd average_rank(const EvalTable& table) {
  return rank_matrix(table).rowwise().mean();
}

double fold_std(std::span<const double> errors) {
  if (errors.size() < 2) throw ParameterError("fold_std: need at least 2 folds");
  if (std::all_of(errors.begin(), errors.end(),
                  [&](double e) { return e == errors.front(); })) {
    return 0.0;
  }
  const double n = static_cast<double>(errors.size());
  const double mean = std::accumulate(errors.begin(), errors.end(), 0.0) / n;
  double ss = 0.0;
  for (double e : errors) ss += (e - mean) * (e - mean);
  return std::sqrt(ss / (n - 1.0));
}

std::vector<ModelSummary> summarize(
    const EvalTable& table, const std::map<std::string, Complexity>& complexity) {
  const Eigen::VectorXd ranks = average_rank(table);
  std::vector<ModelSummary> out;
  for (std::size_t i = 0; i < table.models.size(); ++i) {
    const auto r = static_cast<Eigen::Index>(i);
    ModelSummary s;
    s.model = table.models[i];
    s.mean_error = table.error.row(r).mean();
    s.mean_rank = ranks(r);
    if (table.stddev) s.mean_std = table.stddev->row(r).mean();
    if (const auto it = complexity.find(s.model); it != complexity.end()) {
      s.complexity = it->second;
    }
    out.push_back(std::move(s));
  }
  return out;
}

EvalTable read_table_csv(std::istream& in, const std::string& source) {
  std::string line;
  std::vector<std::string_view> fields;
  if (!std::getline(in, line)) throw ParseError(source + ":1: missing header row", 1);
  if (!line.empty() && line.back() == '\r') line.pop_back();
  split_fields(line, ',', fields);
  if (fields.size() < 2) {
    throw ParseError(source + ":1: header needs a model column and >= 1 dataset", 1);
  }
  EvalTable table;
  for (std::size_t i = 1; i < fields.size(); ++i) table.datasets.emplace_back(fields[i]);
  std::vector<std::vector<double>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    split_fields(line, ',', fields);
    if (fields.size() != table.datasets.size() + 1) {
      throw ParseError(source + ":" + std::to_string(line_no) + ": expected " +
                           std::to_string(table.datasets.size() + 1) +
                           " fields, got " + std::to_string(fields.size()),
                       line_no);
    }
    table.models.emplace_back(fields[0]);
    std::vector<double> row;
    for (std::size_t i = 1; i < fields.size(); ++i) {
      double v = std::numeric_limits<double>::quiet_NaN();
      if (!fields[i].empty() && !parse_double(fields[i], v)) {
        throw ParseError(source + ":" + std::to_string(line_no) + ": bad number '" +
                             std::string(fields[i]) + "'",
                         line_no);
      }
      row.push_back(v);
    }
    rows.push_back(std::move(row));
  }
  table.error.resize(static_cast<Eigen::Index>(rows.size()),
                     static_cast<Eigen::Index>(table.datasets.size()));
  for (std::size_t r = 0; r < rows.size(); ++r) {
    for (std::size_t c = 0; c < rows[r].size(); ++c) {
      table.error(static_cast<Eigen::Index>(r), static_cast<Eigen::Index>(c)) =
          rows[r][c];
    }
  }
  return table;
}

EvalTable read_table_csv(const std::filesystem::path& errors) {
  std::ifstream in(errors);
  if (!in) throw ParseError("cannot open " + errors.string(), 0);
  EvalTable t = read_table_csv(in, errors.string());
  try {
    t.check();
  } catch (const ParameterError& e) {
    throw ParseError(errors.string() + ": " + e.what(), 0);
  }
  return t;
}

EvalTable read_table_csv(const std::filesystem::path& errors,
                         const std::filesystem::path& stddev) {
  EvalTable t = read_table_csv(errors);
  std::ifstream in(stddev);
  if (!in) throw ParseError("cannot open " + stddev.string(), 0);
  const EvalTable s = read_table_csv(in, stddev.string());
  if (s.models != t.models || s.datasets != t.datasets) {
    throw ParseError(stddev.string() + ": labels differ from " + errors.string(), 0);
  }
  t.stddev = s.error;
  return t;
}

void write_summary_csv(std::ostream& out, const std::vector<ModelSummary>& rows) {
  out << "model,mean_error,mean_rank,mean_std\n";
  for (const auto& r : rows) {
    out << r.model << ',' << format_double(r.mean_error) << ','
        << format_double(r.mean_rank) << ','
        << (r.mean_std ? format_double(*r.mean_std) : std::string()) << '\n';
  }
}

}  // namespace ms4
