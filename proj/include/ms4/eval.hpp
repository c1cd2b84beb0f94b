#pragma once

#include <filesystem>
#include <iosfwd>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace ms4 {

/// Model x dataset error matrix with an optional matching STD matrix.
/// Missing cells are NaN.
struct EvalTable {
  std::vector<std::string> models;
  std::vector<std::string> datasets;
  Eigen::MatrixXd error;  // models x datasets
  std::optional<Eigen::MatrixXd> stddev;

  /// Shapes agree and every present error lies in [0, 1].
  void check() const;
  /// Sub-table with the named models, in the given order.
  EvalTable select(const std::vector<std::string>& names) const;
  std::size_t model_index(const std::string& name) const;
};

/// Fraction of positions where prediction and label disagree.
double misclassification_error(std::span<const int> predictions,
                               std::span<const int> labels);

/// Per-dataset ranks (1 = lowest error), ties share the mean of their
/// positions. Throws ParameterError on a missing cell.
Eigen::MatrixXd rank_matrix(const EvalTable& table);
/// Mean over datasets of rank_matrix, one entry per model.
Eigen::VectorXd average_rank(const EvalTable& table);

/// Sample standard deviation (divisor n - 1); requires >= 2 folds.
double fold_std(std::span<const double> errors_per_fold);

struct Complexity {
  double params = 0.0;
  double mmac = 0.0;
};

struct ModelSummary {
  std::string model;
  double mean_error = 0.0;
  double mean_rank = 0.0;
  std::optional<double> mean_std;
  std::optional<Complexity> complexity;
};

std::vector<ModelSummary> summarize(
    const EvalTable& table,
    const std::map<std::string, Complexity>& complexity = {});

/// Error-matrix CSV: header "model,<dataset>,...", then one row per model.
/// Empty cells are read as missing.
EvalTable read_table_csv(std::istream& in, const std::string& source = "<stream>");
EvalTable read_table_csv(const std::filesystem::path& errors);
/// Reads an error CSV and a same-shaped STD CSV.
EvalTable read_table_csv(const std::filesystem::path& errors,
                         const std::filesystem::path& stddev);

/// Columns: model,mean_error,mean_rank,mean_std (mean_std empty when no STD
/// matrix is present).
void write_summary_csv(std::ostream& out, const std::vector<ModelSummary>& rows);

}  // namespace ms4
