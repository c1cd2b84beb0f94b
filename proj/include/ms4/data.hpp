#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Core>

namespace ms4 {

/// Labeled multivariate sequences: n samples of L x F values (time-major)
/// with zero-based labels in [0, classes).
struct Dataset {
  std::vector<Eigen::MatrixXd> X;
  std::vector<int> y;
  int classes = 0;

  std::size_t size() const { return X.size(); }
  int length() const { return X.empty() ? 0 : static_cast<int>(X[0].rows()); }
  int features() const { return X.empty() ? 0 : static_cast<int>(X[0].cols()); }

  /// Throws ParameterError unless shapes are uniform and labels in range.
  void check() const;
  Dataset subset(const std::vector<std::size_t>& indices) const;
};

/// TSC-CSV v1:
///   #tsc v1 n=<n> L=<L> F=<F> classes=<n_c>
///   label,v(0,0),...,v(0,F-1),v(1,0),...,v(L-1,F-1)
/// Values are written in shortest round-trip decimal form.
void write_dataset(const Dataset& data, std::ostream& out);
void write_dataset(const Dataset& data, const std::filesystem::path& path);
Dataset read_dataset(std::istream& in, const std::string& source = "<stream>");
Dataset load_dataset(const std::filesystem::path& path);

struct FreqTask {
  int n = 200;
  int length = 128;
  double f_low = 0.05;   // cycles per step
  double f_high = 0.2;
  double noise_std = 0.3;
  int features = 1;
  std::uint64_t seed = 0;
};

/// Two-class sinusoid task: class 0 oscillates at f_low, class 1 at f_high,
/// with random phase, unit amplitude and Gaussian noise. Feature j carries a
/// copy phase-shifted by 2*pi*j/F. Exactly n/2 samples per class.
Dataset synth_freq_task(const FreqTask& task);

/// Seeded split into (train, validation) index sets. Stratified by label when
/// every class has at least two samples; otherwise uniform. The validation
/// side gets round(fraction * n) samples (per class when stratified).
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const Dataset& data, double fraction, std::uint64_t seed);

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction,
                                  std::uint64_t seed);

/// Per-feature statistics over all samples and time steps.
struct FeatureStats {
  Eigen::RowVectorXd mean;
  Eigen::RowVectorXd stddev;  // population; 0 marks a constant feature
};

FeatureStats feature_stats(const Dataset& data);
/// z-normalizes in place; constant features map to 0.
void normalize(Dataset& data, const FeatureStats& stats);
void normalize(Eigen::MatrixXd& x, const FeatureStats& stats);

}  // namespace ms4
