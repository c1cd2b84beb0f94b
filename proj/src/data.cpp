#include "ms4/data.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <numbers>
#include <numeric>
#include <random>
#include <sstream>

#include "ms4/errors.hpp"
#include "ms4/io.hpp"

namespace ms4 {

void Dataset::check() const {
  if (X.size() != y.size()) throw ParameterError("dataset: X/y size mismatch");
  if (classes < 1) throw ParameterError("dataset: class count must be >= 1");
  for (std::size_t i = 0; i < X.size(); ++i) {
    if (X[i].rows() != X[0].rows() || X[i].cols() != X[0].cols()) {
      throw ParameterError("dataset: sample " + std::to_string(i) +
                           " has a different shape");
    }
    if (y[i] < 0 || y[i] >= classes) {
      throw ParameterError("dataset: label out of range at sample " +
                           std::to_string(i));
    }
  }
}

Dataset Dataset::subset(const std::vector<std::size_t>& indices) const {
  Dataset out;
  out.classes = classes;
  out.X.reserve(indices.size());
  out.y.reserve(indices.size());
  for (auto i : indices) {
    out.X.push_back(X.at(i));
    out.y.push_back(y.at(i));
  }
  return out;
}

void write_dataset(const Dataset& data, std::ostream& out) {
  data.check();
  out << "#tsc v1 n=" << data.size() << " L=" << data.length()
      << " F=" << data.features() << " classes=" << data.classes << '\n';
  std::string line;
  for (std::size_t i = 0; i < data.size(); ++i) {
    line = std::to_string(data.y[i]);
    const auto& x = data.X[i];
    for (Eigen::Index t = 0; t < x.rows(); ++t) {
      for (Eigen::Index f = 0; f < x.cols(); ++f) {
        line += ',';
        append_double(line, x(t, f));
      }
    }
    line += '\n';
    out << line;
  }
}

void write_dataset(const Dataset& data, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw ParseError("cannot open " + path.string() + " for writing", 0);
  write_dataset(data, out);
  if (!out) throw ParseError("write failed: " + path.string(), 0);
}

namespace {

long parse_header_field(const std::string& token, const std::string& key,
                        const std::string& where) {
  const std::string prefix = key + "=";
  if (token.rfind(prefix, 0) != 0) {
    throw ParseError(where + ": header expects '" + prefix + "<int>', got '" +
                         token + "'",
                     1);
  }
  long value = 0;
  const char* first = token.data() + prefix.size();
  const char* last = token.data() + token.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last || first == last) {
    throw ParseError(where + ": bad integer in header field '" + token + "'", 1);
  }
  return value;
}

}  // namespace

Dataset read_dataset(std::istream& in, const std::string& source) {
  std::string line;
  if (!std::getline(in, line)) {
    throw ParseError(source + ":1: missing header", 1);
  }
  std::istringstream header(line);
  std::vector<std::string> tokens;
  for (std::string tok; header >> tok;) tokens.push_back(tok);
  if (tokens.size() != 6 || tokens[0] != "#tsc" || tokens[1] != "v1") {
    throw ParseError(source + ":1: expected '#tsc v1 n=<n> L=<L> F=<F> classes=<c>'",
                     1);
  }
  const std::string where = source + ":1";
  const long n = parse_header_field(tokens[2], "n", where);
  const long L = parse_header_field(tokens[3], "L", where);
  const long F = parse_header_field(tokens[4], "F", where);
  const long classes = parse_header_field(tokens[5], "classes", where);
  if (n < 0 || L < 1 || F < 1 || classes < 1) {
    throw ParseError(where + ": header dimensions out of range", 1);
  }

  Dataset data;
  data.classes = static_cast<int>(classes);
  data.X.reserve(n);
  data.y.reserve(n);
  const std::size_t expected = 1 + static_cast<std::size_t>(L * F);
  int line_no = 1;
  std::vector<std::string_view> fields;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (line.empty()) continue;
    const std::string at = source + ":" + std::to_string(line_no);
    if (static_cast<long>(data.size()) >= n) {
      throw ParseError(at + ": more data rows than header n=" + std::to_string(n),
                       line_no);
    }
    split_fields(line, ',', fields);
    if (fields.size() != expected) {
      throw ParseError(at + ": expected " + std::to_string(expected) +
                           " fields (1 + L*F), got " +
                           std::to_string(fields.size()),
                       line_no);
    }
    int label = 0;
    {
      auto [ptr, ec] = std::from_chars(fields[0].data(),
                                       fields[0].data() + fields[0].size(), label);
      if (ec != std::errc() || ptr != fields[0].data() + fields[0].size()) {
        throw ParseError(at + ": bad label '" + std::string(fields[0]) + "'",
                         line_no);
      }
    }
    if (label < 0 || label >= classes) {
      throw ParseError(at + ": label " + std::to_string(label) +
                           " outside [0, " + std::to_string(classes) + ")",
                       line_no);
    }
    Eigen::MatrixXd x(L, F);
    for (long t = 0; t < L; ++t) {
      for (long f = 0; f < F; ++f) {
        const auto field = fields[1 + t * F + f];
        if (!parse_double(field, x(t, f))) {
          throw ParseError(at + ": bad number '" + std::string(field) + "'",
                           line_no);
        }
      }
    }
    data.X.push_back(std::move(x));
    data.y.push_back(label);
  }
  if (static_cast<long>(data.size()) != n) {
    throw ParseError(source + ": header declares n=" + std::to_string(n) +
                         " but body has " + std::to_string(data.size()) +
                         " rows",
                     line_no);
  }
  return data;
}

Dataset load_dataset(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ParseError("cannot open " + path.string(), 0);
  return read_dataset(in, path.string());
}

Dataset synth_freq_task(const FreqTask& task) {
  if (task.n < 2 || task.n % 2 != 0) {
    throw ParameterError("synth_freq_task: n must be even and >= 2");
  }
  if (task.length < 1 || task.features < 1) {
    throw ParameterError("synth_freq_task: length and features must be >= 1");
  }
  if (!(task.f_low > 0.0 && task.f_low < task.f_high && task.f_high < 0.5)) {
    throw ParameterError("synth_freq_task: require 0 < f_low < f_high < 0.5");
  }
  if (!(task.noise_std >= 0.0)) {
    throw ParameterError("synth_freq_task: noise_std must be >= 0");
  }
  std::mt19937_64 rng(task.seed);
  std::vector<int> labels(task.n);
  for (int i = 0; i < task.n; ++i) labels[i] = i < task.n / 2 ? 0 : 1;
  std::shuffle(labels.begin(), labels.end(), rng);

  std::uniform_real_distribution<double> phase_dist(0.0, 2.0 * std::numbers::pi);
  std::normal_distribution<double> noise(0.0, 1.0);
  Dataset data;
  data.classes = 2;
  for (int i = 0; i < task.n; ++i) {
    const double freq = labels[i] == 0 ? task.f_low : task.f_high;
    const double phase = phase_dist(rng);
    Eigen::MatrixXd x(task.length, task.features);
    for (int t = 0; t < task.length; ++t) {
      for (int f = 0; f < task.features; ++f) {
        const double shift = 2.0 * std::numbers::pi * f / task.features;
        x(t, f) = std::sin(2.0 * std::numbers::pi * freq * t + phase + shift) +
                  task.noise_std * noise(rng);
      }
    }
    data.X.push_back(std::move(x));
    data.y.push_back(labels[i]);
  }
  return data;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_indices(
    const Dataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction < 1.0)) {
    throw ConfigError("split fraction must be in (0, 1)");
  }
  const std::size_t n = data.size();
  const auto n_val = static_cast<std::size_t>(std::llround(fraction * n));
  if (n_val == 0 || n_val >= n) {
    throw ConfigError("split of " + std::to_string(n) + " samples at fraction " +
                      std::to_string(fraction) + " leaves one side empty");
  }
  std::mt19937_64 rng(seed);
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < n; ++i) by_class[data.y[i]].push_back(i);
  const bool stratify =
      std::all_of(by_class.begin(), by_class.end(),
                  [](const auto& kv) { return kv.second.size() >= 2; });

  std::vector<std::size_t> val;
  if (stratify) {
    // Largest-remainder apportionment of n_val over classes, each class
    // keeping at least one training sample.
    std::vector<std::pair<int, double>> remainders;
    std::map<int, std::size_t> quota;
    std::size_t assigned = 0;
    for (const auto& [label, idx] : by_class) {
      const double exact = fraction * static_cast<double>(idx.size());
      quota[label] = std::min(static_cast<std::size_t>(exact), idx.size() - 1);
      assigned += quota[label];
      remainders.emplace_back(label, exact - std::floor(exact));
    }
    std::stable_sort(remainders.begin(), remainders.end(),
                     [](const auto& a, const auto& b) { return a.second > b.second; });
    for (std::size_t r = 0; assigned < n_val && r < 4 * remainders.size(); ++r) {
      const int label = remainders[r % remainders.size()].first;
      if (quota[label] + 1 < by_class[label].size()) {
        ++quota[label];
        ++assigned;
      }
    }
    for (auto& [label, idx] : by_class) {
      std::shuffle(idx.begin(), idx.end(), rng);
      val.insert(val.end(), idx.begin(), idx.begin() + quota[label]);
    }
  } else {
    std::vector<std::size_t> all(n);
    std::iota(all.begin(), all.end(), std::size_t{0});
    std::shuffle(all.begin(), all.end(), rng);
    val.assign(all.begin(), all.begin() + n_val);
  }
  std::sort(val.begin(), val.end());
  std::vector<std::size_t> train;
  train.reserve(n - val.size());
  for (std::size_t i = 0, j = 0; i < n; ++i) {
    if (j < val.size() && val[j] == i) {
      ++j;
    } else {
      train.push_back(i);
    }
  }
  if (train.empty() || val.empty()) {
    throw ConfigError("split leaves one side empty");
  }
  return {std::move(train), std::move(val)};
}

std::pair<Dataset, Dataset> split(const Dataset& data, double fraction,
                                  std::uint64_t seed) {
  auto [train, val] = split_indices(data, fraction, seed);
  return {data.subset(train), data.subset(val)};
}

FeatureStats feature_stats(const Dataset& data) {
  if (data.size() == 0) throw ParameterError("feature_stats: empty dataset");
  const int F = data.features();
  Eigen::RowVectorXd sum = Eigen::RowVectorXd::Zero(F);
  double count = 0;
  for (const auto& x : data.X) {
    sum += x.colwise().sum();
    count += static_cast<double>(x.rows());
  }
  FeatureStats s;
  s.mean = sum / count;
  Eigen::RowVectorXd sq = Eigen::RowVectorXd::Zero(F);
  for (const auto& x : data.X) {
    sq += (x.rowwise() - s.mean).array().square().matrix().colwise().sum();
  }
  s.stddev = (sq / count).cwiseSqrt();
  for (int f = 0; f < F; ++f) {
    // Treat numerically constant features as dead channels.
    if (s.stddev(f) <= 1e-12 * std::max(1.0, std::abs(s.mean(f)))) s.stddev(f) = 0.0;
  }
  return s;
}

void normalize(Eigen::MatrixXd& x, const FeatureStats& stats) {
  if (x.cols() != stats.mean.size()) {
    throw ParameterError("normalize: feature count mismatch");
  }
  for (Eigen::Index f = 0; f < x.cols(); ++f) {
    if (stats.stddev(f) == 0.0) {
      x.col(f).setZero();
    } else {
      x.col(f) = (x.col(f).array() - stats.mean(f)) / stats.stddev(f);
    }
  }
}

void normalize(Dataset& data, const FeatureStats& stats) {
  for (auto& x : data.X) normalize(x, stats);
}

}  // namespace ms4
