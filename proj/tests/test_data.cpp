#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <complex>
#include <numbers>
#include <set>
#include <sstream>

#include "ms4/data.hpp"
#include "ms4/errors.hpp"
#include "oracles.hpp"

using namespace ms4;

namespace {

Dataset small_dataset() {
  Dataset d;
  d.classes = 3;
  for (int i = 0; i < 5; ++i) {
    d.X.push_back(ms4::testing::random_matrix(4, 2, static_cast<std::uint64_t>(i)));
    d.y.push_back(i % 3);
  }
  d.X[1](2, 1) = 1e-300;
  d.X[2](0, 0) = -0.1;
  return d;
}

// Predicts the class whose frequency is nearest to the dominant DFT bin.
int spectral_peak_class(const Eigen::MatrixXd& x, double f_low, double f_high) {
  const auto L = x.rows();
  double best = -1.0;
  double peak = 0.0;
  for (Eigen::Index k = 1; k <= L / 2; ++k) {
    std::complex<double> acc = 0.0;
    for (Eigen::Index t = 0; t < L; ++t) {
      acc += x(t, 0) * std::polar(1.0, -2.0 * std::numbers::pi * double(k * t) / double(L));
    }
    if (std::abs(acc) > best) {
      best = std::abs(acc);
      peak = double(k) / double(L);
    }
  }
  return std::abs(peak - f_high) < std::abs(peak - f_low) ? 1 : 0;
}

Dataset parse(const std::string& text) {
  std::istringstream in(text);
  return read_dataset(in, "mem");
}

}  // namespace

TEST_CASE("dataset round trip is value-identical") {
  const Dataset d = small_dataset();
  std::ostringstream out;
  write_dataset(d, out);
  const std::string text = out.str();
  CHECK(text.rfind("#tsc v1 n=5 L=4 F=2 classes=3\n", 0) == 0);
  const Dataset back = parse(text);
  REQUIRE(back.size() == d.size());
  CHECK(back.classes == 3);
  CHECK(back.y == d.y);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(back.X[i] == d.X[i]);
  std::ostringstream again;
  write_dataset(back, again);
  CHECK(again.str() == text);
}

TEST_CASE("time-major row layout") {
  const Dataset d = parse("#tsc v1 n=1 L=2 F=3 classes=2\n1,1,2,3,4,5,6\n");
  CHECK(d.y[0] == 1);
  CHECK(d.X[0](0, 2) == 3.0);
  CHECK(d.X[0](1, 0) == 4.0);
}

TEST_CASE("malformed files are rejected with line numbers") {
  const std::string header = "#tsc v1 n=2 L=2 F=1 classes=2\n";
  auto line_of = [](const std::string& text) {
    try {
      parse(text);
    } catch (const ParseError& e) {
      return e.line();
    }
    return -1;
  };
  CHECK(line_of("tsc v1 n=2 L=2 F=1 classes=2\n0,1,2\n1,3,4\n") == 1);
  CHECK(line_of("#tsc v1 n=2 L=x F=1 classes=2\n") == 1);
  CHECK(line_of("") == 1);
  CHECK(line_of(header + "0,1,2\n1,3\n") == 3);           // too few fields
  CHECK(line_of(header + "0,1,2,5\n1,3,4\n") == 2);       // too many fields
  CHECK(line_of(header + "0,1,2\n2,3,4\n") == 3);         // label >= classes
  CHECK(line_of(header + "0,1,2\n-1,3,4\n") == 3);        // negative label
  CHECK(line_of(header + "0,1,abc\n1,3,4\n") == 2);       // bad number
  CHECK(line_of(header + "0,1,2\n1,3,4\n0,5,6\n") == 4);  // more rows than n
  CHECK(line_of(header + "0,1,2\n") > 0);                 // fewer rows than n
  CHECK(line_of(header + "0,1,2,\n1,3,4\n") == 2);        // trailing comma

  try {
    parse(header + "0,1,2\n1,3\n");
  } catch (const ParseError& e) {
    CHECK(std::string(e.what()).find("mem:3") != std::string::npos);
  }
}

TEST_CASE("frequency task") {
  FreqTask task;
  task.n = 40;
  task.length = 64;
  task.seed = 3;
  const Dataset d = synth_freq_task(task);
  CHECK(d.size() == 40);
  CHECK(d.length() == 64);
  CHECK(d.features() == 1);
  CHECK(std::count(d.y.begin(), d.y.end(), 0) == 20);
  CHECK(std::count(d.y.begin(), d.y.end(), 1) == 20);

  const Dataset again = synth_freq_task(task);
  for (std::size_t i = 0; i < d.size(); ++i) CHECK(again.X[i] == d.X[i]);
  CHECK(again.y == d.y);
  task.seed = 4;
  CHECK(synth_freq_task(task).X[0] != d.X[0]);

  task.noise_std = 0.0;
  task.n = 200;
  task.length = 128;
  const Dataset clean = synth_freq_task(task);
  int wrong = 0;
  for (std::size_t i = 0; i < clean.size(); ++i) {
    wrong += spectral_peak_class(clean.X[i], task.f_low, task.f_high) != clean.y[i];
    CHECK(clean.X[i].cwiseAbs().maxCoeff() <= 1.0 + 1e-12);
  }
  CHECK(wrong == 0);

  task.features = 3;
  const Dataset multi = synth_freq_task(task);
  CHECK(multi.features() == 3);

  FreqTask bad;
  bad.f_low = 0.3;
  bad.f_high = 0.2;
  CHECK_THROWS_AS(synth_freq_task(bad), ParameterError);
  bad = FreqTask{};
  bad.f_high = 0.5;
  CHECK_THROWS_AS(synth_freq_task(bad), ParameterError);
  bad = FreqTask{};
  bad.n = 7;
  CHECK_THROWS_AS(synth_freq_task(bad), ParameterError);
}

TEST_CASE("split sizes, disjointness and determinism") {
  FreqTask task;
  task.n = 100;
  task.length = 8;
  const Dataset d = synth_freq_task(task);
  const auto [tr, va] = split_indices(d, 0.1, 5);
  CHECK(tr.size() == 90);
  CHECK(va.size() == 10);
  std::set<std::size_t> all(tr.begin(), tr.end());
  for (auto i : va) CHECK(all.insert(i).second);
  CHECK(all.size() == 100);
  CHECK(*all.rbegin() == 99);
  // Stratified: 5 of each class in validation.
  CHECK(std::count_if(va.begin(), va.end(), [&](std::size_t i) { return d.y[i] == 0; }) == 5);
  CHECK(split_indices(d, 0.1, 5) == std::make_pair(tr, va));
  CHECK(split_indices(d, 0.1, 6) != std::make_pair(tr, va));

  const auto [a, b] = split(d, 0.25, 1);
  CHECK(a.size() == 75);
  CHECK(b.size() == 25);

  CHECK_THROWS_AS(split_indices(d, 0.001, 0), ConfigError);
  CHECK_THROWS_AS(split_indices(d, 0.999, 0), ConfigError);

  // A singleton class forces the uniform path; it still partitions.
  Dataset odd = small_dataset();
  odd.y = {0, 1, 1, 2, 2};
  const auto [otr, ova] = split_indices(odd, 0.4, 0);
  CHECK(otr.size() + ova.size() == 5);
  CHECK(ova.size() == 2);
}

TEST_CASE("normalization uses training statistics only") {
  FreqTask task;
  task.n = 60;
  task.length = 16;
  task.features = 2;
  Dataset d = synth_freq_task(task);
  for (auto& x : d.X) x.col(1) = 3.0 * x.col(1).array() + 10.0;
  auto [train, val] = split(d, 0.2, 0);
  const FeatureStats stats = feature_stats(train);

  Dataset val_changed = val;
  for (auto& x : val_changed.X) x.array() += 100.0;
  const FeatureStats again = feature_stats(train);
  CHECK(again.mean == stats.mean);
  CHECK(again.stddev == stats.stddev);

  normalize(train, stats);
  const FeatureStats after = feature_stats(train);
  for (int f = 0; f < 2; ++f) {
    CHECK(std::abs(after.mean(f)) <= 1e-6);
    CHECK(std::abs(after.stddev(f) - 1.0) <= 1e-6);
  }

  Dataset constant = small_dataset();
  for (auto& x : constant.X) x.col(0).setConstant(4.2);
  const FeatureStats cs = feature_stats(constant);
  CHECK(cs.stddev(0) == 0.0);
  normalize(constant, cs);
  for (const auto& x : constant.X) {
    CHECK(x.col(0).cwiseAbs().maxCoeff() == 0.0);
    CHECK(x.allFinite());
  }
}
