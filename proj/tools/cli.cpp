#include "cli.hpp"

#include <algorithm>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "ms4/checkpoint.hpp"
#include "ms4/data.hpp"
#include "ms4/errors.hpp"
#include "ms4/eval.hpp"
#include "ms4/grad/model_grad.hpp"
#include "ms4/io.hpp"
#include "ms4/model.hpp"
#include "ms4/train.hpp"

namespace ms4::cli {
namespace {

namespace fs = std::filesystem;

// Bad flag values detected after parsing.
struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Unreadable or malformed input and output files.
struct DataError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct TrainFlags {
  std::string data;
  ModelConfig model;
  TrainConfig train;
  std::uint64_t seed = 0;
  double reference_acc = -1.0;
  double reference_loss = -1.0;
};

struct Io {
  std::ostream& out;
  std::ostream& err;
};

void add_model_flags(CLI::App* app, ModelConfig& c) {
  app->add_option("--hidden", c.hidden, "model width H")->capture_default_str();
  app->add_option("--state", c.state, "SSM state size N (even)")->capture_default_str();
  app->add_option("--layers", c.layers, "number of MS4 blocks")->capture_default_str();
  app->add_option("--head-hidden", c.head_hidden, "classifier hidden width (0 = H)")
      ->capture_default_str();
  app->add_flag("--normalized,!--no-normalized", c.normalized,
                "LayerNorm after the GLU (MS4N) or not (MS4)")
      ->capture_default_str();
  app->add_option("--dropout", c.dropout, "dropout rate after the SSM")
      ->capture_default_str();
  app->add_option("--dt-min", c.dt_min, "lower bound of the initial step size")
      ->capture_default_str();
  app->add_option("--dt-max", c.dt_max, "upper bound of the initial step size")
      ->capture_default_str();
}

void add_train_flags(CLI::App* app, TrainFlags& f) {
  app->add_option("--data", f.data, "training data (TSC-CSV)")->required();
  add_model_flags(app, f.model);
  app->add_option("--epochs", f.train.max_epochs, "maximum epochs")->capture_default_str();
  app->add_option("--batch", f.train.batch_size, "mini-batch size")->capture_default_str();
  app->add_option("--lr", f.train.lr, "Adam learning rate")->capture_default_str();
  app->add_option("--val-frac", f.train.val_fraction, "validation fraction")
      ->capture_default_str();
  app->add_option("--patience", f.train.patience, "early-stopping patience")
      ->capture_default_str();
  app->add_option("--seed", f.seed, "random seed")->capture_default_str();
  app->add_option("--threads", f.train.threads, "worker threads")->capture_default_str();
  app->add_option("--reference-acc", f.reference_acc,
                  "validation accuracy threshold for crossing epochs (< 0 = off)")
      ->capture_default_str();
  app->add_option("--reference-loss", f.reference_loss,
                  "validation loss threshold for crossing epochs (< 0 = off)")
      ->capture_default_str();
}

void resolve(TrainFlags& f, int features, int classes) {
  f.model.features = features;
  f.model.classes = classes;
  f.train.seed = f.seed;
  if (f.reference_acc >= 0.0) f.train.reference_accuracy = f.reference_acc;
  if (f.reference_loss >= 0.0) f.train.reference_loss = f.reference_loss;
  try {
    f.model.check();
    f.train.check();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
}

Dataset load_data_flag(const std::string& flag, const std::string& path) {
  try {
    return load_dataset(path);
  } catch (const ParseError& e) {
    throw DataError(flag + ": " + e.what());
  }
}

Checkpoint load_model_flag(const std::string& path) {
  try {
    return load_checkpoint(fs::path(path));
  } catch (const ParseError& e) {
    throw DataError(std::string("--model: ") + e.what());
  }
}

std::ofstream open_output(const std::string& flag, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DataError(flag + ": cannot open " + path + " for writing");
  return out;
}

// Refuses to write over a file that is also an input of the same run.
void guard_outputs(const std::vector<std::pair<std::string, std::string>>& inputs,
                   const std::vector<std::pair<std::string, std::string>>& outputs) {
  for (const auto& [out_flag, out_path] : outputs) {
    if (out_path.empty()) continue;
    for (const auto& [in_flag, in_path] : inputs) {
      if (in_path.empty()) continue;
      std::error_code ec;
      const bool same = out_path == in_path || fs::equivalent(out_path, in_path, ec);
      if (same) throw UsageError(out_flag + " would overwrite " + in_flag + " " + in_path);
    }
  }
}

void check_features(const Checkpoint& ckpt, const Dataset& data) {
  if (data.features() != ckpt.model.config.features) {
    throw DataError("--data: " + std::to_string(data.features()) +
                    " features, but --model expects " +
                    std::to_string(ckpt.model.config.features));
  }
  if (data.classes > ckpt.model.config.classes) {
    throw DataError("--data: " + std::to_string(data.classes) +
                    " classes, but --model has " +
                    std::to_string(ckpt.model.config.classes));
  }
}

void print_config(const CLI::App* sub, std::ostream& err, const std::string& seed) {
  err << "ms4 " << sub->get_name() << '\n';
  err << "# resolved seed: " << seed << '\n';
  std::istringstream lines(sub->config_to_str(true, false));
  for (std::string line; std::getline(lines, line);) {
    if (!line.empty()) err << "#   " << line << '\n';
  }
}

int cmd_gen(Io io, const FreqTask& task, const std::string& out_path) {
  const Dataset data = synth_freq_task(task);
  auto out = open_output("--out", out_path);
  write_dataset(data, out);
  if (!out) throw DataError("--out: write failed for " + out_path);
  io.err << "wrote " << data.size() << " samples to " << out_path << '\n';
  return kOk;
}

int cmd_train(Io io, TrainFlags f, const std::string& out_path,
              const std::string& history_path) {
  const Dataset data = load_data_flag("--data", f.data);
  resolve(f, data.features(), data.classes);
  const auto initial = init_model<double>(f.model, f.seed);
  io.err << "# params: " << count_params(initial) << '\n';
  const TrainResult result =
      train(initial, data, f.train, [&](const EpochRecord& r) {
        io.err << "epoch " << r.epoch << " train_loss " << format_double(r.train_loss)
               << " train_acc " << format_double(r.train_acc) << " val_loss "
               << format_double(r.val_loss) << " val_acc " << format_double(r.val_acc)
               << '\n';
      });
  io.err << "best epoch " << result.history.best_epoch << '\n';
  {
    auto out = open_output("--history", history_path);
    result.history.write_csv(out);
    if (!out) throw DataError("--history: write failed for " + history_path);
  }
  auto out = open_output("--out", out_path);
  save_checkpoint(Checkpoint{result.model, result.input_stats}, out);
  if (!out) throw DataError("--out: write failed for " + out_path);
  return kOk;
}

int cmd_eval(Io io, const std::string& model_path, const std::string& data_path,
             int threads) {
  const Checkpoint ckpt = load_model_flag(model_path);
  Dataset data = load_data_flag("--data", data_path);
  check_features(ckpt, data);
  if (ckpt.input_stats) normalize(data, *ckpt.input_stats);
  const Metrics m = evaluate(ckpt.model, data, threads);
  io.out << format_double(1.0 - m.accuracy) << '\n';
  return kOk;
}

int cmd_stream(Io io, const std::string& model_path, const std::string& data_path,
               bool check, double tolerance) {
  const Checkpoint ckpt = load_model_flag(model_path);
  Dataset data = load_data_flag("--data", data_path);
  check_features(ckpt, data);
  if (ckpt.input_stats) normalize(data, *ckpt.input_stats);
  const ModelParams<float> single = ckpt.model.cast<float>();
  double deviation = 0.0;
  std::vector<int> predictions;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const Eigen::MatrixXf x = data.X[i].cast<float>();
    ModelStream<float> stream(single);
    for (Eigen::Index k = 0; k < x.rows(); ++k) stream.push(x.row(k));
    const RowVector<float> logits = stream.logits();
    Eigen::Index best;
    logits.maxCoeff(&best);
    predictions.push_back(static_cast<int>(best));
    if (check) {
      const RowVector<double> batch = forward(data.X[i], ckpt.model);
      const double d = (logits.cast<double>() - batch).cwiseAbs().maxCoeff();
      if (!std::isfinite(d)) throw NumericError("non-finite logits on sample " + std::to_string(i));
      deviation = std::max(deviation, d);
    }
  }
  if (!check) {
    for (int p : predictions) io.out << p << '\n';
    return kOk;
  }
  io.out << format_double(deviation) << '\n';
  if (!(deviation <= tolerance)) {
    io.err << "stream: max abs deviation " << format_double(deviation)
           << " exceeds --tolerance " << format_double(tolerance) << '\n';
    return kNumeric;
  }
  return kOk;
}

int cmd_gradcheck(Io io, ModelConfig c, int length, double epsilon, double tolerance,
                  std::uint64_t seed) {
  try {
    c.check();
  } catch (const ParameterError& e) {
    throw UsageError(e.what());
  }
  if (length < 1) throw UsageError("--len must be >= 1");
  const auto model = init_model<double>(c, seed);
  std::mt19937_64 rng(seed ^ 0xC0FFEEull);
  std::normal_distribution<double> normal(0.0, 1.0);
  Eigen::MatrixXd x(length, c.features);
  for (Eigen::Index i = 0; i < x.size(); ++i) x.data()[i] = normal(rng);
  const int label = static_cast<int>(seed % static_cast<std::uint64_t>(c.classes));
  const auto report = grad::model_gradient_check(model, x, label, epsilon);

  io.out << "param,max_rel_error\n";
  for (const auto& [name, err] : report.per_param) io.out << name << ',' << format_double(err) << '\n';
  io.out << "max," << format_double(report.max_relative_error) << '\n';
  if (!(report.max_relative_error <= tolerance)) {
    io.err << "gradcheck: max relative error " << format_double(report.max_relative_error)
           << " exceeds --tol " << format_double(tolerance) << '\n';
    return kNumeric;
  }
  return kOk;
}

int cmd_kernel_dump(Io io, const std::string& model_path, int length, int layer,
                    const std::string& out_path) {
  if (length < 1) throw UsageError("--len must be >= 1");
  const Checkpoint ckpt = load_model_flag(model_path);
  if (layer < 0 || layer >= static_cast<int>(ckpt.model.blocks.size())) {
    throw UsageError("--layer " + std::to_string(layer) + " out of range; model has " +
                     std::to_string(ckpt.model.blocks.size()) + " layers");
  }
  const auto K = compute_kernel(ckpt.model.blocks[static_cast<std::size_t>(layer)].ssm, length);
  auto out = open_output("--out", out_path);
  std::string line;
  for (Eigen::Index k = 0; k < K.rows(); ++k) {
    line.clear();
    for (Eigen::Index h = 0; h < K.cols(); ++h) {
      if (h > 0) line += ',';
      append_double(line, K(k, h));
    }
    line += '\n';
    out << line;
  }
  if (!out) throw DataError("--out: write failed for " + out_path);
  io.err << "wrote " << K.rows() << " x " << K.cols() << " kernel to " << out_path << '\n';
  return kOk;
}

int cmd_rank(Io io, const std::string& errors_path, const std::string& std_path,
             const std::vector<std::string>& models, const std::string& out_path) {
  EvalTable table;
  try {
    table = std_path.empty() ? read_table_csv(fs::path(errors_path))
                             : read_table_csv(fs::path(errors_path), fs::path(std_path));
  } catch (const ParseError& e) {
    throw DataError(std::string(std_path.empty() ? "--errors: " : "--errors/--std: ") +
                    e.what());
  }
  if (!models.empty()) {
    try {
      table = table.select(models);
    } catch (const ParameterError& e) {
      throw UsageError(std::string("--models: ") + e.what());
    }
  }
  std::vector<ModelSummary> rows;
  try {
    rows = summarize(table, {});
  } catch (const ParameterError& e) {
    throw DataError(std::string("--errors: ") + e.what());
  }
  if (out_path.empty()) {
    write_summary_csv(io.out, rows);
  } else {
    auto out = open_output("--out", out_path);
    write_summary_csv(out, rows);
    if (!out) throw DataError("--out: write failed for " + out_path);
  }
  return kOk;
}

int cmd_converge(Io io, TrainFlags f, const std::vector<std::uint64_t>& seeds,
                 const std::string& out_path) {
  const Dataset data = load_data_flag("--data", f.data);
  resolve(f, data.features(), data.classes);
  if (seeds.empty()) throw UsageError("--seeds must list at least one seed");
  const auto rows = compare_convergence(data, f.model, f.train, seeds);
  if (out_path.empty()) {
    write_convergence_csv(io.out, rows);
  } else {
    auto out = open_output("--out", out_path);
    write_convergence_csv(out, rows);
    if (!out) throw DataError("--out: write failed for " + out_path);
  }
  return kOk;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"MS4 / MS4N time series classification"};
  app.name("ms4");
  app.require_subcommand(1);
  app.fallthrough(false);

  FreqTask task;
  std::string task_name = "freq", gen_out;
  auto* gen = app.add_subcommand("gen", "generate a synthetic dataset");
  gen->add_option("--task", task_name, "generator")
      ->check(CLI::IsMember({"freq"}))
      ->capture_default_str();
  gen->add_option("--n", task.n, "number of samples (even)")->capture_default_str();
  gen->add_option("--len", task.length, "sequence length")->capture_default_str();
  gen->add_option("--features", task.features, "phase-shifted copies per sample")
      ->capture_default_str();
  gen->add_option("--f-low", task.f_low, "class 0 frequency (cycles/step)")
      ->capture_default_str();
  gen->add_option("--f-high", task.f_high, "class 1 frequency (cycles/step)")
      ->capture_default_str();
  gen->add_option("--noise", task.noise_std, "Gaussian noise std")->capture_default_str();
  gen->add_option("--seed", task.seed, "random seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output TSC-CSV path")->required();

  TrainFlags train_flags;
  std::string train_out = "model.ckpt", history_out = "history.csv";
  auto* train_cmd = app.add_subcommand("train", "train MS4 or MS4N");
  add_train_flags(train_cmd, train_flags);
  train_cmd->add_option("--out", train_out, "checkpoint path")->capture_default_str();
  train_cmd->add_option("--history", history_out, "per-epoch history CSV")
      ->capture_default_str();

  std::string model_path, data_path;
  int threads = 1;
  auto* eval_cmd = app.add_subcommand("eval", "print the misclassification error");
  eval_cmd->add_option("--model", model_path, "checkpoint")->required();
  eval_cmd->add_option("--data", data_path, "TSC-CSV dataset")->required();
  eval_cmd->add_option("--threads", threads, "worker threads")->capture_default_str();

  bool stream_check = false;
  double stream_tol = 1e-4;
  auto* stream_cmd =
      app.add_subcommand("stream", "recurrent single-precision inference");
  stream_cmd->add_option("--model", model_path, "checkpoint")->required();
  stream_cmd->add_option("--data", data_path, "TSC-CSV dataset")->required();
  stream_cmd->add_flag("--check", stream_check,
                       "compare against the batch path and print the max abs deviation");
  stream_cmd->add_option("--tolerance", stream_tol, "allowed deviation for --check")
      ->capture_default_str();

  ModelConfig gc;
  gc.features = 3;
  gc.hidden = 8;
  gc.state = 8;
  gc.classes = 3;
  gc.dropout = 0.0;
  int gc_len = 16;
  double gc_eps = 1e-4, gc_tol = 1e-4;
  std::uint64_t gc_seed = 0;
  auto* gc_cmd = app.add_subcommand("gradcheck", "finite-difference gradient check");
  gc_cmd->add_option("--len", gc_len, "sequence length")->capture_default_str();
  gc_cmd->add_option("--features", gc.features, "input features")->capture_default_str();
  gc_cmd->add_option("--classes", gc.classes, "classes")->capture_default_str();
  add_model_flags(gc_cmd, gc);
  gc_cmd->add_option("--eps", gc_eps, "central-difference step")->capture_default_str();
  gc_cmd->add_option("--tol", gc_tol, "max allowed relative error")->capture_default_str();
  gc_cmd->add_option("--seed", gc_seed, "random seed")->capture_default_str();

  int kd_len = 0, kd_layer = 0;
  std::string kd_out;
  auto* kd_cmd = app.add_subcommand("kernel-dump", "write the SSM kernel as CSV");
  kd_cmd->add_option("--model", model_path, "checkpoint")->required();
  kd_cmd->add_option("--len", kd_len, "kernel length L")->required();
  kd_cmd->add_option("--layer", kd_layer, "block index")->capture_default_str();
  kd_cmd->add_option("--out", kd_out, "output CSV (L rows x H columns)")->required();

  std::string errors_path, std_path, rank_out;
  std::vector<std::string> rank_models;
  auto* rank_cmd = app.add_subcommand("rank", "mean error, mean rank and mean STD");
  rank_cmd->add_option("--errors", errors_path, "error matrix CSV")->required();
  rank_cmd->add_option("--std", std_path, "STD matrix CSV with the same labels");
  rank_cmd->add_option("--models", rank_models, "rank only these models")->delimiter(',');
  rank_cmd->add_option("--out", rank_out, "summary CSV (default stdout)");

  TrainFlags conv_flags;
  conv_flags.reference_acc = 0.9;
  std::vector<std::uint64_t> conv_seeds{0, 1, 2, 3, 4};
  std::string conv_out;
  auto* conv_cmd =
      app.add_subcommand("converge", "threshold-crossing epochs of MS4 vs MS4N");
  add_train_flags(conv_cmd, conv_flags);
  conv_cmd->add_option("--seeds", conv_seeds, "seeds to run")
      ->delimiter(',')
      ->capture_default_str();
  conv_cmd->add_option("--out", conv_out, "convergence CSV (default stdout)");

  std::vector<std::string> argv(args.rbegin(), args.rend());
  try {
    app.parse(argv);
  } catch (const CLI::CallForHelp&) {
    const auto subs = app.get_subcommands();
    out << (subs.empty() ? app.help() : subs.front()->help());
    return kOk;
  } catch (const CLI::CallForAllHelp&) {
    out << app.help("", CLI::AppFormatMode::All);
    return kOk;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << "\n\n";
    const auto subs = app.get_subcommands();
    err << (subs.empty() ? app.help() : subs.front()->help());
    return kUsage;
  }

  const Io io{out, err};
  CLI::App* sub = app.get_subcommands().front();
  try {
    if (sub == gen) {
      print_config(sub, err, std::to_string(task.seed));
      return cmd_gen(io, task, gen_out);
    }
    if (sub == train_cmd) {
      print_config(sub, err, std::to_string(train_flags.seed));
      guard_outputs({{"--data", train_flags.data}},
                    {{"--out", train_out}, {"--history", history_out}});
      if (train_out == history_out) throw UsageError("--out and --history are the same file");
      return cmd_train(io, train_flags, train_out, history_out);
    }
    if (sub == eval_cmd) {
      print_config(sub, err, "none (deterministic)");
      return cmd_eval(io, model_path, data_path, threads);
    }
    if (sub == stream_cmd) {
      print_config(sub, err, "none (deterministic)");
      return cmd_stream(io, model_path, data_path, stream_check, stream_tol);
    }
    if (sub == gc_cmd) {
      print_config(sub, err, std::to_string(gc_seed));
      return cmd_gradcheck(io, gc, gc_len, gc_eps, gc_tol, gc_seed);
    }
    if (sub == kd_cmd) {
      print_config(sub, err, "none (deterministic)");
      guard_outputs({{"--model", model_path}}, {{"--out", kd_out}});
      return cmd_kernel_dump(io, model_path, kd_len, kd_layer, kd_out);
    }
    if (sub == rank_cmd) {
      print_config(sub, err, "none (deterministic)");
      guard_outputs({{"--errors", errors_path}, {"--std", std_path}}, {{"--out", rank_out}});
      return cmd_rank(io, errors_path, std_path, rank_models, rank_out);
    }
    if (sub == conv_cmd) {
      std::string seeds;
      for (auto s : conv_seeds) seeds += (seeds.empty() ? "" : ",") + std::to_string(s);
      print_config(sub, err, seeds);
      guard_outputs({{"--data", conv_flags.data}}, {{"--out", conv_out}});
      return cmd_converge(io, conv_flags, conv_seeds, conv_out);
    }
  } catch (const UsageError& e) {
    err << "error: " << e.what() << "\n\n" << sub->help();
    return kUsage;
  } catch (const DataError& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const ParseError& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  } catch (const ConfigError& e) {
    err << "error: --data: " << e.what() << '\n';
    return kData;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kNumeric;
  } catch (const ParameterError& e) {
    err << "error: " << e.what() << '\n';
    return kData;
  }
  return kUsage;
}

}  // namespace ms4::cli
