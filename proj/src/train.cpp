#include "ms4/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <ostream>
#include <random>
#include <thread>

#include "ms4/grad/model_grad.hpp"
#include "ms4/io.hpp"

namespace ms4 {
namespace {

// Runs fn(i) for i in [0, n) on up to `threads` workers. Results must be
// written to per-index slots so reduction order stays fixed.
template <typename Fn>
void parallel_for(std::size_t n, int threads, Fn&& fn) {
  const std::size_t workers =
      std::min<std::size_t>(std::max(threads, 1), std::max<std::size_t>(n, 1));
  if (workers <= 1) {
    for (std::size_t i = 0; i < n; ++i) fn(i);
    return;
  }
  std::vector<std::thread> pool;
  std::vector<std::exception_ptr> errors(workers);
  for (std::size_t w = 0; w < workers; ++w) {
    pool.emplace_back([&, w] {
      try {
        for (std::size_t i = w; i < n; i += workers) fn(i);
      } catch (...) {
        errors[w] = std::current_exception();
      }
    });
  }
  for (auto& t : pool) t.join();
  for (auto& e : errors) {
    if (e) std::rethrow_exception(e);
  }
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) {
  return block_seed(a, static_cast<std::size_t>(b));
}

double check_stability(const ModelParams<double>& model, int epoch) {
  double worst = 0.0;
  for (std::size_t l = 0; l < model.blocks.size(); ++l) {
    const double mag = max_transition_magnitude(model.blocks[l].ssm);
    if (!(mag < 1.0)) {
      throw NumericError("epoch " + std::to_string(epoch) + ": block " +
                         std::to_string(l) + " has |A_bar| = " +
                         std::to_string(mag) + " >= 1");
    }
    worst = std::max(worst, mag);
  }
  return worst;
}

}  // namespace

void TrainConfig::check() const {
  if (!(lr >= 0.0)) throw ParameterError("learning rate must be >= 0");
  if (batch_size < 1) throw ParameterError("batch size must be >= 1");
  if (max_epochs < 1) throw ParameterError("max epochs must be >= 1");
  if (patience < 1) throw ParameterError("patience must be >= 1");
  if (!(val_fraction > 0.0 && val_fraction < 1.0)) {
    throw ParameterError("validation fraction must be in (0, 1)");
  }
  if (threads < 1) throw ParameterError("threads must be >= 1");
}

void TrainHistory::write_csv(std::ostream& out) const {
  out << "epoch,train_loss,train_acc,val_loss,val_acc\n";
  std::string line;
  for (const auto& e : epochs) {
    line = std::to_string(e.epoch);
    for (double v : {e.train_loss, e.train_acc, e.val_loss, e.val_acc}) {
      line += ',';
      append_double(line, v);
    }
    line += '\n';
    out << line;
  }
}

void adam_step(grad::ParamMap& params, const grad::ParamMap& grads,
               AdamState& state, const TrainConfig& c) {
  ++state.step;
  const double bc1 = 1.0 - std::pow(c.beta1, state.step);
  const double bc2 = 1.0 - std::pow(c.beta2, state.step);
  for (auto& [name, p] : params) {
    const auto g = grads.find(name);
    if (g == grads.end()) continue;
    if (g->second.rows() != p.rows() || g->second.cols() != p.cols()) {
      throw ParameterError("adam_step: gradient shape mismatch for " + name);
    }
    auto& m = state.m[name];
    auto& v = state.v[name];
    if (m.size() == 0) m = grad::Mat::Zero(p.rows(), p.cols());
    if (v.size() == 0) v = grad::Mat::Zero(p.rows(), p.cols());
    m = c.beta1 * m + (1.0 - c.beta1) * g->second;
    v = c.beta2 * v + (1.0 - c.beta2) * g->second.cwiseProduct(g->second);
    p.array() -= c.lr * (m.array() / bc1) /
                 ((v.array() / bc2).sqrt() + c.eps_adam);
  }
}

void adam_step(ModelParams<double>& model, const grad::ParamMap& grads,
               AdamState& state, const TrainConfig& config) {
  grad::ParamMap params = grad::to_param_map(model);
  adam_step(params, grads, state, config);
  grad::assign_params(model, params);
}

Metrics evaluate(const ModelParams<double>& model, const Dataset& data,
                 int threads) {
  if (data.size() == 0) throw ParameterError("evaluate: empty dataset");
  std::vector<double> losses(data.size());
  std::vector<int> hits(data.size());
  parallel_for(data.size(), threads, [&](std::size_t i) {
    const RowVector<double> z = forward(data.X[i], model);
    Eigen::Index arg;
    z.maxCoeff(&arg);
    losses[i] = cross_entropy(z, data.y[i]);
    hits[i] = static_cast<int>(arg) == data.y[i];
  });
  Metrics m;
  for (std::size_t i = 0; i < data.size(); ++i) {
    m.loss += losses[i];
    m.accuracy += hits[i];
  }
  m.loss /= static_cast<double>(data.size());
  m.accuracy /= static_cast<double>(data.size());
  return m;
}

BatchResult batch_gradient(const ModelParams<double>& model, const Dataset& data,
                           const std::vector<std::size_t>& batch,
                           std::uint64_t seed, int threads) {
  const double weight = 1.0 / static_cast<double>(batch.size());
  std::vector<grad::LossAndGrad> per_sample(batch.size());
  parallel_for(batch.size(), threads, [&](std::size_t i) {
    const std::size_t s = batch[i];
    per_sample[i] = grad::loss_and_grad(model, data.X[s], data.y[s], true,
                                        mix_seed(seed, s), weight);
  });
  BatchResult out;
  for (std::size_t i = 0; i < batch.size(); ++i) {
    auto& r = per_sample[i];
    out.loss += r.loss * weight;
    Eigen::Index arg;
    r.logits.maxCoeff(&arg);
    out.correct += static_cast<int>(arg) == data.y[batch[i]];
    if (i == 0) {
      out.grads = std::move(r.grads);
    } else {
      for (auto& [name, g] : r.grads) out.grads.at(name) += g;
    }
  }
  return out;
}

TrainResult train(const ModelParams<double>& initial, const Dataset& data,
                  const TrainConfig& config,
                  const std::function<void(const EpochRecord&)>& on_epoch) {
  config.check();
  data.check();
  std::vector<int> seen(data.classes, 0);
  for (int label : data.y) seen[label] = 1;
  if (std::accumulate(seen.begin(), seen.end(), 0) < 2) {
    throw ConfigError("training data must contain at least two classes");
  }
  if (data.features() != initial.config.features) {
    throw ParameterError("dataset feature count does not match the model");
  }
  if (data.classes > initial.config.classes) {
    throw ParameterError("dataset has more classes than the model head");
  }

  auto [train_idx, val_idx] = split_indices(data, config.val_fraction, config.seed);
  Dataset train_set = data.subset(train_idx);
  Dataset val_set = data.subset(val_idx);
  TrainResult result{initial, {}, std::nullopt};
  if (config.normalize_inputs) {
    const FeatureStats stats = feature_stats(train_set);
    normalize(train_set, stats);
    normalize(val_set, stats);
    result.input_stats = stats;
  }

  ModelParams<double> model = initial;
  AdamState adam;
  std::mt19937_64 shuffle_rng(mix_seed(config.seed, 0x5eed));
  std::vector<std::size_t> order(train_set.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  double best_loss = std::numeric_limits<double>::infinity();
  int stale = 0;
  std::vector<std::size_t> batch;

  for (int epoch = 1; epoch <= config.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    int correct = 0;
    for (std::size_t start = 0; start < order.size();
         start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t stop =
          std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.assign(order.begin() + start, order.begin() + stop);
      const std::uint64_t batch_seed =
          mix_seed(mix_seed(config.seed, static_cast<std::uint64_t>(epoch)), start);
      BatchResult r = batch_gradient(model, train_set, batch, batch_seed, config.threads);
      if (!std::isfinite(r.loss)) {
        throw NumericError("non-finite training loss at epoch " +
                           std::to_string(epoch));
      }
      loss_sum += r.loss * static_cast<double>(batch.size());
      correct += r.correct;
      adam_step(model, r.grads, adam, config);
    }
    const double transition = check_stability(model, epoch);

    const Metrics val = evaluate(model, val_set, config.threads);
    if (!std::isfinite(val.loss)) {
      throw NumericError("non-finite validation loss at epoch " +
                         std::to_string(epoch));
    }
    EpochRecord rec{epoch, loss_sum / static_cast<double>(train_set.size()),
                    static_cast<double>(correct) / static_cast<double>(train_set.size()),
                    val.loss, val.accuracy, transition};
    result.history.epochs.push_back(rec);
    if (config.reference_accuracy && !result.history.accuracy_crossing &&
        rec.val_acc >= *config.reference_accuracy) {
      result.history.accuracy_crossing = epoch;
    }
    if (config.reference_loss && !result.history.loss_crossing &&
        rec.val_loss <= *config.reference_loss) {
      result.history.loss_crossing = epoch;
    }
    if (on_epoch) on_epoch(rec);

    if (rec.val_loss < best_loss) {
      best_loss = rec.val_loss;
      result.history.best_epoch = epoch;
      result.model = model;
      stale = 0;
    } else if (++stale >= config.patience) {
      break;
    }
  }
  return result;
}

std::vector<ConvergenceRow> compare_convergence(
    const Dataset& data, const ModelConfig& base, const TrainConfig& config,
    const std::vector<std::uint64_t>& seeds) {
  std::vector<ConvergenceRow> rows;
  for (const auto seed : seeds) {
    for (const bool normalized : {false, true}) {
      ModelConfig mc = base;
      mc.normalized = normalized;
      TrainConfig tc = config;
      tc.seed = seed;
      const auto result = train(init_model<double>(mc, seed), data, tc);
      const auto& h = result.history;
      rows.push_back({seed, normalized, h.accuracy_crossing, h.loss_crossing,
                      h.best_epoch, static_cast<int>(h.epochs.size()),
                      h.epochs[h.best_epoch - 1].val_loss,
                      h.epochs.back().val_acc});
    }
  }
  return rows;
}

void write_convergence_csv(std::ostream& out,
                           const std::vector<ConvergenceRow>& rows) {
  out << "seed,variant,acc_cross_epoch,loss_cross_epoch,best_epoch,epochs_run,"
         "best_val_loss,final_val_acc\n";
  for (const auto& r : rows) {
    out << r.seed << ',' << (r.normalized ? "MS4N" : "MS4") << ','
        << r.accuracy_crossing.value_or(-1) << ','
        << r.loss_crossing.value_or(-1) << ',' << r.best_epoch << ','
        << r.epochs_run << ',' << format_double(r.best_val_loss) << ','
        << format_double(r.final_val_acc) << '\n';
  }
}

}  // namespace ms4
