#include "neuse/ensemble_baselines.hpp"

#include <cmath>
#include <random>

#include "neuse/detail/training_loop.hpp"

namespace neuse {

std::size_t single_select(const SnapshotSet& set) {
  if (set.num_snapshots() == 0) throw Error("single selection over an empty snapshot set");
  const bool higher = set.metric_name().rfind("hr@", 0) == 0;
  const auto& metas = set.metas();
  for (const auto& m : metas)
    if (std::isnan(m.validation_metric))
      throw Error("snapshot " + std::to_string(m.tag) + " has no validation metric");
  std::size_t best = 0;
  for (std::size_t s = 1; s < metas.size(); ++s) {
    const double v = metas[s].validation_metric, b = metas[best].validation_metric;
    if (higher ? v > b : v < b) best = s;
  }
  return best;
}

double average_combine(std::span<const double> preds) {
  if (preds.empty()) throw Error("average of no snapshot predictions");
  double total = 0.0;
  for (double p : preds) total += p;
  return total / static_cast<double>(preds.size());
}

double se_combine(std::span<const double> cycle_end_preds) { return average_combine(cycle_end_preds); }

void HSEConfig::validate() const {
  if (hidden < 1) throw ConfigError("hse.hidden must be at least 1");
  if (!(alpha > 0.0)) throw ConfigError("hse.alpha must be positive");
  if (!(lr > 0.0)) throw ConfigError("hse.lr must be positive");
  if (batch_size < 1) throw ConfigError("hse.batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("hse.beta1 and hse.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("hse.eps must be positive");
  if (init_std < 0.0) throw ConfigError("hse.init_std must be non-negative");
}

HSEModel HSEModel::zeros(std::size_t num_snapshots, std::size_t hidden) {
  return {Matrix(num_snapshots, hidden), Matrix(1, hidden), Matrix(hidden, num_snapshots),
          Matrix(1, num_snapshots)};
}

std::vector<NamedTensor> HSEModel::tensors() {
  return {{"hidden_weight", &hidden_weight},
          {"hidden_bias", &hidden_bias},
          {"out_weight", &out_weight},
          {"out_bias", &out_bias}};
}

std::vector<NamedConstTensor> HSEModel::tensors() const {
  return {{"hidden_weight", &hidden_weight},
          {"hidden_bias", &hidden_bias},
          {"out_weight", &out_weight},
          {"out_bias", &out_bias}};
}

HSEModel hse_init(std::size_t num_snapshots, const HSEConfig& config) {
  if (num_snapshots < 1) throw ConfigError("HSE needs at least one snapshot");
  HSEModel m = HSEModel::zeros(num_snapshots, config.hidden);
  if (config.init_std == 0.0) return m;
  std::mt19937_64 rng(derive_seed(config.seed, "hse-init"));
  std::normal_distribution<double> gauss(0.0, config.init_std);
  for (auto& t : m.tensors())
    for (double& v : t.value->flat()) v = gauss(rng);
  return m;
}

HSETrace hse_forward(const HSEModel& model, std::span<const double> preds) {
  const std::size_t S = model.num_snapshots(), H = model.hidden_bias.cols();
  if (preds.size() != S)
    throw FormatError("expected " + std::to_string(S) + " snapshot predictions, got " +
                      std::to_string(preds.size()));
  HSETrace t;
  t.input.assign(preds.begin(), preds.end());
  t.pre_hidden.assign(model.hidden_bias.row(0).begin(), model.hidden_bias.row(0).end());
  for (std::size_t s = 0; s < S; ++s) {
    const auto w = model.hidden_weight.row(s);
    for (std::size_t h = 0; h < H; ++h) t.pre_hidden[h] += w[h] * preds[s];
  }
  t.hidden.resize(H);
  for (std::size_t h = 0; h < H; ++h) t.hidden[h] = t.pre_hidden[h] > 0.0 ? t.pre_hidden[h] : 0.0;
  t.output.assign(model.out_bias.row(0).begin(), model.out_bias.row(0).end());
  for (std::size_t h = 0; h < H; ++h) {
    const auto w = model.out_weight.row(h);
    for (std::size_t s = 0; s < S; ++s) t.output[s] += w[s] * t.hidden[h];
  }
  softmax_inplace(t.output);
  if (!all_finite(t.output)) throw NumericError("non-finite activation in HSE output layer");
  return t;
}

void hse_backward(const HSETrace& trace, std::span<const double> y, const HSEModel& model,
                  HSEModel& grads, double scale) {
  const std::size_t S = model.num_snapshots(), H = model.hidden_bias.cols();
  std::vector<double> d_logits(S);
  for (std::size_t s = 0; s < S; ++s) d_logits[s] = scale * (trace.output[s] - y[s]);
  auto gb2 = grads.out_bias.row(0);
  for (std::size_t s = 0; s < S; ++s) gb2[s] += d_logits[s];
  std::vector<double> d_pre(H);
  for (std::size_t h = 0; h < H; ++h) {
    auto gw = grads.out_weight.row(h);
    for (std::size_t s = 0; s < S; ++s) gw[s] += trace.hidden[h] * d_logits[s];
    d_pre[h] = trace.pre_hidden[h] > 0.0 ? dot(model.out_weight.row(h), d_logits) : 0.0;
  }
  auto gb1 = grads.hidden_bias.row(0);
  for (std::size_t h = 0; h < H; ++h) gb1[h] += d_pre[h];
  for (std::size_t s = 0; s < S; ++s) {
    auto gw = grads.hidden_weight.row(s);
    for (std::size_t h = 0; h < H; ++h) gw[h] += trace.input[s] * d_pre[h];
  }
}

double hse_predict(const HSEModel& model, std::span<const double> preds) {
  return ensemble_predict(hse_forward(model, preds).output, preds);
}

HSETrainResult hse_train(const SnapshotSet& train, std::span<const double> train_targets,
                         const SnapshotSet& validation_set, const EvalTarget& validation,
                         const HSEConfig& config) {
  config.validate();
  if (train_targets.size() != train.num_pairs())
    throw FormatError("one training target per snapshot-set row is required");
  if (validation_set.tags() != train.tags())
    throw FormatError("train and validation snapshot sets have different snapshots");
  const auto tags = train.tags();
  std::vector<SoftLabel> labels;
  for (std::int64_t tag : tags) labels.push_back(soft_labels(tags, tag, config.alpha));
  std::vector<std::size_t> optimal(train.num_pairs());
  for (std::size_t r = 0; r < train.num_pairs(); ++r)
    optimal[r] = optimal_snapshot(train.row(r), train_targets[r]);

  auto accumulate = [&](const HSEModel& m, HSEModel& g, std::size_t row, double scale, std::mt19937_64&) {
    hse_backward(hse_forward(m, train.row(row)), labels[optimal[row]].y, m, g, scale);
  };
  auto mean_loss = [&](const HSEModel& m) {
    double total = 0.0;
    for (std::size_t r = 0; r < train.num_pairs(); ++r)
      total += kl_loss(labels[optimal[r]].y, hse_forward(m, train.row(r)).output);
    return train.num_pairs() == 0 ? 0.0 : total / static_cast<double>(train.num_pairs());
  };
  auto score = [&](const HSEModel& m) {
    return [&m, &validation_set](std::size_t row) { return hse_predict(m, validation_set.row(row)); };
  };
  detail::LoopSettings settings{config.max_epochs, config.batch_size, config.adam(), config.seed};
  auto outcome = detail::run_training(hse_init(train.num_snapshots(), config), train.num_pairs(),
                                      settings, validation, accumulate, mean_loss, score);
  return {std::move(outcome.params), outcome.best_epoch, std::move(outcome.history)};
}

}  // namespace neuse
