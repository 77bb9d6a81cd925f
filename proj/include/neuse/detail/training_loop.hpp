#pragma once

// Mini-batch Adam loop with per-epoch validation selection, shared by the
// NeuSE network and the HSE meta-learner.

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <vector>

#include "neuse/metrics.hpp"
#include "neuse/neuse_net.hpp"

namespace neuse::detail {

struct LoopSettings {
  std::size_t max_epochs = 0;
  std::size_t batch_size = 128;
  AdamConfig adam;
  std::uint64_t seed = 0;
};

template <typename Params>
struct LoopOutcome {
  Params params;
  std::size_t best_epoch = 0;
  std::vector<EpochStats> history;
};

template <typename Params>
Params zeros_like(const Params& params) {
  Params out = params;
  for (auto& t : out.tensors()) t.value->fill(0.0);
  return out;
}

// accumulate(params, grads, row, scale, rng) adds scale * dLoss(row) to grads.
// mean_loss(params) is the dropout-free mean training loss.
// score(params) returns a row -> prediction function over the validation set.
template <typename Params, typename Accumulate, typename MeanLoss, typename ScoreFn>
LoopOutcome<Params> run_training(Params params, std::size_t num_rows, const LoopSettings& settings,
                                 const EvalTarget& validation, Accumulate accumulate,
                                 MeanLoss mean_loss, ScoreFn score) {
  auto validation_metric = [&](const Params& p) { return selection_metric(validation, score(p)); };
  const bool lower = lower_is_better(validation.task);

  LoopOutcome<Params> out;
  out.history.push_back({0, mean_loss(params), validation_metric(params)});
  out.params = params;
  if (settings.max_epochs == 0 || num_rows == 0) return out;

  std::mt19937_64 shuffle_rng(derive_seed(settings.seed, "ensemble-shuffle"));
  std::mt19937_64 dropout_rng(derive_seed(settings.seed, "ensemble-dropout"));
  Params grads = zeros_like(params);
  AdamState adam = adam_init(std::as_const(params).tensors());
  std::vector<std::size_t> order(num_rows);
  std::iota(order.begin(), order.end(), 0);

  double best = 0.0;
  for (std::size_t epoch = 1; epoch <= settings.max_epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    for (std::size_t start = 0; start < num_rows; start += settings.batch_size) {
      const std::size_t stop = std::min(num_rows, start + settings.batch_size);
      for (auto& t : grads.tensors()) t.value->fill(0.0);
      const double scale = 1.0 / static_cast<double>(stop - start);
      for (std::size_t k = start; k < stop; ++k)
        accumulate(std::as_const(params), grads, order[k], scale, dropout_rng);
      adam_step(params.tensors(), std::as_const(grads).tensors(), adam, settings.adam);
    }
    for (const auto& t : std::as_const(params).tensors())
      if (!all_finite(t.value->flat()))
        throw NumericError("non-finite parameter '" + t.name + "' after epoch " + std::to_string(epoch));
    const EpochStats stats{epoch, mean_loss(params), validation_metric(params)};
    out.history.push_back(stats);
    const bool improved = epoch == 1 || (lower ? stats.validation_metric < best
                                               : stats.validation_metric > best);
    if (improved) {
      best = stats.validation_metric;
      out.best_epoch = epoch;
      out.params = params;
    }
  }
  return out;
}

}  // namespace neuse::detail
