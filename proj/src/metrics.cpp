#include "neuse/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

namespace neuse {

double rmse(std::span<const double> preds, std::span<const double> truth) {
  if (preds.empty()) throw Error("rmse of an empty prediction list");
  if (preds.size() != truth.size())
    throw Error("rmse: " + std::to_string(preds.size()) + " predictions for " +
                std::to_string(truth.size()) + " ratings");
  double sse = 0.0;
  for (std::size_t k = 0; k < preds.size(); ++k) {
    const double e = preds[k] - truth[k];
    sse += e * e;
  }
  return std::sqrt(sse / static_cast<double>(preds.size()));
}

RankedList rank_candidates(std::span<const std::size_t> items, std::span<const double> scores,
                           std::size_t positive) {
  std::vector<std::size_t> order(items.size());
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    if (scores[a] != scores[b]) return scores[a] > scores[b];
    return items[a] < items[b];
  });
  RankedList out;
  out.positive = positive;
  for (std::size_t k : order) out.items.push_back(items[k]);
  return out;
}

std::size_t positive_rank(const RankedList& list) {
  const auto it = std::find(list.items.begin(), list.items.end(), list.positive);
  if (it == list.items.end())
    throw Error("ranked list does not contain its positive item " + std::to_string(list.positive));
  return static_cast<std::size_t>(it - list.items.begin()) + 1;
}

double hr_at_n(std::span<const RankedList> rankings, std::size_t n) {
  if (rankings.empty()) throw Error("hit ratio over no test cases");
  std::size_t hits = 0;
  for (const auto& list : rankings)
    if (positive_rank(list) <= n) ++hits;
  return static_cast<double>(hits) / static_cast<double>(rankings.size());
}

double ndcg_at_n(std::span<const RankedList> rankings, std::size_t n) {
  if (rankings.empty()) throw Error("NDCG over no test cases");
  // One relevant item per list, so IDCG@N = 1.
  double total = 0.0;
  for (const auto& list : rankings) {
    const std::size_t rank = positive_rank(list);
    if (rank <= n) total += 1.0 / std::log2(static_cast<double>(rank) + 1.0);
  }
  return total / static_cast<double>(rankings.size());
}

EvalTarget rating_target(const SnapshotSet& set, const RatingDataset& heldout) {
  EvalTarget t;
  t.task = Task::Rating;
  t.scale = heldout.scale();
  for (const auto& x : heldout.interactions()) {
    t.rows.push_back(set.row_of(x.user, x.item));
    t.truth.push_back(x.rating);
  }
  return t;
}

EvalTarget ranking_target(const SnapshotSet& set, const NegativeSamples& samples, std::size_t cutoff) {
  EvalTarget t;
  t.task = Task::Ranking;
  t.cutoff = cutoff;
  for (const auto& list : samples.lists) {
    EvalTarget::Group g;
    g.positive_item = list.positive;
    g.items.push_back(list.positive);
    g.items.insert(g.items.end(), list.negatives.begin(), list.negatives.end());
    for (std::size_t item : g.items) g.rows.push_back(set.row_of(list.user, item));
    t.groups.push_back(std::move(g));
  }
  return t;
}

namespace {

std::vector<RankedList> rankings_of(const EvalTarget& target,
                                    const std::function<double(std::size_t)>& score) {
  std::vector<RankedList> out;
  out.reserve(target.groups.size());
  std::vector<double> scores;
  for (const auto& g : target.groups) {
    scores.clear();
    for (std::size_t r : g.rows) scores.push_back(score(r));
    out.push_back(rank_candidates(g.items, scores, g.positive_item));
  }
  return out;
}

double clipped(const EvalTarget& target, double v) { return target.scale ? target.scale->clip(v) : v; }

}  // namespace

Scores evaluate(const EvalTarget& target, const std::function<double(std::size_t)>& score) {
  Scores s;
  if (target.task == Task::Rating) {
    std::vector<double> preds;
    preds.reserve(target.rows.size());
    for (std::size_t r : target.rows) preds.push_back(clipped(target, score(r)));
    s.rmse = rmse(preds, target.truth);
  } else {
    const auto rankings = rankings_of(target, score);
    s.hr = hr_at_n(rankings, target.cutoff);
    s.ndcg = ndcg_at_n(rankings, target.cutoff);
  }
  return s;
}

double selection_metric(const EvalTarget& target, const std::function<double(std::size_t)>& score) {
  const Scores s = evaluate(target, score);
  return target.task == Task::Rating ? *s.rmse : *s.hr;
}

bool lower_is_better(Task task) { return task == Task::Rating; }

std::string selection_metric_name(const EvalTarget& target) {
  return target.task == Task::Rating ? "rmse" : "hr@" + std::to_string(target.cutoff);
}

}  // namespace neuse
