#include "neuse/neuse_net.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <numeric>

#include "neuse/detail/training_loop.hpp"

namespace neuse {

Activation parse_activation(std::string_view text) {
  if (text == "relu") return Activation::Relu;
  if (text == "sigmoid") return Activation::Sigmoid;
  if (text == "tanh") return Activation::Tanh;
  throw ConfigError("activation: expected relu, sigmoid or tanh, got '" + std::string(text) + "'");
}

std::string_view to_string(Activation a) {
  switch (a) {
    case Activation::Relu: return "relu";
    case Activation::Sigmoid: return "sigmoid";
    case Activation::Tanh: return "tanh";
  }
  return "relu";
}

void NeuSEConfig::validate() const {
  if (embed_dim < 1) throw ConfigError("neuse.embed_dim must be at least 1");
  if (hops < 1) throw ConfigError("neuse.hops must be at least 1");
  if (!(dropout >= 0.0 && dropout < 1.0)) throw ConfigError("neuse.dropout must be in [0, 1)");
  if (!(alpha > 0.0)) throw ConfigError("neuse.alpha must be positive");
  if (!(lr > 0.0)) throw ConfigError("neuse.lr must be positive");
  if (batch_size < 1) throw ConfigError("neuse.batch_size must be at least 1");
  if (!(beta1 >= 0.0 && beta1 < 1.0) || !(beta2 >= 0.0 && beta2 < 1.0))
    throw ConfigError("neuse.beta1 and neuse.beta2 must be in [0, 1)");
  if (!(eps > 0.0)) throw ConfigError("neuse.eps must be positive");
  if (init_std < 0.0) throw ConfigError("neuse.init_std must be non-negative");
}

NeuSEParams NeuSEParams::zeros(const NetworkDims& dims) {
  const std::size_t d = dims.embed_dim, D = dims.memory_dim(), S = dims.num_snapshots;
  const std::size_t F = dims.feature_dim();
  NeuSEParams p;
  p.dims = dims;
  p.user_embed = Matrix(dims.num_users, d);
  p.item_embed = Matrix(dims.num_items, d);
  p.model_internal = Matrix(S, D);
  p.model_external = Matrix(S, D);
  p.user_internal = Matrix(dims.num_users, D);
  p.user_external = Matrix(dims.num_users, D);
  p.item_internal = Matrix(dims.num_items, D);
  p.item_external = Matrix(dims.num_items, D);
  p.model_proj = Matrix(1, D);
  p.user_proj = Matrix(1, D);
  p.item_proj = Matrix(1, D);
  p.model_proj_bias = Matrix(1, 1);
  p.user_proj_bias = Matrix(1, 1);
  p.item_proj_bias = Matrix(1, 1);
  p.out_weight = Matrix(F, S);
  p.out_bias = Matrix(1, S);
  for (std::size_t h = 1; h < dims.hops; ++h) {
    p.hop_attn_weight.emplace_back(F, S);
    p.hop_attn_bias.emplace_back(1, S);
    p.hop_transfer_weight.emplace_back(D, D);
    p.hop_transfer_bias.emplace_back(1, D);
  }
  return p;
}

namespace {

template <typename Self, typename Out>
void collect_tensors(Self& p, Out& out) {
  out.push_back({"user_embed", &p.user_embed});
  out.push_back({"item_embed", &p.item_embed});
  out.push_back({"model_internal", &p.model_internal});
  out.push_back({"model_external", &p.model_external});
  out.push_back({"user_internal", &p.user_internal});
  out.push_back({"user_external", &p.user_external});
  out.push_back({"item_internal", &p.item_internal});
  out.push_back({"item_external", &p.item_external});
  out.push_back({"model_proj", &p.model_proj});
  out.push_back({"user_proj", &p.user_proj});
  out.push_back({"item_proj", &p.item_proj});
  out.push_back({"model_proj_bias", &p.model_proj_bias});
  out.push_back({"user_proj_bias", &p.user_proj_bias});
  out.push_back({"item_proj_bias", &p.item_proj_bias});
  out.push_back({"out_weight", &p.out_weight});
  out.push_back({"out_bias", &p.out_bias});
  for (std::size_t h = 0; h < p.hop_attn_weight.size(); ++h) {
    const std::string hop = std::to_string(h + 1);
    out.push_back({"hop" + hop + "_attn_weight", &p.hop_attn_weight[h]});
    out.push_back({"hop" + hop + "_attn_bias", &p.hop_attn_bias[h]});
    out.push_back({"hop" + hop + "_transfer_weight", &p.hop_transfer_weight[h]});
    out.push_back({"hop" + hop + "_transfer_bias", &p.hop_transfer_bias[h]});
  }
}

}  // namespace

std::vector<NamedTensor> NeuSEParams::tensors() {
  std::vector<NamedTensor> out;
  collect_tensors(*this, out);
  return out;
}

std::vector<NamedConstTensor> NeuSEParams::tensors() const {
  std::vector<NamedConstTensor> out;
  collect_tensors(*this, out);
  return out;
}

NeuSEParams init_params(const NetworkDims& dims, const NeuSEConfig& config) {
  if (dims.num_snapshots < 1) throw ConfigError("NeuSE needs at least one snapshot");
  NeuSEParams p = NeuSEParams::zeros(dims);
  if (config.init_std == 0.0) return p;
  std::mt19937_64 rng(derive_seed(config.seed, "neuse-init"));
  std::normal_distribution<double> gauss(0.0, config.init_std);
  for (auto& t : p.tensors())
    for (double& v : t.value->flat()) v = gauss(rng);
  return p;
}

std::vector<double> embed_pair(std::size_t user, std::size_t item, const NeuSEParams& params) {
  if (user >= params.dims.num_users || item >= params.dims.num_items)
    throw OutOfRangeError("pair (" + std::to_string(user) + ", " + std::to_string(item) +
                          ") outside the embedding tables");
  std::vector<double> e;
  e.reserve(params.dims.memory_dim());
  const auto eu = params.user_embed.row(user);
  const auto ei = params.item_embed.row(item);
  e.insert(e.end(), eu.begin(), eu.end());
  e.insert(e.end(), ei.begin(), ei.end());
  return e;
}

Attention memory_attend(std::span<const double> query, const Matrix& internal,
                        const Matrix& external, std::span<const std::size_t> slots) {
  Attention a;
  a.read.assign(external.cols(), 0.0);
  if (slots.empty()) return a;
  a.slots.assign(slots.begin(), slots.end());
  a.weights.resize(slots.size());
  for (std::size_t k = 0; k < slots.size(); ++k) a.weights[k] = dot(internal.row(slots[k]), query);
  softmax_inplace(a.weights);
  for (std::size_t k = 0; k < slots.size(); ++k) {
    const auto c = external.row(slots[k]);
    const double w = a.weights[k];
    for (std::size_t j = 0; j < c.size(); ++j) a.read[j] += w * c[j];
  }
  return a;
}

double bias_project(std::span<const double> q, std::span<const double> weight, double bias) {
  return dot(weight, q) + bias;
}

namespace {

double activate(Activation a, double x) {
  switch (a) {
    case Activation::Relu: return x > 0.0 ? x : 0.0;
    case Activation::Sigmoid: return 1.0 / (1.0 + std::exp(-x));
    case Activation::Tanh: return std::tanh(x);
  }
  return x;
}

// Derivative in terms of the pre-activation and the activated value.
double activate_grad(Activation a, double pre, double out) {
  switch (a) {
    case Activation::Relu: return pre > 0.0 ? 1.0 : 0.0;
    case Activation::Sigmoid: return out * (1.0 - out);
    case Activation::Tanh: return 1.0 - out * out;
  }
  return 1.0;
}

std::vector<double> dropout_mask(std::size_t n, double rate, std::mt19937_64& rng) {
  std::bernoulli_distribution keep(1.0 - rate);
  const double scale = 1.0 / (1.0 - rate);
  std::vector<double> mask(n);
  for (double& m : mask) m = keep(rng) ? scale : 0.0;
  return mask;
}

MemoryRead read_memory(std::span<const double> query, const Matrix& internal, const Matrix& external,
                       std::span<const std::size_t> slots, const Matrix& proj, const Matrix& proj_bias) {
  MemoryRead r;
  r.attention = memory_attend(query, internal, external, slots);
  if (!r.attention.empty()) r.bias = bias_project(r.attention.read, proj.row(0), proj_bias(0, 0));
  return r;
}

std::vector<double> concat_features(std::span<const double> snapshot_preds, const HopTrace& hop) {
  std::vector<double> x;
  x.reserve(snapshot_preds.size() + 3 * hop.model.attention.read.size() + 3);
  x.insert(x.end(), snapshot_preds.begin(), snapshot_preds.end());
  for (const MemoryRead* r : {&hop.model, &hop.user, &hop.item})
    x.insert(x.end(), r->attention.read.begin(), r->attention.read.end());
  x.push_back(hop.model.bias);
  x.push_back(hop.user.bias);
  x.push_back(hop.item.bias);
  return x;
}

// logits = W^T x + b for W of shape (|x| x n).
std::vector<double> affine_t(const Matrix& w, const Matrix& b, std::span<const double> x) {
  std::vector<double> out(b.row(0).begin(), b.row(0).end());
  for (std::size_t f = 0; f < x.size(); ++f) {
    const double xf = x[f];
    if (xf == 0.0) continue;
    const auto wf = w.row(f);
    for (std::size_t s = 0; s < out.size(); ++s) out[s] += wf[s] * xf;
  }
  return out;
}

void require_finite(std::span<const double> v, const std::string& layer) {
  if (!all_finite(v)) throw NumericError("non-finite activation in " + layer);
}

std::vector<std::size_t> without(const std::vector<std::size_t>& ids, std::size_t excluded) {
  std::vector<std::size_t> out;
  out.reserve(ids.size());
  for (std::size_t id : ids)
    if (id != excluded) out.push_back(id);
  return out;
}

}  // namespace

ForwardTrace forward(std::size_t user, std::size_t item, std::span<const double> snapshot_preds,
                     const NeuSEParams& params, const NeighborIndex& neighbors,
                     const NeuSEConfig& config, Mode mode, std::mt19937_64* rng) {
  const NetworkDims& dims = params.dims;
  if (snapshot_preds.size() != dims.num_snapshots)
    throw FormatError("expected " + std::to_string(dims.num_snapshots) + " snapshot predictions, got " +
                      std::to_string(snapshot_preds.size()));
  if (user >= neighbors.num_users() || item >= neighbors.num_items())
    throw OutOfRangeError("pair (" + std::to_string(user) + ", " + std::to_string(item) +
                          ") outside the neighbor index");
  const bool use_dropout = mode == Mode::Train && config.dropout > 0.0;
  if (use_dropout && rng == nullptr) throw ConfigError("train-mode dropout needs a random source");

  ForwardTrace t;
  t.user = user;
  t.item = item;
  t.snapshot_preds.assign(snapshot_preds.begin(), snapshot_preds.end());
  t.pair_embedding = embed_pair(user, item, params);

  std::vector<double> query = t.pair_embedding;
  if (use_dropout) {
    t.embed_mask = dropout_mask(query.size(), config.dropout, *rng);
    for (std::size_t k = 0; k < query.size(); ++k) query[k] *= t.embed_mask[k];
  }

  std::vector<std::size_t> model_slots(dims.num_snapshots);
  std::iota(model_slots.begin(), model_slots.end(), 0);
  const auto user_slots = without(neighbors.users_of(item), user);
  const auto item_slots = without(neighbors.items_of(user), item);

  for (std::size_t h = 1; h <= dims.hops; ++h) {
    HopTrace hop;
    hop.query = query;
    hop.model = read_memory(query, params.model_internal, params.model_external, model_slots,
                            params.model_proj, params.model_proj_bias);
    hop.user = read_memory(query, params.user_internal, params.user_external, user_slots,
                           params.user_proj, params.user_proj_bias);
    hop.item = read_memory(query, params.item_internal, params.item_external, item_slots,
                           params.item_proj, params.item_proj_bias);
    hop.features = concat_features(snapshot_preds, hop);
    require_finite(hop.features, "memory layer of hop " + std::to_string(h));

    if (h < dims.hops) {
      const std::size_t k = h - 1;
      hop.hop_attention = affine_t(params.hop_attn_weight[k], params.hop_attn_bias[k], hop.features);
      softmax_inplace(hop.hop_attention);
      hop.hop_output.assign(dims.memory_dim(), 0.0);
      for (std::size_t s = 0; s < dims.num_snapshots; ++s) {
        const auto c = params.model_external.row(s);
        for (std::size_t j = 0; j < c.size(); ++j) hop.hop_output[j] += hop.hop_attention[s] * c[j];
      }
      const Matrix& w = params.hop_transfer_weight[k];
      const auto b = params.hop_transfer_bias[k].row(0);
      hop.pre_activation.resize(dims.memory_dim());
      hop.state.resize(dims.memory_dim());
      for (std::size_t r = 0; r < dims.memory_dim(); ++r) {
        hop.pre_activation[r] = dot(w.row(r), query) + hop.hop_output[r] + b[r];
        hop.state[r] = activate(config.activation, hop.pre_activation[r]);
      }
      require_finite(hop.state, "transfer layer of hop " + std::to_string(h));
      query = hop.state;
      if (use_dropout) {
        hop.mask = dropout_mask(query.size(), config.dropout, *rng);
        for (std::size_t r = 0; r < query.size(); ++r) query[r] *= hop.mask[r];
      }
    } else {
      t.logits = affine_t(params.out_weight, params.out_bias, hop.features);
      t.output = t.logits;
      softmax_inplace(t.output);
      require_finite(t.output, "output layer");
    }
    t.hops.push_back(std::move(hop));
  }
  return t;
}

SoftLabel soft_labels(std::span<const std::int64_t> tags, std::int64_t optimal_tag, double alpha) {
  if (!(alpha > 0.0)) throw ConfigError("soft-label alpha must be positive");
  SoftLabel label;
  label.optimal_tag = optimal_tag;
  for (std::int64_t tag : tags) {
    const double distance = std::abs(static_cast<double>(tag) - static_cast<double>(optimal_tag));
    label.x.push_back(std::pow(distance + 1.0, -alpha));
  }
  label.y = label.x;
  softmax_inplace(label.y);
  return label;
}

std::size_t optimal_snapshot(std::span<const double> preds, double target) {
  std::size_t best = 0;
  for (std::size_t s = 1; s < preds.size(); ++s)
    if (std::abs(preds[s] - target) < std::abs(preds[best] - target)) best = s;
  return best;
}

double kl_loss(std::span<const double> y, std::span<const double> y_hat) {
  double loss = 0.0;
  for (std::size_t s = 0; s < y.size(); ++s)
    if (y[s] > 0.0) loss += y[s] * (std::log(y[s]) - std::log(y_hat[s]));
  return loss;
}

namespace {

// Back through read = sum_k w_k c_k, w = softmax(internal_k . query).
void attention_backward(const Attention& a, std::span<const double> query, const Matrix& internal,
                        const Matrix& external, std::span<const double> d_read, Matrix& g_internal,
                        Matrix& g_external, std::span<double> d_query) {
  const std::size_t n = a.slots.size();
  std::vector<double> d_weight(n);
  double mix = 0.0;
  for (std::size_t k = 0; k < n; ++k) {
    const std::size_t slot = a.slots[k];
    auto ge = g_external.row(slot);
    for (std::size_t j = 0; j < ge.size(); ++j) ge[j] += a.weights[k] * d_read[j];
    d_weight[k] = dot(external.row(slot), d_read);
    mix += a.weights[k] * d_weight[k];
  }
  for (std::size_t k = 0; k < n; ++k) {
    const double d_score = a.weights[k] * (d_weight[k] - mix);
    if (d_score == 0.0) continue;
    const std::size_t slot = a.slots[k];
    auto gi = g_internal.row(slot);
    const auto mi = internal.row(slot);
    for (std::size_t j = 0; j < gi.size(); ++j) {
      gi[j] += d_score * query[j];
      d_query[j] += d_score * mi[j];
    }
  }
}

// Back through logits = W^T x + b; returns dL/dx.
std::vector<double> affine_t_backward(const Matrix& w, std::span<const double> x,
                                      std::span<const double> d_logits, Matrix& g_w, Matrix& g_b) {
  auto gb = g_b.row(0);
  for (std::size_t s = 0; s < d_logits.size(); ++s) gb[s] += d_logits[s];
  std::vector<double> d_x(x.size(), 0.0);
  for (std::size_t f = 0; f < x.size(); ++f) {
    const auto wf = w.row(f);
    auto gwf = g_w.row(f);
    const double xf = x[f];
    double acc = 0.0;
    for (std::size_t s = 0; s < d_logits.size(); ++s) {
      gwf[s] += xf * d_logits[s];
      acc += wf[s] * d_logits[s];
    }
    d_x[f] = acc;
  }
  return d_x;
}

// Back through the memory reads and bias projections that produced
// hop.features, accumulating the gradient of the hop query into d_query.
void features_backward(const HopTrace& hop, std::span<const double> d_features,
                       const NeuSEParams& p, NeuSEParams& g, std::span<double> d_query) {
  const std::size_t S = p.dims.num_snapshots, D = p.dims.memory_dim();
  struct Part {
    const MemoryRead& read;
    std::size_t offset;
    double d_bias;
    const Matrix& internal;
    const Matrix& external;
    const Matrix& proj;
    Matrix& g_internal;
    Matrix& g_external;
    Matrix& g_proj;
    Matrix& g_proj_bias;
  };
  const Part parts[3] = {
      {hop.model, S, d_features[S + 3 * D], p.model_internal, p.model_external, p.model_proj,
       g.model_internal, g.model_external, g.model_proj, g.model_proj_bias},
      {hop.user, S + D, d_features[S + 3 * D + 1], p.user_internal, p.user_external, p.user_proj,
       g.user_internal, g.user_external, g.user_proj, g.user_proj_bias},
      {hop.item, S + 2 * D, d_features[S + 3 * D + 2], p.item_internal, p.item_external, p.item_proj,
       g.item_internal, g.item_external, g.item_proj, g.item_proj_bias},
  };
  std::vector<double> d_read(D);
  for (const Part& part : parts) {
    if (part.read.attention.empty()) continue;
    const auto w = part.proj.row(0);
    auto gw = part.g_proj.row(0);
    for (std::size_t j = 0; j < D; ++j) {
      d_read[j] = d_features[part.offset + j] + part.d_bias * w[j];
      gw[j] += part.d_bias * part.read.attention.read[j];
    }
    part.g_proj_bias(0, 0) += part.d_bias;
    attention_backward(part.read.attention, hop.query, part.internal, part.external, d_read,
                       part.g_internal, part.g_external, d_query);
  }
}

}  // namespace

void backward(const ForwardTrace& trace, const SoftLabel& label, const NeuSEParams& params,
              const NeuSEConfig& config, NeuSEParams& grads, double scale) {
  const NetworkDims& dims = params.dims;
  const std::size_t S = dims.num_snapshots, D = dims.memory_dim();
  if (trace.hops.size() != dims.hops || label.y.size() != S)
    throw FormatError("trace or label does not match the network shape");

  // Softmax followed by KL against a fixed target: dL/dlogits = yhat - y.
  std::vector<double> d_logits(S);
  for (std::size_t s = 0; s < S; ++s) d_logits[s] = scale * (trace.output[s] - label.y[s]);

  const HopTrace& last = trace.hops.back();
  auto d_features = affine_t_backward(params.out_weight, last.features, d_logits, grads.out_weight,
                                       grads.out_bias);
  std::vector<double> d_query(D, 0.0);
  features_backward(last, d_features, params, grads, d_query);

  for (std::size_t h = dims.hops - 1; h >= 1; --h) {
    const HopTrace& hop = trace.hops[h - 1];
    const std::size_t k = h - 1;
    // d_query holds dL/d(query of hop h+1) = dL/d(dropout(z^h)).
    std::vector<double> d_pre(D);
    for (std::size_t r = 0; r < D; ++r) {
      const double d_state = hop.mask.empty() ? d_query[r] : d_query[r] * hop.mask[r];
      d_pre[r] = d_state * activate_grad(config.activation, hop.pre_activation[r], hop.state[r]);
    }
    std::vector<double> d_prev(D, 0.0);
    const Matrix& w = params.hop_transfer_weight[k];
    Matrix& gw = grads.hop_transfer_weight[k];
    auto gb = grads.hop_transfer_bias[k].row(0);
    for (std::size_t r = 0; r < D; ++r) {
      gb[r] += d_pre[r];
      const auto wr = w.row(r);
      auto gwr = gw.row(r);
      for (std::size_t c = 0; c < D; ++c) {
        gwr[c] += d_pre[r] * hop.query[c];
        d_prev[c] += wr[c] * d_pre[r];
      }
    }
    // o = sum_s p_s c_s
    std::vector<double> d_p(S);
    double mix = 0.0;
    for (std::size_t s = 0; s < S; ++s) {
      const auto c = params.model_external.row(s);
      auto gc = grads.model_external.row(s);
      for (std::size_t j = 0; j < D; ++j) gc[j] += hop.hop_attention[s] * d_pre[j];
      d_p[s] = dot(c, d_pre);
      mix += hop.hop_attention[s] * d_p[s];
    }
    std::vector<double> d_hop_logits(S);
    for (std::size_t s = 0; s < S; ++s) d_hop_logits[s] = hop.hop_attention[s] * (d_p[s] - mix);
    auto d_hop_features = affine_t_backward(params.hop_attn_weight[k], hop.features, d_hop_logits,
                                            grads.hop_attn_weight[k], grads.hop_attn_bias[k]);
    features_backward(hop, d_hop_features, params, grads, d_prev);
    d_query = std::move(d_prev);
  }

  // d_query now holds dL/d(dropout(e_ui)).
  const std::size_t d = dims.embed_dim;
  auto gu = grads.user_embed.row(trace.user);
  auto gi = grads.item_embed.row(trace.item);
  for (std::size_t j = 0; j < 2 * d; ++j) {
    const double v = trace.embed_mask.empty() ? d_query[j] : d_query[j] * trace.embed_mask[j];
    if (j < d)
      gu[j] += v;
    else
      gi[j - d] += v;
  }
}

AdamState adam_init(const std::vector<NamedConstTensor>& params) {
  AdamState state;
  for (const auto& t : params) {
    state.first.emplace_back(t.value->size(), 0.0);
    state.second.emplace_back(t.value->size(), 0.0);
  }
  return state;
}

void adam_step(const std::vector<NamedTensor>& params, const std::vector<NamedConstTensor>& grads,
               AdamState& state, const AdamConfig& config) {
  if (params.size() != grads.size() || params.size() != state.first.size())
    throw FormatError("optimizer state does not match the parameter pack");
  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto p = params[k].value->flat();
    const auto g = grads[k].value->flat();
    auto& m = state.first[k];
    auto& v = state.second[k];
    for (std::size_t j = 0; j < p.size(); ++j) {
      m[j] = config.beta1 * m[j] + (1.0 - config.beta1) * g[j];
      v[j] = config.beta2 * v[j] + (1.0 - config.beta2) * g[j] * g[j];
      const double m_hat = m[j] / correct1;
      const double v_hat = v[j] / correct2;
      p[j] -= config.lr * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

double ensemble_predict(std::span<const double> weights, std::span<const double> snapshot_preds) {
  if (weights.size() != snapshot_preds.size())
    throw FormatError("ensemble weights of length " + std::to_string(weights.size()) + " for " +
                      std::to_string(snapshot_preds.size()) + " snapshot predictions");
  return dot(weights, snapshot_preds);
}

double neuse_score(const NeuSEParams& params, const NeuSEConfig& config, const NeighborIndex& neighbors,
                   const SnapshotSet& set, std::size_t row) {
  const UserItem pair = set.pairs()[row];
  const auto preds = set.row(row);
  const ForwardTrace t = forward(pair.user, pair.item, preds, params, neighbors, config, Mode::Infer);
  return ensemble_predict(t.output, preds);
}

NeuSETrainResult train_neuse(const SnapshotSet& train, std::span<const double> train_targets,
                             const SnapshotSet& validation_set, const EvalTarget& validation,
                             const NeighborIndex& neighbors, const NeuSEConfig& config) {
  config.validate();
  if (train_targets.size() != train.num_pairs())
    throw FormatError("one training target per snapshot-set row is required");
  if (validation_set.tags() != train.tags())
    throw FormatError("train and validation snapshot sets have different snapshots");

  NetworkDims dims{neighbors.num_users(), neighbors.num_items(), train.num_snapshots(),
                   config.embed_dim, config.hops};
  const auto tags = train.tags();
  // There are only N_m distinct soft labels, one per optimal snapshot.
  std::vector<SoftLabel> labels;
  for (std::int64_t tag : tags) labels.push_back(soft_labels(tags, tag, config.alpha));
  std::vector<std::size_t> optimal(train.num_pairs());
  for (std::size_t r = 0; r < train.num_pairs(); ++r)
    optimal[r] = optimal_snapshot(train.row(r), train_targets[r]);

  auto accumulate = [&](const NeuSEParams& p, NeuSEParams& g, std::size_t row, double scale,
                        std::mt19937_64& rng) {
    const UserItem pair = train.pairs()[row];
    const ForwardTrace t = forward(pair.user, pair.item, train.row(row), p, neighbors, config,
                                   Mode::Train, &rng);
    backward(t, labels[optimal[row]], p, config, g, scale);
  };
  auto mean_loss = [&](const NeuSEParams& p) {
    double total = 0.0;
    for (std::size_t r = 0; r < train.num_pairs(); ++r) {
      const UserItem pair = train.pairs()[r];
      const ForwardTrace t =
          forward(pair.user, pair.item, train.row(r), p, neighbors, config, Mode::Infer);
      total += kl_loss(labels[optimal[r]].y, t.output);
    }
    return train.num_pairs() == 0 ? 0.0 : total / static_cast<double>(train.num_pairs());
  };
  auto score = [&](const NeuSEParams& p) {
    return [&p, &config, &neighbors, &validation_set](std::size_t row) {
      return neuse_score(p, config, neighbors, validation_set, row);
    };
  };

  detail::LoopSettings settings{config.max_epochs, config.batch_size, config.adam(), config.seed};
  auto outcome = detail::run_training(init_params(dims, config), train.num_pairs(), settings,
                                      validation, accumulate, mean_loss, score);
  return {std::move(outcome.params), outcome.best_epoch, std::move(outcome.history)};
}

namespace {

constexpr char kBlobMagic[8] = {'N', 'E', 'U', 'S', 'E', 'P', 'R', 'M'};
constexpr std::uint32_t kBlobVersion = 1;

template <typename T>
void put(std::ostream& out, const T& v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename T>
T get(std::istream& in, const std::string& what) {
  T v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw FormatError("truncated parameter blob while reading " + what);
  return v;
}

}  // namespace

void save_params(const NeuSEParams& params, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write '" + path.string() + "'");
  out.write(kBlobMagic, sizeof kBlobMagic);
  put(out, kBlobVersion);
  for (std::uint64_t v : {params.dims.num_users, params.dims.num_items, params.dims.num_snapshots,
                          params.dims.embed_dim, params.dims.hops})
    put(out, v);
  const auto tensors = params.tensors();
  put(out, static_cast<std::uint64_t>(tensors.size()));
  for (const auto& t : tensors) {
    put(out, static_cast<std::uint64_t>(t.name.size()));
    out.write(t.name.data(), static_cast<std::streamsize>(t.name.size()));
    put(out, static_cast<std::uint64_t>(t.value->rows()));
    put(out, static_cast<std::uint64_t>(t.value->cols()));
    out.write(reinterpret_cast<const char*>(t.value->flat().data()),
              static_cast<std::streamsize>(t.value->size() * sizeof(double)));
  }
  if (!out) throw Error("failed writing '" + path.string() + "'");
}

NeuSEParams load_params(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw FormatError("cannot open parameter blob '" + path.string() + "'");
  char magic[sizeof kBlobMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kBlobMagic, sizeof magic) != 0)
    throw FormatError("'" + path.string() + "' is not a NeuSE parameter blob");
  const auto version = get<std::uint32_t>(in, "version");
  if (version != kBlobVersion)
    throw FormatError("unsupported parameter blob version " + std::to_string(version));
  NetworkDims dims;
  dims.num_users = get<std::uint64_t>(in, "dims");
  dims.num_items = get<std::uint64_t>(in, "dims");
  dims.num_snapshots = get<std::uint64_t>(in, "dims");
  dims.embed_dim = get<std::uint64_t>(in, "dims");
  dims.hops = get<std::uint64_t>(in, "dims");
  if (dims.hops < 1 || dims.embed_dim < 1 || dims.num_snapshots < 1)
    throw FormatError("invalid network shape in parameter blob");
  NeuSEParams params = NeuSEParams::zeros(dims);
  auto tensors = params.tensors();
  if (get<std::uint64_t>(in, "tensor count") != tensors.size())
    throw FormatError("tensor count does not match the network shape");
  for (auto& t : tensors) {
    const auto name_len = get<std::uint64_t>(in, "name");
    if (name_len > 256) throw FormatError("corrupt tensor name");
    std::string name(name_len, '\0');
    in.read(name.data(), static_cast<std::streamsize>(name_len));
    const auto rows = get<std::uint64_t>(in, name);
    const auto cols = get<std::uint64_t>(in, name);
    if (name != t.name || rows != t.value->rows() || cols != t.value->cols())
      throw FormatError("tensor '" + name + "' does not match expected '" + t.name + "'");
    in.read(reinterpret_cast<char*>(t.value->flat().data()),
            static_cast<std::streamsize>(t.value->size() * sizeof(double)));
    if (!in) throw FormatError("truncated parameter blob in tensor '" + t.name + "'");
  }
  return params;
}

}  // namespace neuse
