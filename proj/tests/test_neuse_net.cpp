#include <cmath>
#include <fstream>
#include <numbers>
#include <numeric>
#include <random>

#include "doctest.h"
#include "neuse/neuse_net.hpp"
#include "support.hpp"

using namespace neuse;

namespace {

// Every pair rated except the targets (u, u), so neighborhoods are non-empty.
RatingDataset dense_train(std::size_t n) {
  std::vector<Interaction> rows;
  std::int64_t t = 0;
  for (std::size_t u = 0; u < n; ++u)
    for (std::size_t i = 0; i < n; ++i)
      if (u != i) rows.push_back({u, i, static_cast<double>(1 + (u + 2 * i) % 5), ++t});
  return RatingDataset(std::move(rows), n, n, {1.0, 5.0});
}

NeuSEConfig small_config(std::size_t hops, Activation act) {
  NeuSEConfig c;
  c.embed_dim = 2;
  c.hops = hops;
  c.activation = act;
  c.dropout = 0.0;
  c.init_std = 0.5;
  c.seed = 11;
  return c;
}

double loss_at(std::size_t u, std::size_t i, std::span<const double> preds, const NeuSEParams& p,
               const NeighborIndex& nb, const NeuSEConfig& c, const SoftLabel& label) {
  return kl_loss(label.y, forward(u, i, preds, p, nb, c, Mode::Infer).output);
}

bool on_simplex(std::span<const double> v, double tol = 1e-9) {
  double sum = 0.0;
  for (double x : v) {
    if (x < 0.0) return false;
    sum += x;
  }
  return std::abs(sum - 1.0) <= tol;
}

// Central-difference check of every parameter group for one pair.
void check_gradients(std::size_t hops, Activation act) {
  const auto train = dense_train(3);
  const auto nb = build_neighbor_index(train, 50);
  const auto config = small_config(hops, act);
  const NetworkDims dims{3, 3, 3, config.embed_dim, hops};
  NeuSEParams params = init_params(dims, config);
  const std::vector<double> preds{2.5, 3.75, 4.25};
  const std::vector<std::int64_t> tags{10, 20, 30};
  const auto label = soft_labels(tags, 20, 1.0);

  const auto trace = forward(1, 1, preds, params, nb, config, Mode::Train);
  NeuSEParams grads = NeuSEParams::zeros(dims);
  backward(trace, label, params, config, grads);

  const double step = 1e-5;
  auto tensors = params.tensors();
  const auto grad_tensors = std::as_const(grads).tensors();
  REQUIRE(tensors.size() == grad_tensors.size());
  for (std::size_t t = 0; t < tensors.size(); ++t) {
    auto values = tensors[t].value->flat();
    std::vector<double> numeric(values.size());
    for (std::size_t k = 0; k < values.size(); ++k) {
      const double saved = values[k];
      values[k] = saved + step;
      const double up = loss_at(1, 1, preds, params, nb, config, label);
      values[k] = saved - step;
      const double down = loss_at(1, 1, preds, params, nb, config, label);
      values[k] = saved;
      numeric[k] = (up - down) / (2.0 * step);
    }
    const auto analytic = grad_tensors[t].value->flat();
    INFO("tensor " << tensors[t].name);
    CHECK(testing::relative_error(analytic, numeric) < 1e-4);
  }
}

}  // namespace

TEST_CASE("config validation and activation names") {
  NeuSEConfig c;
  CHECK_NOTHROW(c.validate());
  c.dropout = 1.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.alpha = 0.0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c = {};
  c.hops = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  CHECK(parse_activation("tanh") == Activation::Tanh);
  CHECK(to_string(Activation::Sigmoid) == "sigmoid");
  CHECK_THROWS_AS(parse_activation("gelu"), ConfigError);
}

TEST_CASE("parameter shapes") {
  const NetworkDims dims{5, 7, 4, 3, 3};
  const auto p = NeuSEParams::zeros(dims);
  CHECK(dims.memory_dim() == 6);
  CHECK(dims.feature_dim() == 4 + 3 * 6 + 3);
  CHECK(p.user_embed.rows() == 5);
  CHECK(p.item_internal.rows() == 7);
  CHECK(p.model_external.rows() == 4);
  CHECK(p.out_weight.rows() == dims.feature_dim());
  CHECK(p.out_weight.cols() == 4);
  REQUIRE(p.hop_attn_weight.size() == 2);
  CHECK(p.hop_attn_weight[0].rows() == dims.feature_dim());
  CHECK(p.hop_attn_weight[0].cols() == 4);
  CHECK(p.hop_transfer_weight[1].rows() == 6);
  CHECK(p.hop_transfer_weight[1].cols() == 6);
  CHECK(NeuSEParams::zeros({5, 7, 4, 3, 1}).hop_attn_weight.empty());
}

TEST_CASE("initialization") {
  const NetworkDims dims{1000, 50, 5, 16, 2};
  NeuSEConfig c;
  c.seed = 3;
  const auto a = init_params(dims, c);
  CHECK(a == init_params(dims, c));
  const auto values = a.user_embed.flat();
  REQUIRE(values.size() >= 10000);
  double sq = 0.0;
  for (double v : values) sq += v * v;
  CHECK(std::abs(std::sqrt(sq / static_cast<double>(values.size())) - 0.01) < 0.001);

  c.init_std = 0.0;
  const auto z = init_params(dims, c);
  CHECK(z == NeuSEParams::zeros(dims));
}

TEST_CASE("pair embedding") {
  auto p = NeuSEParams::zeros({2, 2, 1, 1, 1});
  p.user_embed(0, 0) = 2.0;
  p.item_embed(1, 0) = 3.0;
  p.user_embed(1, 0) = 5.0;
  p.item_embed(0, 0) = 7.0;
  CHECK(embed_pair(0, 1, p) == std::vector<double>{2.0, 3.0});
  CHECK(embed_pair(1, 0, p) == std::vector<double>{5.0, 7.0});
  CHECK(embed_pair(0, 1, NeuSEParams::zeros({2, 2, 1, 1, 1})) == std::vector<double>{0.0, 0.0});
  CHECK_THROWS_AS(embed_pair(2, 0, p), OutOfRangeError);
}

TEST_CASE("memory attention") {
  Matrix internal(3, 2, 0.0), external(3, 2, 0.0);
  external(0, 0) = 1.0;
  external(1, 1) = 4.0;
  external(2, 0) = -2.0;
  const std::vector<double> query{1.0, 0.0};
  const std::vector<std::size_t> all{0, 1, 2};
  const auto uniform = memory_attend(query, internal, external, all);
  for (double w : uniform.weights) CHECK(w == doctest::Approx(1.0 / 3.0));
  CHECK(uniform.read[0] == doctest::Approx(-1.0 / 3.0));
  CHECK(uniform.read[1] == doctest::Approx(4.0 / 3.0));

  internal(0, 0) = std::log(2.0);
  const std::vector<std::size_t> two{0, 1};
  const auto skewed = memory_attend(query, internal, external, two);
  CHECK(skewed.weights[0] == doctest::Approx(2.0 / 3.0));
  CHECK(skewed.weights[1] == doctest::Approx(1.0 / 3.0));

  const std::vector<std::size_t> one{2};
  const auto single = memory_attend(query, internal, external, one);
  CHECK(single.weights == std::vector<double>{1.0});
  CHECK(single.read == std::vector<double>{-2.0, 0.0});

  const auto empty = memory_attend(query, internal, external, {});
  CHECK(empty.empty());
  CHECK(empty.read == std::vector<double>{0.0, 0.0});
}

TEST_CASE("bias projection") {
  const std::vector<double> zero{0.0, 0.0}, q{5.0, 2.0}, e1{1.0, 0.0};
  CHECK(bias_project(zero, e1, 0.75) == 0.75);
  CHECK(bias_project(q, e1, 0.0) == 5.0);
  CHECK(bias_project(q, zero, -1.0) == -1.0);
}

TEST_CASE("single-hop forward matches a direct computation") {
  const auto nb = build_neighbor_index(dense_train(3), 50);
  auto config = small_config(1, Activation::Relu);
  const NetworkDims dims{3, 3, 3, 2, 1};
  const auto p = init_params(dims, config);
  const std::vector<double> preds{1.5, 2.0, 4.0};
  const auto t = forward(0, 0, preds, p, nb, config, Mode::Infer);
  REQUIRE(t.hops.size() == 1);
  CHECK(t.hops[0].hop_attention.empty());

  // Features [q_p, q_m, q_u, q_i, b_m, b_u, b_i] scored by the output layer.
  const auto e = embed_pair(0, 0, p);
  const std::vector<std::size_t> models{0, 1, 2}, users{1, 2}, items{1, 2};
  const auto qm = memory_attend(e, p.model_internal, p.model_external, models).read;
  const auto qu = memory_attend(e, p.user_internal, p.user_external, users).read;
  const auto qi = memory_attend(e, p.item_internal, p.item_external, items).read;
  std::vector<double> f(preds);
  f.insert(f.end(), qm.begin(), qm.end());
  f.insert(f.end(), qu.begin(), qu.end());
  f.insert(f.end(), qi.begin(), qi.end());
  f.push_back(bias_project(qm, p.model_proj.row(0), p.model_proj_bias(0, 0)));
  f.push_back(bias_project(qu, p.user_proj.row(0), p.user_proj_bias(0, 0)));
  f.push_back(bias_project(qi, p.item_proj.row(0), p.item_proj_bias(0, 0)));
  REQUIRE(f.size() == dims.feature_dim());
  std::vector<double> logits(3);
  for (std::size_t s = 0; s < 3; ++s) {
    logits[s] = p.out_bias(0, s);
    for (std::size_t k = 0; k < f.size(); ++k) logits[s] += p.out_weight(k, s) * f[k];
  }
  double norm = 0.0;
  for (double l : logits) norm += std::exp(l);
  for (std::size_t s = 0; s < 3; ++s) CHECK(t.output[s] == doctest::Approx(std::exp(logits[s]) / norm).epsilon(1e-12));
}

TEST_CASE("one snapshot always gets the full weight") {
  const auto nb = build_neighbor_index(dense_train(3), 50);
  auto config = small_config(2, Activation::Tanh);
  const auto p = init_params({3, 3, 1, 2, 2}, config);
  for (std::size_t u = 0; u < 3; ++u) {
    const std::vector<double> preds{1.0 + static_cast<double>(u)};
    CHECK(forward(u, 2, preds, p, nb, config, Mode::Infer).output == std::vector<double>{1.0});
  }
}

TEST_CASE("dropout off makes train and infer agree bit-exactly") {
  const auto nb = build_neighbor_index(dense_train(4), 50);
  auto config = small_config(3, Activation::Relu);
  const auto p = init_params({4, 4, 3, 2, 3}, config);
  const std::vector<double> preds{2.0, 3.0, 3.5};
  std::mt19937_64 rng(1);
  const auto train = forward(1, 1, preds, p, nb, config, Mode::Train, &rng);
  const auto infer = forward(1, 1, preds, p, nb, config, Mode::Infer);
  CHECK(train.output == infer.output);
  CHECK(train.embed_mask.empty());

  config.dropout = 0.5;
  CHECK_THROWS_AS(forward(1, 1, preds, p, nb, config, Mode::Train), ConfigError);
  const auto noisy = forward(1, 1, preds, p, nb, config, Mode::Train, &rng);
  REQUIRE(noisy.embed_mask.size() == 4);
  for (double m : noisy.embed_mask) CHECK((m == 0.0 || m == 2.0));
  CHECK(forward(1, 1, preds, p, nb, config, Mode::Infer).output == infer.output);
}

TEST_CASE("forward rejects malformed inputs") {
  const auto nb = build_neighbor_index(dense_train(3), 50);
  const auto config = small_config(2, Activation::Relu);
  const auto p = init_params({3, 3, 3, 2, 2}, config);
  CHECK_THROWS_AS(forward(0, 0, std::vector<double>{1.0, 2.0}, p, nb, config, Mode::Infer), FormatError);
  CHECK_THROWS_AS(forward(3, 0, std::vector<double>{1.0, 2.0, 3.0}, p, nb, config, Mode::Infer),
                  OutOfRangeError);
  auto bad = p;
  bad.out_bias(0, 0) = NAN;
  try {
    forward(0, 0, std::vector<double>{1.0, 2.0, 3.0}, bad, nb, config, Mode::Infer);
    FAIL("expected a numeric error");
  } catch (const NumericError& e) {
    CHECK(std::string(e.what()).find("output") != std::string::npos);
  }
}

TEST_CASE("empty neighborhoods read zeros") {
  // User 0 rated only item 0 and item 0 has no other raters.
  const RatingDataset train({{0, 0, 3.0, 1}, {1, 1, 4.0, 2}}, 2, 2, {1.0, 5.0});
  const auto nb = build_neighbor_index(train, 50);
  const auto config = small_config(2, Activation::Relu);
  const auto p = init_params({2, 2, 2, 2, 2}, config);
  const auto t = forward(0, 0, std::vector<double>{2.0, 3.0}, p, nb, config, Mode::Infer);
  for (const auto& hop : t.hops) {
    CHECK(hop.user.attention.empty());
    CHECK(hop.item.attention.empty());
    CHECK(hop.user.bias == 0.0);
    for (double v : hop.item.attention.read) CHECK(v == 0.0);
  }
  CHECK(on_simplex(t.output));
}

TEST_CASE("zero transfer weights leave a finite hop state") {
  const auto nb = build_neighbor_index(dense_train(3), 50);
  const auto config = small_config(2, Activation::Relu);
  auto p = init_params({3, 3, 3, 2, 2}, config);
  p.hop_transfer_weight[0].fill(0.0);
  p.hop_transfer_bias[0].fill(0.0);
  const auto t = forward(2, 2, std::vector<double>{1.0, 2.0, 5.0}, p, nb, config, Mode::Infer);
  const auto& hop = t.hops[0];
  for (std::size_t r = 0; r < hop.state.size(); ++r) {
    CHECK(hop.state[r] == std::max(0.0, hop.hop_output[r]));
    CHECK(std::isfinite(hop.state[r]));
  }
}

TEST_CASE("attention vectors and outputs lie on the simplex") {
  const auto train = testing::random_ratings(12, 10, 5, 21);
  const auto nb = build_neighbor_index(train, 3);
  std::mt19937_64 rng(4);
  std::uniform_real_distribution<double> rating(1.0, 5.0);
  for (Activation act : {Activation::Relu, Activation::Sigmoid, Activation::Tanh}) {
    auto config = small_config(3, act);
    config.init_std = 1.0;
    const auto p = init_params({12, 10, 4, 2, 3}, config);
    for (int trial = 0; trial < 300; ++trial) {
      const std::size_t u = rng() % 12, i = rng() % 10;
      std::vector<double> preds(4);
      for (double& v : preds) v = rating(rng);
      const auto t = forward(u, i, preds, p, nb, config, Mode::Infer);
      CHECK(on_simplex(t.output));
      for (const auto& hop : t.hops) {
        CHECK(on_simplex(hop.model.attention.weights));
        if (!hop.user.attention.empty()) CHECK(on_simplex(hop.user.attention.weights));
        if (!hop.item.attention.empty()) CHECK(on_simplex(hop.item.attention.weights));
        if (!hop.hop_attention.empty()) CHECK(on_simplex(hop.hop_attention));
      }
      const double r = ensemble_predict(t.output, preds);
      CHECK(r >= *std::min_element(preds.begin(), preds.end()) - 1e-12);
      CHECK(r <= *std::max_element(preds.begin(), preds.end()) + 1e-12);
    }
  }
}

TEST_CASE("soft labels") {
  const std::vector<std::int64_t> tags{10, 20, 30};
  const auto label = soft_labels(tags, 20, 1.0);
  // Independent evaluation: x = (1/11, 1, 1/11), y = softmax(x).
  const double a = std::exp(1.0 / 11.0), b = std::exp(1.0);
  const double z = 2.0 * a + b;
  CHECK(label.x[0] == doctest::Approx(1.0 / 11.0).epsilon(1e-15));
  CHECK(label.y[0] == doctest::Approx(a / z).epsilon(1e-14));
  CHECK(label.y[1] == doctest::Approx(b / z).epsilon(1e-14));
  CHECK(std::abs(label.y[1] - 0.5538) < 1e-4);
  CHECK(std::abs(label.y[0] - 0.2231) < 1e-4);
  CHECK(label.optimal_tag == 20);
  CHECK(on_simplex(label.y, 1e-12));

  const std::vector<std::int64_t> same{20, 20, 20};
  for (double y : soft_labels(same, 20, 1.0).y) CHECK(y == doctest::Approx(1.0 / 3.0).epsilon(1e-15));

  // Large alpha sends every non-optimal x to 0, so y_opt tends to e/(e+2).
  const auto sharp = soft_labels(tags, 20, 50.0);
  CHECK(sharp.y[1] == doctest::Approx(std::numbers::e / (std::numbers::e + 2.0)).epsilon(1e-12));
  CHECK(sharp.y[1] > label.y[1]);
  CHECK_THROWS_AS(soft_labels(tags, 20, 0.0), ConfigError);
}

TEST_CASE("soft labels decrease with tag distance") {
  std::vector<std::int64_t> tags;
  for (std::int64_t t = 10; t <= 90; t += 10) tags.push_back(t);
  for (double alpha : {0.25, 1.0, 3.0})
    for (std::int64_t opt : {10, 50, 90}) {
      const auto label = soft_labels(tags, opt, alpha);
      CHECK(on_simplex(label.y, 1e-12));
      for (std::size_t s = 0; s < tags.size(); ++s)
        for (std::size_t r = 0; r < tags.size(); ++r)
          if (std::abs(tags[s] - opt) < std::abs(tags[r] - opt)) CHECK(label.y[s] > label.y[r]);
    }
}

TEST_CASE("soft labels are permutation-equivariant and shift-invariant") {
  const std::vector<std::int64_t> tags{10, 40, 20, 70};
  const auto base = soft_labels(tags, 40, 1.0);
  const std::vector<std::int64_t> permuted{70, 10, 40, 20};
  const auto p = soft_labels(permuted, 40, 1.0);
  CHECK(p.y[0] == doctest::Approx(base.y[3]).epsilon(1e-15));
  CHECK(p.y[1] == doctest::Approx(base.y[0]).epsilon(1e-15));
  CHECK(p.y[2] == doctest::Approx(base.y[1]).epsilon(1e-15));
  std::vector<std::int64_t> shifted;
  for (auto t : tags) shifted.push_back(t + 1000);
  const auto s = soft_labels(shifted, 1040, 1.0);
  for (std::size_t k = 0; k < tags.size(); ++k) CHECK(s.y[k] == base.y[k]);
}

TEST_CASE("optimal snapshot") {
  CHECK(optimal_snapshot(std::vector<double>{3.0, 4.2, 4.6}, 4.5) == 2);
  CHECK(optimal_snapshot(std::vector<double>{3.5, 4.5, 4.0}, 4.0) == 2);
  CHECK(optimal_snapshot(std::vector<double>{3.0, 5.0}, 4.0) == 0);
}

TEST_CASE("KL divergence") {
  const std::vector<double> y{0.2, 0.3, 0.5};
  CHECK(kl_loss(y, y) == 0.0);
  CHECK(kl_loss(std::vector<double>{1.0, 0.0}, std::vector<double>{0.5, 0.5}) ==
        doctest::Approx(std::log(2.0)));
  std::mt19937_64 rng(8);
  std::uniform_real_distribution<double> u(0.01, 1.0);
  for (int trial = 0; trial < 200; ++trial) {
    std::vector<double> a(4), b(4);
    for (auto& v : a) v = u(rng);
    for (auto& v : b) v = u(rng);
    softmax_inplace(a);
    softmax_inplace(b);
    CHECK(kl_loss(a, b) >= 0.0);
  }
}

TEST_CASE("output bias gradient vanishes when the label matches") {
  const auto nb = build_neighbor_index(dense_train(3), 50);
  const auto config = small_config(2, Activation::Tanh);
  const NetworkDims dims{3, 3, 3, 2, 2};
  const auto p = init_params(dims, config);
  const std::vector<double> preds{1.0, 2.0, 3.0};
  const auto t = forward(0, 0, preds, p, nb, config, Mode::Train);
  SoftLabel label;
  label.y = t.output;
  auto g = NeuSEParams::zeros(dims);
  backward(t, label, p, config, g);
  for (double v : g.out_bias.flat()) CHECK(std::abs(v) < 1e-15);
}

TEST_CASE("gradients match finite differences") {
  SUBCASE("one hop") { check_gradients(1, Activation::Tanh); }
  SUBCASE("two hops, relu") { check_gradients(2, Activation::Relu); }
  SUBCASE("two hops, sigmoid") { check_gradients(2, Activation::Sigmoid); }
  SUBCASE("three hops, tanh") { check_gradients(3, Activation::Tanh); }
}

TEST_CASE("parameters outside the pair's graph get no gradient") {
  // User 3 shares no item with the target item 0 and is not the target.
  std::vector<Interaction> rows{{0, 1, 3, 1}, {1, 0, 4, 2}, {2, 0, 2, 3}, {3, 2, 5, 4}, {0, 2, 1, 5}};
  const RatingDataset train(std::move(rows), 4, 3, {1.0, 5.0});
  const auto nb = build_neighbor_index(train, 50);
  const auto config = small_config(2, Activation::Tanh);
  const NetworkDims dims{4, 3, 2, 2, 2};
  const auto p = init_params(dims, config);
  const auto t = forward(0, 0, std::vector<double>{2.0, 4.0}, p, nb, config, Mode::Train);
  auto g = NeuSEParams::zeros(dims);
  backward(t, soft_labels(std::vector<std::int64_t>{1, 2}, 1, 1.0), p, config, g);
  for (double v : g.user_embed.row(3)) CHECK(v == 0.0);
  for (double v : g.user_internal.row(3)) CHECK(v == 0.0);
  for (double v : g.user_external.row(3)) CHECK(v == 0.0);
  for (double v : g.item_embed.row(1)) CHECK(v == 0.0);
  bool touched = false;
  for (double v : g.user_internal.row(1)) touched = touched || v != 0.0;
  CHECK(touched);
}

TEST_CASE("Adam updates") {
  Matrix w(1, 3, 1.0), g(1, 3, 0.0);
  std::vector<NamedTensor> params{{"w", &w}};
  std::vector<NamedConstTensor> grads{{"w", &g}};
  AdamConfig config;
  config.lr = 0.1;
  auto state = adam_init({{"w", &w}});
  adam_step(params, grads, state, config);
  CHECK(w == Matrix(1, 3, 1.0));

  g(0, 0) = 3.0;
  g(0, 1) = -0.5;
  g(0, 2) = 1e-3;
  Matrix fresh(1, 3, 1.0);
  std::vector<NamedTensor> fresh_params{{"w", &fresh}};
  auto first = adam_init({{"w", &fresh}});
  adam_step(fresh_params, grads, first, config);
  // First step: -lr * g / (|g| + eps).
  for (std::size_t k = 0; k < 3; ++k) {
    const double gk = g(0, k);
    const double expected = -config.lr * gk / (std::abs(gk) + config.eps);
    CHECK(fresh(0, k) - 1.0 == doctest::Approx(expected).epsilon(1e-9));
  }

  // Two steps at lr differ from one step at 2 lr.
  Matrix twice(1, 3, 1.0), once(1, 3, 1.0);
  g.fill(0.0);
  g(0, 0) = 1.0;
  std::vector<NamedTensor> twice_p{{"w", &twice}}, once_p{{"w", &once}};
  auto s2 = adam_init({{"w", &twice}});
  auto s1 = adam_init({{"w", &once}});
  AdamConfig doubled = config;
  doubled.lr = 0.2;
  adam_step(twice_p, grads, s2, config);
  g(0, 0) = 3.0;
  adam_step(twice_p, grads, s2, config);
  adam_step(once_p, grads, s1, doubled);
  CHECK(twice(0, 0) != doctest::Approx(once(0, 0)));
  CHECK(s2.step == 2);
}

TEST_CASE("ensemble prediction") {
  const std::vector<double> preds{1.0, 2.0, 4.5};
  const std::vector<double> uniform(3, 1.0 / 3.0);
  CHECK(ensemble_predict(uniform, preds) == doctest::Approx(7.5 / 3.0).epsilon(1e-15));
  CHECK(ensemble_predict(std::vector<double>{0.0, 1.0, 0.0}, preds) == 2.0);
  const std::vector<double> same(3, 3.25);
  CHECK(ensemble_predict(std::vector<double>{0.1, 0.6, 0.3}, same) == doctest::Approx(3.25).epsilon(1e-15));
  CHECK_THROWS_AS(ensemble_predict(uniform, std::vector<double>{1.0}), FormatError);
}

namespace {

struct ToyProblem {
  RatingDataset train;
  NeighborIndex neighbors;
  SnapshotSet train_set;
  SnapshotSet validation_set;
  std::vector<double> targets;
  RatingDataset validation;
};

// Snapshot s predicts the rating shifted by a pair-dependent offset, so the
// best snapshot varies with the pair.
ToyProblem toy_problem() {
  ToyProblem t;
  const auto all = testing::random_ratings(30, 20, 8, 31);
  const auto split = chronological_leave_one_out(all);
  t.train = split.train;
  t.validation = split.validation;
  t.neighbors = build_neighbor_index(t.train, 50);
  std::vector<SnapshotMeta> metas{{0, 10, "toy", 0}, {1, 20, "toy", 0}, {2, 30, "toy", 0}};
  t.train_set = SnapshotSet(metas, RatingScale{1.0, 5.0});
  t.validation_set = SnapshotSet(metas, RatingScale{1.0, 5.0});
  auto fill = [](SnapshotSet& set, const RatingDataset& ds, std::vector<double>* targets) {
    for (const auto& x : ds.interactions()) {
      const double shift = (x.user % 3 == 0) ? 0.0 : (x.user % 3 == 1 ? 0.5 : -0.5);
      set.add({x.user, x.item}, std::vector<double>{x.rating + shift - 0.4, x.rating + shift,
                                                    x.rating + shift + 0.4});
      if (targets) targets->push_back(x.rating);
    }
  };
  fill(t.train_set, t.train, &t.targets);
  fill(t.validation_set, t.validation, nullptr);
  return t;
}

}  // namespace

TEST_CASE("training") {
  const auto toy = toy_problem();
  const auto validation = rating_target(toy.validation_set, toy.validation);
  NeuSEConfig config;
  config.embed_dim = 4;
  config.seed = 5;
  config.max_epochs = 0;
  const auto none = train_neuse(toy.train_set, toy.targets, toy.validation_set, validation, toy.neighbors, config);
  CHECK(none.params == init_params(none.params.dims, config));
  CHECK(none.best_epoch == 0);
  CHECK(none.history.size() == 1);

  config.max_epochs = 6;
  const auto a = train_neuse(toy.train_set, toy.targets, toy.validation_set, validation, toy.neighbors, config);
  const auto b = train_neuse(toy.train_set, toy.targets, toy.validation_set, validation, toy.neighbors, config);
  REQUIRE(a.history.size() == 7);
  CHECK(a.history[5].train_kl < a.history[0].train_kl);
  CHECK(a.history[a.best_epoch].validation_metric == b.history[b.best_epoch].validation_metric);
  CHECK(a.params == b.params);
  for (std::size_t e = 1; e < a.history.size(); ++e)
    CHECK(a.history[a.best_epoch].validation_metric <= a.history[e].validation_metric);

  const std::vector<double> short_targets(3, 1.0);
  CHECK_THROWS_AS(
      train_neuse(toy.train_set, short_targets, toy.validation_set, validation, toy.neighbors, config),
      FormatError);
}

TEST_CASE("parameter blob round-trip") {
  NeuSEConfig config;
  config.seed = 2;
  const auto p = init_params({4, 5, 3, 2, 3}, config);
  const auto dir = testing::scratch_dir("params");
  save_params(p, dir / "p.bin");
  CHECK(load_params(dir / "p.bin") == p);

  CHECK_THROWS_AS(load_params(dir / "missing.bin"), FormatError);
  std::ofstream(dir / "junk.bin") << "not a blob";
  CHECK_THROWS_AS(load_params(dir / "junk.bin"), FormatError);
  const auto size = std::filesystem::file_size(dir / "p.bin");
  std::filesystem::copy_file(dir / "p.bin", dir / "cut.bin");
  std::filesystem::resize_file(dir / "cut.bin", size - 8);
  CHECK_THROWS_AS(load_params(dir / "cut.bin"), FormatError);
}
