#include <doctest.h>

#include <cmath>
#include <random>

#include "tensegrity/errors.hpp"
#include "tensegrity/hgnn.hpp"

using namespace tensegrity;
using autodiff::Index;
using autodiff::Matrix;

namespace {

struct Fixture {
  TensegrityTopology topology = build_canonical_topology();
  D3Group group = build_d3_group(topology);
  HeteroGraph graph = assemble_graph(topology);
};

const Fixture& fixture() {
  static const Fixture f;
  return f;
}

WindowSample random_sample(int history, std::mt19937_64& rng, double scale = 1.0) {
  std::normal_distribution<double> normal(0.0, scale);
  WindowSample s;
  s.history = history;
  s.rod_features.resize(static_cast<std::size_t>(kNumRods) * history * kImuChannelsPerRod);
  s.tendon_features.resize(static_cast<std::size_t>(kNumTendons) * history);
  for (auto& x : s.rod_features) x = normal(rng);
  for (auto& x : s.tendon_features) x = normal(rng);
  for (auto& c : s.label) c = static_cast<std::uint8_t>(rng() & 1U);
  s.labeled = true;
  return s;
}

double max_abs_diff(const Logits& a, const Logits& b) {
  double m = 0.0;
  for (int i = 0; i < kNumEndcaps; ++i) m = std::max(m, std::abs(a[i] - b[i]));
  return m;
}

}  // namespace

TEST_CASE("parameter inventory") {
  const auto params = ModelParams<double>::initialize({2, 16, 25}, 0);
  CHECK(params.message_weights.size() == 2);
  CHECK(params.update.size() == 2);
  CHECK(params.rod_encoder.first.weight.rows() == 6 * 25);
  CHECK(params.tendon_encoder.first.weight.rows() == 25);
  CHECK(params.message_weights[0][0].rows() == 16 + 4);
  CHECK(params.update[1][2].weight.rows() == 32);
  CHECK(params.decoder.second.weight.cols() == 1);
  std::size_t total = 0;
  for (const auto& p : params.parameters()) total += static_cast<std::size_t>(p.size());
  CHECK(total == params.parameter_count());
  const auto again = ModelParams<double>::initialize({2, 16, 25}, 0);
  const auto other = ModelParams<double>::initialize({2, 16, 25}, 1);
  CHECK(again.decoder.first.weight.value() == params.decoder.first.weight.value());
  CHECK(other.decoder.first.weight.value() != params.decoder.first.weight.value());
  const auto f = params.cast<float>();
  CHECK(f.parameter_count() == params.parameter_count());
}

TEST_CASE("forward on random windows is finite") {
  const auto& fx = fixture();
  const auto params = ModelParams<float>::initialize({8, 128, 25}, 3);
  std::mt19937_64 rng(11);
  std::vector<WindowSample> batch;
  for (int i = 0; i < 1000; ++i) batch.push_back(random_sample(25, rng, i % 2 ? 1.0 : 10.0));
  autodiff::NoGradGuard no_grad;
  for (std::size_t b = 0; b < batch.size(); b += 100) {
    const auto logits =
        plain_forward_batch<float>(std::span<const WindowSample>(batch).subspan(b, 100), fx.graph, params);
    REQUIRE(logits.size() == 600);
    for (Index i = 0; i < logits.size(); ++i) REQUIRE(std::isfinite(logits(i)));
  }
}

TEST_CASE("history mismatch and empty batches are rejected") {
  const auto& fx = fixture();
  const auto params = ModelParams<double>::initialize({2, 8, 25}, 0);
  std::mt19937_64 rng(1);
  const auto s = random_sample(50, rng);
  CHECK_THROWS_AS(hgnn_forward(s, fx.graph, params), ShapeMismatch);
  CHECK_THROWS_AS(plain_forward_batch<double>({}, fx.graph, params), EmptyDataset);
  const auto ok = random_sample(25, rng);
  CHECK_THROWS_AS(sym_forward<double>(ok, fx.graph, params, {}), ConfigInvalid);
}

TEST_CASE("symmetrized network is equivariant") {
  const auto& fx = fixture();
  const auto& elements = fx.group.elements();
  const auto params = ModelParams<double>::initialize({3, 16, 25}, 7);
  std::mt19937_64 rng(21);
  for (const auto mode : {GroupActionMode::index_only, GroupActionMode::physical}) {
    double worst = 0.0;
    for (int trial = 0; trial < 20; ++trial) {
      const auto s = random_sample(25, rng);
      const Logits base = sym_forward<double>(s, fx.graph, params, elements, mode);
      for (const auto& g : elements) {
        const Logits moved = sym_forward<double>(apply_group_to_sample(g, s, mode), fx.graph, params, elements, mode);
        worst = std::max(worst, max_abs_diff(moved, apply_group_to_logits(g, base)));
      }
    }
    CHECK(worst < 1e-10);
  }
}

TEST_CASE("plain network is equivariant under index-only relabeling") {
  // Every group element is a graph automorphism, so message passing commutes
  // with the relabeling even without averaging.
  const auto& fx = fixture();
  const auto params = ModelParams<double>::initialize({3, 16, 25}, 8);
  std::mt19937_64 rng(22);
  const auto s = random_sample(25, rng);
  const Logits base = hgnn_forward(s, fx.graph, params);
  for (const auto& g : fx.group.elements()) {
    const Logits moved = hgnn_forward(apply_group_to_sample(g, s), fx.graph, params);
    CHECK(max_abs_diff(moved, apply_group_to_logits(g, base)) < 1e-10);
  }
  const Logits sym = sym_forward<double>(s, fx.graph, params, fx.group.elements());
  CHECK(max_abs_diff(sym, base) < 1e-10);
}

TEST_CASE("plain network is not equivariant under the physical action") {
  const auto& fx = fixture();
  const auto params = ModelParams<double>::initialize({3, 16, 25}, 9);
  std::mt19937_64 rng(23);
  const auto s = random_sample(25, rng);
  const auto& f = fx.group.element(GroupLabel::f);
  const Logits base = hgnn_forward(s, fx.graph, params);
  const Logits moved = hgnn_forward(apply_group_to_sample(f, s, GroupActionMode::physical), fx.graph, params);
  CHECK(max_abs_diff(moved, apply_group_to_logits(f, base)) > 1e-6);
}

TEST_CASE("single-branch symmetrization with the identity equals the plain network") {
  const auto& fx = fixture();
  const auto params = ModelParams<float>::initialize({2, 16, 25}, 4);
  std::mt19937_64 rng(5);
  const auto s = random_sample(25, rng);
  const std::vector<GroupElement> trivial{fx.group.identity()};
  const Logits sym = sym_forward<float>(s, fx.graph, params, trivial);
  const Logits plain = hgnn_forward(s, fx.graph, params);
  for (int i = 0; i < kNumEndcaps; ++i) CHECK(sym[i] == plain[i]);
}

TEST_CASE("symmetrization is idempotent") {
  // Averaging an already equivariant function over the group returns it
  // unchanged: the symmetrized logits at g.s, mapped back, average to the
  // same values.
  const auto& fx = fixture();
  const auto& elements = fx.group.elements();
  const auto params = ModelParams<double>::initialize({2, 16, 25}, 12);
  std::mt19937_64 rng(13);
  const auto mode = GroupActionMode::physical;
  const auto s = random_sample(25, rng);
  const Logits once = sym_forward<double>(s, fx.graph, params, elements, mode);
  Logits twice{};
  for (const auto& g : elements) {
    const Logits at_g = sym_forward<double>(apply_group_to_sample(g, s, mode), fx.graph, params, elements, mode);
    const Logits back = apply_group_to_logits(fx.group.inverse(g), at_g);
    for (int i = 0; i < kNumEndcaps; ++i) twice[i] += back[i] / static_cast<double>(elements.size());
  }
  CHECK(max_abs_diff(once, twice) < 1e-10);
}

TEST_CASE("loss is invariant under the group action") {
  const auto& fx = fixture();
  const auto& elements = fx.group.elements();
  const auto params = ModelParams<double>::initialize({2, 16, 25}, 14);
  std::mt19937_64 rng(15);
  const auto mode = GroupActionMode::physical;
  const auto s = random_sample(25, rng);
  const Logits z = sym_forward<double>(s, fx.graph, params, elements, mode);
  const double loss = bce_with_logits(z, s.label);
  for (const auto& g : elements) {
    const auto gs = apply_group_to_sample(g, s, mode);
    const Logits gz = sym_forward<double>(gs, fx.graph, params, elements, mode);
    CHECK(bce_with_logits(gz, gs.label) == doctest::Approx(loss).epsilon(1e-12));
  }
}

TEST_CASE("message weights are typed") {
  const auto& fx = fixture();
  auto params = ModelParams<double>::initialize({3, 16, 25}, 16);
  std::mt19937_64 rng(17);
  const auto s = random_sample(25, rng);
  auto t = s;
  for (auto& x : t.tendon_features) x += 1.0;

  REQUIRE(max_abs_diff(hgnn_forward(s, fx.graph, params), hgnn_forward(t, fx.graph, params)) > 1e-8);
  // Tendon information reaches the endcaps only through tendon-to-endcap
  // messages; silencing that type alone must cut it off.
  for (int k = 0; k < 3; ++k) {
    auto w = params.message_weights[k][static_cast<int>(EdgeType::tendon_to_endcap)];
    w.mutable_value().setZero();
  }
  CHECK(max_abs_diff(hgnn_forward(s, fx.graph, params), hgnn_forward(t, fx.graph, params)) == 0.0);
  auto rods = s;
  for (auto& x : rods.rod_features) x += 1.0;
  CHECK(max_abs_diff(hgnn_forward(s, fx.graph, params), hgnn_forward(rods, fx.graph, params)) > 1e-8);
}

namespace {

// Update weights that pass the aggregated message straight through:
// V' = ReLU([0 I] [V ; m]) = m for non-negative m.
void make_passthrough(ModelParams<double>& params, int k) {
  const Index h = params.hyper.hidden;
  for (auto& lin : params.update[k]) {
    Matrix<double> w = Matrix<double>::Zero(2 * h, h);
    w.bottomRows(h).setIdentity();
    lin.weight.mutable_value() = w;
    lin.bias.mutable_value().setZero();
  }
}

}  // namespace

TEST_CASE("aggregation sums every incoming edge") {
  const auto& fx = fixture();
  auto params = ModelParams<double>::initialize({1, 8, 25}, 18);
  make_passthrough(params, 0);
  std::mt19937_64 rng(19);
  const auto s = random_sample(25, rng);
  auto inputs = make_batch_inputs<double>(1, 25);
  fill_graph_inputs(inputs, 0, s);
  const auto v = encode_inputs(inputs, params);

  const auto base_index = BatchEdgeIndex::build(fx.graph, 1);
  const auto base = message_passing_layer(v, fx.graph, base_index, params, 0);

  HeteroGraph doubled = fx.graph;
  const EdgePair extra = doubled.edges_of(EdgeType::tendon_to_endcap).front();
  doubled.edges_of(EdgeType::tendon_to_endcap).push_back(extra);
  const auto dup_index = BatchEdgeIndex::build(doubled, 1);
  const auto dup = message_passing_layer(v, doubled, dup_index, params, 0);

  // Expected extra message from the duplicated edge's source.
  const int t = static_cast<int>(EdgeType::tendon_to_endcap);
  Eigen::RowVectorXd input(params.hyper.hidden + 4);
  input << v.tendon.value().row(extra.first), Eigen::RowVector4d::Unit(t);
  const Eigen::RowVectorXd message = (input * params.message_weights[0][t].value()).cwiseMax(0.0);

  for (int e = 0; e < kNumEndcaps; ++e) {
    const Eigen::RowVectorXd diff = dup.endcap.value().row(e) - base.endcap.value().row(e);
    if (e == extra.second) {
      CHECK((diff - message).cwiseAbs().maxCoeff() < 1e-12);
    } else {
      CHECK(diff.cwiseAbs().maxCoeff() == 0.0);
    }
  }
  CHECK(dup.rod.value() == base.rod.value());
  CHECK(dup.tendon.value() == base.tendon.value());
}

TEST_CASE("zero message weights leave only the self term") {
  const auto& fx = fixture();
  auto params = ModelParams<double>::initialize({1, 8, 25}, 20);
  for (auto& w : params.message_weights[0]) w.mutable_value().setZero();
  std::mt19937_64 rng(21);
  const auto s = random_sample(25, rng);
  auto inputs = make_batch_inputs<double>(1, 25);
  fill_graph_inputs(inputs, 0, s);
  const auto v = encode_inputs(inputs, params);
  const auto out = message_passing_layer(v, fx.graph, BatchEdgeIndex::build(fx.graph, 1), params, 0);
  const Index h = params.hyper.hidden;
  const auto& lin = params.update[0][static_cast<int>(NodeType::rod)];
  const Matrix<double> expected =
      ((v.rod.value() * lin.weight.value().topRows(h)).rowwise() + lin.bias.value().col(0).transpose()).cwiseMax(0.0);
  CHECK((out.rod.value() - expected).cwiseAbs().maxCoeff() < 1e-12);
}

TEST_CASE("binary cross-entropy examples") {
  const Logits zeros{};
  const ContactVector ones{1, 1, 1, 1, 1, 1};
  CHECK(bce_with_logits(zeros, ones) == doctest::Approx(std::log(2.0)).epsilon(1e-12));
  Logits confident{};
  confident.fill(50.0);
  CHECK(bce_with_logits(confident, ones) < 1e-20);
  confident.fill(-1000.0);
  CHECK(bce_with_logits(confident, ones) == doctest::Approx(1000.0));
  CHECK(std::isfinite(bce_with_logits(confident, ones)));
}

TEST_CASE("stable BCE matches the naive formula where the naive one is accurate") {
  std::mt19937_64 rng(31);
  std::uniform_real_distribution<double> logit(-15.0, 15.0);
  double worst = 0.0;
  for (int i = 0; i < 10000; ++i) {
    Logits z{};
    ContactVector c{};
    double naive = 0.0;
    for (int e = 0; e < kNumEndcaps; ++e) {
      z[e] = logit(rng);
      c[e] = static_cast<std::uint8_t>(rng() & 1U);
      const long double p = 1.0L / (1.0L + std::exp(-static_cast<long double>(z[e])));
      naive += static_cast<double>(-(c[e] * std::log(p) + (1 - c[e]) * std::log(1.0L - p)));
    }
    worst = std::max(worst, std::abs(bce_with_logits(z, c) - naive / kNumEndcaps));
  }
  CHECK(worst < 1e-9);
}

TEST_CASE("thresholding") {
  CHECK(predict_contacts(Logits{0.0, 1e-9, -1e-9, 5.0, -5.0, 0.0}) == ContactVector{0, 1, 0, 1, 0, 0});
  CHECK(predict_contacts(Logits{-800, 800, 0, 0, 0, 0}) == ContactVector{0, 1, 0, 0, 0, 0});
  const double logit_of_07 = std::log(0.7 / 0.3);
  CHECK(predict_contacts(Logits{logit_of_07 + 1e-9, 0, 0, 0, 0, 0}, 0.7)[0] == 1);
  CHECK(predict_contacts(Logits{logit_of_07 - 1e-9, 0, 0, 0, 0, 0}, 0.7)[0] == 0);
  CHECK_THROWS_AS(predict_contacts(std::vector<double>(5, 0.0)), ShapeMismatch);
}

TEST_CASE("logit permutation follows contact permutation") {
  const auto& fx = fixture();
  const Logits z{1, 2, 3, 4, 5, 6};
  const ContactVector c{1, 0, 0, 1, 1, 0};
  for (const auto& g : fx.group.elements()) {
    const Logits gz = apply_group_to_logits(g, z);
    const ContactVector gc = apply_group_to_contacts(g, c);
    for (int i = 0; i < kNumEndcaps; ++i) {
      CHECK(gz[g.endcap_perm[i]] == z[i]);
      CHECK(gc[g.endcap_perm[i]] == c[i]);
    }
  }
}
