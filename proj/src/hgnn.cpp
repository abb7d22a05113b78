#include "tensegrity/hgnn.hpp"

#include <cmath>
#include <random>

namespace tensegrity {

using autodiff::Index;
using autodiff::Matrix;
using autodiff::Tensor;

namespace {

constexpr std::array<NodeType, kNumEdgeTypes> kEdgeSource{NodeType::rod, NodeType::endcap, NodeType::tendon,
                                                           NodeType::endcap};
constexpr std::array<NodeType, kNumEdgeTypes> kEdgeTarget{NodeType::endcap, NodeType::rod, NodeType::endcap,
                                                           NodeType::tendon};

constexpr Index nodes_per_graph(NodeType type) {
  switch (type) {
    case NodeType::rod: return kNumRods;
    case NodeType::tendon: return kNumTendons;
    case NodeType::endcap: return kNumEndcaps;
  }
  return 0;
}

template <typename T>
Linear<T> make_linear(Index in, Index out, double weight_bound, std::mt19937_64& rng) {
  std::uniform_real_distribution<double> wdist(-weight_bound, weight_bound);
  const double bias_bound = 1.0 / std::sqrt(static_cast<double>(in));
  std::uniform_real_distribution<double> bdist(-bias_bound, bias_bound);
  Matrix<T> w(in, out);
  for (Index i = 0; i < w.size(); ++i) w.data()[i] = static_cast<T>(wdist(rng));
  Matrix<T> b(out, 1);
  for (Index i = 0; i < b.size(); ++i) b.data()[i] = static_cast<T>(bdist(rng));
  return {Tensor<T>(autodiff::Shape{in, out}, std::move(w), true), Tensor<T>(autodiff::Shape{out}, std::move(b), true)};
}

double he_bound(Index fan_in) { return std::sqrt(6.0 / static_cast<double>(fan_in)); }

// Message and update layers feed sums over several neighbors; He scaling
// compounds across layers, so they start at unit-variance gain instead.
double lecun_bound(Index fan_in) { return std::sqrt(3.0 / static_cast<double>(fan_in)); }

template <typename T>
Mlp<T> make_mlp(Index in, Index hidden, Index out, bool final_relu_follows, std::mt19937_64& rng) {
  Mlp<T> m;
  m.first = make_linear<T>(in, hidden, he_bound(in), rng);
  const double second_bound = final_relu_follows ? he_bound(hidden) : 1.0 / std::sqrt(static_cast<double>(hidden));
  m.second = make_linear<T>(hidden, out, second_bound, rng);
  return m;
}

template <typename T>
Tensor<T> apply_linear(const Tensor<T>& x, const Linear<T>& l) {
  return autodiff::add(autodiff::matmul(x, l.weight), l.bias);
}

template <typename T>
Tensor<T> apply_mlp(const Tensor<T>& x, const Mlp<T>& m) {
  return apply_linear(autodiff::relu(apply_linear(x, m.first)), m.second);
}

template <typename T>
const Tensor<T>& embedding_of(const NodeEmbeddings<T>& v, NodeType type) {
  switch (type) {
    case NodeType::rod: return v.rod;
    case NodeType::tendon: return v.tendon;
    case NodeType::endcap: return v.endcap;
  }
  return v.rod;
}

template <typename U, typename T>
Tensor<U> cast_tensor(const Tensor<T>& t) {
  return Tensor<U>(t.shape(), t.value().template cast<U>(), t.requires_grad());
}

template <typename U, typename T>
Linear<U> cast_linear(const Linear<T>& l) {
  return {cast_tensor<U>(l.weight), cast_tensor<U>(l.bias)};
}

template <typename U, typename T>
Mlp<U> cast_mlp(const Mlp<T>& m) {
  return {cast_linear<U>(m.first), cast_linear<U>(m.second)};
}

}  // namespace

template <typename T>
ModelParams<T> ModelParams<T>::initialize(const HgnnHyper& hyper, std::uint64_t seed) {
  if (hyper.layers < 1) throw ConfigInvalid("the network needs at least one message-passing layer");
  if (hyper.hidden < 1 || hyper.history < 1) throw ConfigInvalid("hidden width and history must be positive");
  std::mt19937_64 rng(seed);
  ModelParams p;
  p.hyper = hyper;
  const Index H = hyper.hidden;
  const Index L = hyper.history;
  p.rod_encoder = make_mlp<T>(L * kImuChannelsPerRod, H, H, true, rng);
  p.tendon_encoder = make_mlp<T>(L, H, H, true, rng);
  p.endcap_encoder = make_mlp<T>(1, H, H, true, rng);
  for (int k = 0; k < hyper.layers; ++k) {
    std::array<Tensor<T>, kNumEdgeTypes> messages;
    for (auto& w : messages) w = make_linear<T>(H + kNumEdgeTypes, H, lecun_bound(H + kNumEdgeTypes), rng).weight;
    p.message_weights.push_back(std::move(messages));
    std::array<Linear<T>, kNumNodeTypes> updates;
    for (auto& u : updates) u = make_linear<T>(2 * H, H, lecun_bound(2 * H), rng);
    p.update.push_back(std::move(updates));
  }
  p.decoder = make_mlp<T>(H, H, 1, false, rng);
  return p;
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>>> ModelParams<T>::named_parameters() const {
  std::vector<std::pair<std::string, Tensor<T>>> out;
  auto add_mlp = [&out](const std::string& name, const Mlp<T>& m) {
    out.emplace_back(name + ".0.weight", m.first.weight);
    out.emplace_back(name + ".0.bias", m.first.bias);
    out.emplace_back(name + ".1.weight", m.second.weight);
    out.emplace_back(name + ".1.bias", m.second.bias);
  };
  add_mlp("rod_encoder", rod_encoder);
  add_mlp("tendon_encoder", tendon_encoder);
  add_mlp("endcap_encoder", endcap_encoder);
  static constexpr std::array<const char*, kNumEdgeTypes> edge_names{"rod_endcap", "endcap_rod", "tendon_endcap",
                                                                     "endcap_tendon"};
  static constexpr std::array<const char*, kNumNodeTypes> node_names{"rod", "tendon", "endcap"};
  for (std::size_t k = 0; k < message_weights.size(); ++k) {
    const std::string layer = "layer" + std::to_string(k);
    for (int t = 0; t < kNumEdgeTypes; ++t) {
      out.emplace_back(layer + ".message." + edge_names[t], message_weights[k][t]);
    }
    for (int a = 0; a < kNumNodeTypes; ++a) {
      out.emplace_back(layer + ".update." + node_names[a] + ".weight", update[k][a].weight);
      out.emplace_back(layer + ".update." + node_names[a] + ".bias", update[k][a].bias);
    }
  }
  add_mlp("decoder", decoder);
  return out;
}

template <typename T>
std::vector<Tensor<T>> ModelParams<T>::parameters() const {
  std::vector<Tensor<T>> out;
  for (auto& [name, t] : named_parameters()) out.push_back(t);
  return out;
}

template <typename T>
std::size_t ModelParams<T>::parameter_count() const {
  std::size_t n = 0;
  for (const auto& t : parameters()) n += static_cast<std::size_t>(t.size());
  return n;
}

template <typename T>
template <typename U>
ModelParams<U> ModelParams<T>::cast() const {
  ModelParams<U> p;
  p.hyper = hyper;
  p.rod_encoder = cast_mlp<U>(rod_encoder);
  p.tendon_encoder = cast_mlp<U>(tendon_encoder);
  p.endcap_encoder = cast_mlp<U>(endcap_encoder);
  for (std::size_t k = 0; k < message_weights.size(); ++k) {
    std::array<Tensor<U>, kNumEdgeTypes> m;
    for (int t = 0; t < kNumEdgeTypes; ++t) m[t] = cast_tensor<U>(message_weights[k][t]);
    p.message_weights.push_back(std::move(m));
    std::array<Linear<U>, kNumNodeTypes> u;
    for (int a = 0; a < kNumNodeTypes; ++a) u[a] = cast_linear<U>(update[k][a]);
    p.update.push_back(std::move(u));
  }
  p.decoder = cast_mlp<U>(decoder);
  return p;
}

template <typename T>
BatchInputs<T> make_batch_inputs(Index graphs, int history) {
  BatchInputs<T> in;
  in.graphs = graphs;
  in.history = history;
  in.rod = Matrix<T>::Zero(graphs * kNumRods, static_cast<Index>(history) * kImuChannelsPerRod);
  in.tendon = Matrix<T>::Zero(graphs * kNumTendons, history);
  in.endcap = Matrix<T>::Zero(graphs * kNumEndcaps, 1);
  return in;
}

template <typename T>
void fill_graph_inputs(BatchInputs<T>& inputs, Index graph, const WindowSample& sample, const GroupElement* g,
                       GroupActionMode mode) {
  if (sample.history != inputs.history) {
    throw ShapeMismatch("sample history " + std::to_string(sample.history) + " vs model history " +
                        std::to_string(inputs.history));
  }
  const Index L = inputs.history;
  const bool flip = g && mode == GroupActionMode::physical && g->reverses_rods;
  for (int r = 0; r < kNumRods; ++r) {
    const Index row = graph * kNumRods + (g ? g->rod_perm[r] : r);
    const double* src = sample.rod_features.data() + r * L * kImuChannelsPerRod;
    T* dst = inputs.rod.row(row).data();
    for (Index j = 0; j < L * kImuChannelsPerRod; ++j) dst[j] = static_cast<T>(src[j]);
    if (flip) {
      for (Index f = 0; f < L; ++f) {
        T* frame = dst + f * kImuChannelsPerRod;
        frame[1] = -frame[1];
        frame[2] = -frame[2];
        frame[4] = -frame[4];
        frame[5] = -frame[5];
      }
    }
  }
  for (int k = 0; k < kNumTendons; ++k) {
    const Index row = graph * kNumTendons + (g ? g->tendon_perm[k] : k);
    const double* src = sample.tendon_features.data() + k * L;
    T* dst = inputs.tendon.row(row).data();
    for (Index j = 0; j < L; ++j) dst[j] = static_cast<T>(src[j]);
  }
}

BatchEdgeIndex BatchEdgeIndex::build(const HeteroGraph& graph, Index graphs) {
  BatchEdgeIndex index;
  index.graphs = graphs;
  for (int t = 0; t < kNumEdgeTypes; ++t) {
    const Index ns = nodes_per_graph(kEdgeSource[t]);
    const Index nd = nodes_per_graph(kEdgeTarget[t]);
    const auto& edges = graph.edges[t];
    index.src[t].reserve(edges.size() * graphs);
    index.dst[t].reserve(edges.size() * graphs);
    for (Index g = 0; g < graphs; ++g) {
      for (const auto& [s, d] : edges) {
        index.src[t].push_back(g * ns + s);
        index.dst[t].push_back(g * nd + d);
      }
    }
  }
  return index;
}

template <typename T>
NodeEmbeddings<T> encode_inputs(const BatchInputs<T>& inputs, const ModelParams<T>& params) {
  if (inputs.history != params.hyper.history) {
    throw ShapeMismatch("window length " + std::to_string(inputs.history) + " vs model history " +
                        std::to_string(params.hyper.history));
  }
  NodeEmbeddings<T> v;
  v.rod = apply_mlp(Tensor<T>::matrix(inputs.rod), params.rod_encoder);
  v.tendon = apply_mlp(Tensor<T>::matrix(inputs.tendon), params.tendon_encoder);
  v.endcap = apply_mlp(Tensor<T>::matrix(inputs.endcap), params.endcap_encoder);
  return v;
}

template <typename T>
NodeEmbeddings<T> message_passing_layer(const NodeEmbeddings<T>& v, const HeteroGraph& graph,
                                        const BatchEdgeIndex& index, const ModelParams<T>& params, int k) {
  (void)graph;
  if (k < 0 || k >= params.hyper.layers) throw ShapeMismatch("layer index " + std::to_string(k) + " out of range");
  const Index G = index.graphs;
  std::array<Tensor<T>, kNumNodeTypes> aggregate;
  for (int t = 0; t < kNumEdgeTypes; ++t) {
    const Tensor<T>& source = embedding_of(v, kEdgeSource[t]);
    Matrix<T> onehot = Matrix<T>::Zero(source.rows(), kNumEdgeTypes);
    onehot.col(t).setOnes();
    const Tensor<T> input = autodiff::concat<T>({source, Tensor<T>::matrix(std::move(onehot))}, 1);
    // A message depends only on its source node and edge type, so it is
    // computed once per source node and routed along every outgoing edge.
    const Tensor<T> message = autodiff::relu(autodiff::matmul(input, params.message_weights[k][t]));
    const int target = static_cast<int>(kEdgeTarget[t]);
    Tensor<T> routed =
        autodiff::scatter_add_rows(message, index.src[t], index.dst[t], G * nodes_per_graph(kEdgeTarget[t]));
    aggregate[target] = aggregate[target].defined() ? autodiff::add(aggregate[target], routed) : routed;
  }
  NodeEmbeddings<T> out;
  auto update = [&](NodeType type) {
    const int a = static_cast<int>(type);
    const Tensor<T>& prev = embedding_of(v, type);
    const Tensor<T> fused = autodiff::concat<T>({prev, aggregate[a]}, 1);
    return autodiff::relu(apply_linear(fused, params.update[k][a]));
  };
  out.rod = update(NodeType::rod);
  out.tendon = update(NodeType::tendon);
  out.endcap = update(NodeType::endcap);
  return out;
}

template <typename T>
Tensor<T> hgnn_forward_batch(const BatchInputs<T>& inputs, const HeteroGraph& graph, const ModelParams<T>& params) {
  const BatchEdgeIndex index = BatchEdgeIndex::build(graph, inputs.graphs);
  NodeEmbeddings<T> v = encode_inputs(inputs, params);
  for (int k = 0; k < params.hyper.layers; ++k) v = message_passing_layer(v, graph, index, params, k);
  const Tensor<T> logits = apply_mlp(v.endcap, params.decoder);  // (graphs*6, 1)
  return autodiff::sum_over(logits, 1);
}

template <typename T>
Tensor<T> plain_forward_batch(std::span<const WindowSample> samples, const HeteroGraph& graph,
                              const ModelParams<T>& params) {
  if (samples.empty()) throw EmptyDataset("forward on an empty batch");
  auto inputs = make_batch_inputs<T>(static_cast<Index>(samples.size()), params.hyper.history);
  for (std::size_t s = 0; s < samples.size(); ++s) fill_graph_inputs(inputs, static_cast<Index>(s), samples[s]);
  return hgnn_forward_batch(inputs, graph, params);
}

template <typename T>
Tensor<T> sym_forward_batch(std::span<const WindowSample> samples, const HeteroGraph& graph,
                            const ModelParams<T>& params, std::span<const GroupElement> group, GroupActionMode mode) {
  if (samples.empty()) throw EmptyDataset("forward on an empty batch");
  if (group.empty()) throw ConfigInvalid("symmetrization needs at least one group element");
  const Index B = static_cast<Index>(samples.size());
  const Index G = static_cast<Index>(group.size());
  auto inputs = make_batch_inputs<T>(B * G, params.hyper.history);
  for (Index s = 0; s < B; ++s) {
    for (Index gi = 0; gi < G; ++gi) fill_graph_inputs(inputs, s * G + gi, samples[s], &group[gi], mode);
  }
  const Tensor<T> branch_logits = hgnn_forward_batch(inputs, graph, params);

  // Undo each branch's relabeling: endcap i of the original sample sits at
  // slot perm(g)[i] of branch g.
  std::vector<Index> src;
  std::vector<Index> dst;
  src.reserve(static_cast<std::size_t>(B * G * kNumEndcaps));
  dst.reserve(src.capacity());
  for (Index s = 0; s < B; ++s) {
    for (Index gi = 0; gi < G; ++gi) {
      for (int i = 0; i < kNumEndcaps; ++i) {
        src.push_back((s * G + gi) * kNumEndcaps + group[gi].endcap_perm[i]);
        dst.push_back(s * kNumEndcaps + i);
      }
    }
  }
  const Tensor<T> summed = autodiff::scatter_add_rows(branch_logits, std::move(src), std::move(dst), B * kNumEndcaps);
  return autodiff::scale(summed, T(1) / static_cast<T>(G));
}

template <typename T>
Logits hgnn_forward(const WindowSample& sample, const HeteroGraph& graph, const ModelParams<T>& params) {
  autodiff::NoGradGuard no_grad;
  const auto out = plain_forward_batch<T>(std::span<const WindowSample>(&sample, 1), graph, params);
  Logits logits{};
  for (int i = 0; i < kNumEndcaps; ++i) logits[i] = static_cast<double>(out(i));
  return logits;
}

template <typename T>
Logits sym_forward(const WindowSample& sample, const HeteroGraph& graph, const ModelParams<T>& params,
                   std::span<const GroupElement> group, GroupActionMode mode) {
  autodiff::NoGradGuard no_grad;
  const auto out = sym_forward_batch<T>(std::span<const WindowSample>(&sample, 1), graph, params, group, mode);
  Logits logits{};
  for (int i = 0; i < kNumEndcaps; ++i) logits[i] = static_cast<double>(out(i));
  return logits;
}

double bce_with_logits(std::span<const double> logits, const ContactVector& labels) {
  if (logits.size() != kNumEndcaps) throw ShapeMismatch("expected 6 logits");
  double total = 0.0;
  for (int i = 0; i < kNumEndcaps; ++i) {
    const double z = logits[i];
    total += std::max(z, 0.0) - z * labels[i] + std::log1p(std::exp(-std::abs(z)));
  }
  return total / kNumEndcaps;
}

ContactVector predict_contacts(std::span<const double> logits, double threshold) {
  if (logits.size() != kNumEndcaps) throw ShapeMismatch("expected 6 logits");
  ContactVector c{};
  for (int i = 0; i < kNumEndcaps; ++i) {
    const double z = logits[i];
    const double p = z >= 0 ? 1.0 / (1.0 + std::exp(-z)) : std::exp(z) / (1.0 + std::exp(z));
    c[i] = p > threshold ? 1 : 0;
  }
  return c;
}

Logits apply_group_to_logits(const GroupElement& g, const Logits& logits) {
  Logits out{};
  for (int i = 0; i < kNumEndcaps; ++i) out[g.endcap_perm[i]] = logits[i];
  return out;
}

#define TENSEGRITY_INSTANTIATE(T)                                                                              \
  template struct ModelParams<T>;                                                                              \
  template BatchInputs<T> make_batch_inputs<T>(Index, int);                                                    \
  template void fill_graph_inputs<T>(BatchInputs<T>&, Index, const WindowSample&, const GroupElement*,         \
                                     GroupActionMode);                                                         \
  template NodeEmbeddings<T> encode_inputs<T>(const BatchInputs<T>&, const ModelParams<T>&);                   \
  template NodeEmbeddings<T> message_passing_layer<T>(const NodeEmbeddings<T>&, const HeteroGraph&,            \
                                                      const BatchEdgeIndex&, const ModelParams<T>&, int);      \
  template Tensor<T> hgnn_forward_batch<T>(const BatchInputs<T>&, const HeteroGraph&, const ModelParams<T>&);  \
  template Tensor<T> plain_forward_batch<T>(std::span<const WindowSample>, const HeteroGraph&,                 \
                                            const ModelParams<T>&);                                            \
  template Tensor<T> sym_forward_batch<T>(std::span<const WindowSample>, const HeteroGraph&,                   \
                                          const ModelParams<T>&, std::span<const GroupElement>,                \
                                          GroupActionMode);                                                    \
  template Logits hgnn_forward<T>(const WindowSample&, const HeteroGraph&, const ModelParams<T>&);             \
  template Logits sym_forward<T>(const WindowSample&, const HeteroGraph&, const ModelParams<T>&,               \
                                 std::span<const GroupElement>, GroupActionMode);

TENSEGRITY_INSTANTIATE(float)
TENSEGRITY_INSTANTIATE(double)
#undef TENSEGRITY_INSTANTIATE

template ModelParams<double> ModelParams<float>::cast<double>() const;
template ModelParams<float> ModelParams<double>::cast<float>() const;
template ModelParams<float> ModelParams<float>::cast<float>() const;
template ModelParams<double> ModelParams<double>::cast<double>() const;

}  // namespace tensegrity
