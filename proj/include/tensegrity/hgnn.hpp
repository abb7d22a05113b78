#pragma once

#include <array>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "tensegrity/autodiff.hpp"
#include "tensegrity/geometry.hpp"
#include "tensegrity/graphdata.hpp"

namespace tensegrity {

struct HgnnHyper {
  int layers = 8;     // K
  int hidden = 128;   // H
  int history = 100;  // L

  bool operator==(const HgnnHyper&) const = default;
};

enum class NodeType { rod = 0, tendon = 1, endcap = 2 };
inline constexpr int kNumNodeTypes = 3;

template <typename T>
struct Linear {
  autodiff::Tensor<T> weight;  // (in, out)
  autodiff::Tensor<T> bias;    // (out)
};

/// in -> hidden -> out with a ReLU in between.
template <typename T>
struct Mlp {
  Linear<T> first;
  Linear<T> second;
};

template <typename T>
struct ModelParams {
  HgnnHyper hyper;
  Mlp<T> rod_encoder;     // 6L -> H -> H
  Mlp<T> tendon_encoder;  // L -> H -> H
  Mlp<T> endcap_encoder;  // 1 -> H -> H
  // message_weights[k][edge type]: (H + 4) x H, applied to [V_src ; edge one-hot].
  std::vector<std::array<autodiff::Tensor<T>, kNumEdgeTypes>> message_weights;
  // update[k][node type]: [V ; aggregated message] (2H) -> H.
  std::vector<std::array<Linear<T>, kNumNodeTypes>> update;
  Mlp<T> decoder;  // H -> H -> 1

  /// Deterministic uniform init: He bounds for encoders and decoder, LeCun
  /// bounds for message and update layers, biases in ±1/sqrt(fan_in).
  static ModelParams initialize(const HgnnHyper& hyper, std::uint64_t seed);

  /// Every learnable tensor in a fixed order with a stable name.
  std::vector<std::pair<std::string, autodiff::Tensor<T>>> named_parameters() const;
  std::vector<autodiff::Tensor<T>> parameters() const;
  std::size_t parameter_count() const;

  /// Deep copy with fresh tensors (values converted to U).
  template <typename U>
  ModelParams<U> cast() const;
};

/// Node embeddings, one row per node, graphs stacked in order.
template <typename T>
struct NodeEmbeddings {
  autodiff::Tensor<T> rod;
  autodiff::Tensor<T> tendon;
  autodiff::Tensor<T> endcap;
};

/// Raw node features for a batch of graphs.
template <typename T>
struct BatchInputs {
  autodiff::Index graphs = 0;
  int history = 0;
  autodiff::Matrix<T> rod;     // (graphs*3, 6L)
  autodiff::Matrix<T> tendon;  // (graphs*9, L)
  autodiff::Matrix<T> endcap;  // (graphs*6, 1), zeros
};

template <typename T>
BatchInputs<T> make_batch_inputs(autodiff::Index graphs, int history);

/// Writes g applied to `sample` into graph slot `graph` of `inputs`.
template <typename T>
void fill_graph_inputs(BatchInputs<T>& inputs, autodiff::Index graph, const WindowSample& sample,
                       const GroupElement* g = nullptr, GroupActionMode mode = GroupActionMode::index_only);

/// Stacked source/destination row indices for every edge type over a batch.
struct BatchEdgeIndex {
  autodiff::Index graphs = 0;
  std::array<std::vector<autodiff::Index>, kNumEdgeTypes> src;
  std::array<std::vector<autodiff::Index>, kNumEdgeTypes> dst;

  static BatchEdgeIndex build(const HeteroGraph& graph, autodiff::Index graphs);
};

template <typename T>
NodeEmbeddings<T> encode_inputs(const BatchInputs<T>& inputs, const ModelParams<T>& params);

/// Layer k (0-based): typed messages ReLU(W_t [V_src ; onehot_t]), summed at
/// each destination over all incoming edges of all types, then
/// V' = ReLU(U_a [V ; sum] + b_a).
template <typename T>
NodeEmbeddings<T> message_passing_layer(const NodeEmbeddings<T>& v, const HeteroGraph& graph,
                                        const BatchEdgeIndex& index, const ModelParams<T>& params, int k);

/// Encoder, K layers, decoder. Returns (graphs*6) endcap logits as a rank-1 tensor.
template <typename T>
autodiff::Tensor<T> hgnn_forward_batch(const BatchInputs<T>& inputs, const HeteroGraph& graph,
                                       const ModelParams<T>& params);

/// Group-averaged logits (1/|G|) sum_g pi_g^{-1} F(pi_g s) for each sample.
/// Returns a rank-1 tensor of length samples*6.
template <typename T>
autodiff::Tensor<T> sym_forward_batch(std::span<const WindowSample> samples, const HeteroGraph& graph,
                                      const ModelParams<T>& params, std::span<const GroupElement> group,
                                      GroupActionMode mode = GroupActionMode::index_only);

/// Plain network over samples, no symmetrization. Rank-1, samples*6.
template <typename T>
autodiff::Tensor<T> plain_forward_batch(std::span<const WindowSample> samples, const HeteroGraph& graph,
                                        const ModelParams<T>& params);

using Logits = std::array<double, kNumEndcaps>;

template <typename T>
Logits hgnn_forward(const WindowSample& sample, const HeteroGraph& graph, const ModelParams<T>& params);

template <typename T>
Logits sym_forward(const WindowSample& sample, const HeteroGraph& graph, const ModelParams<T>& params,
                   std::span<const GroupElement> group, GroupActionMode mode = GroupActionMode::index_only);

/// Mean over endcaps of max(z,0) - z c + log(1 + exp(-|z|)).
double bce_with_logits(std::span<const double> logits, const ContactVector& labels);

/// c_i = 1 iff sigmoid(z_i) > threshold (strict).
ContactVector predict_contacts(std::span<const double> logits, double threshold = 0.5);

/// Permutes logits like contact flags: out[perm(g)[i]] = in[i].
Logits apply_group_to_logits(const GroupElement& g, const Logits& logits);

}  // namespace tensegrity
