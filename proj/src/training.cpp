#include "tensegrity/training.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <random>

#include "tensegrity/errors.hpp"

namespace tensegrity {

using autodiff::Index;
using autodiff::Matrix;
using autodiff::Tensor;

std::uint64_t split_seed(std::uint64_t seed, std::uint64_t stream) {
  std::uint64_t z = seed + 0x9E3779B97F4A7C15ULL * (stream + 1);
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) throw ConfigInvalid("learning_rate must be >= 0");
  if (batch_size <= 0 || epochs <= 0 || layers <= 0 || hidden <= 0 || stride <= 0) {
    throw ConfigInvalid("batch_size, epochs, layers, hidden and stride must be positive");
  }
  if (history != 25 && history != 50 && history != 100 && history != 200) {
    throw ConfigInvalid("history must be one of 25, 50, 100, 200 (got " + std::to_string(history) + ")");
  }
  if (!(beta1 >= 0 && beta1 < 1 && beta2 >= 0 && beta2 < 1 && adam_epsilon > 0)) {
    throw ConfigInvalid("invalid Adam coefficients");
  }
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = nlohmann::json{{"learning_rate", c.learning_rate},
                     {"batch_size", c.batch_size},
                     {"epochs", c.epochs},
                     {"layers", c.layers},
                     {"hidden", c.hidden},
                     {"history", c.history},
                     {"stride", c.stride},
                     {"seed", c.seed},
                     {"symmetry_enabled", c.symmetry_enabled},
                     {"group_mode", to_string(c.group_mode)},
                     {"augment_group", c.augment_group},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_epsilon", c.adam_epsilon}};
}

void from_json(const nlohmann::json& j, TrainConfig& c) {
  c.learning_rate = j.at("learning_rate").get<double>();
  c.batch_size = j.at("batch_size").get<int>();
  c.epochs = j.at("epochs").get<int>();
  c.layers = j.at("layers").get<int>();
  c.hidden = j.at("hidden").get<int>();
  c.history = j.at("history").get<int>();
  c.stride = j.at("stride").get<int>();
  c.seed = j.at("seed").get<std::uint64_t>();
  c.symmetry_enabled = j.at("symmetry_enabled").get<bool>();
  c.group_mode = parse_group_mode(j.at("group_mode").get<std::string>());
  c.augment_group = j.at("augment_group").get<bool>();
  c.beta1 = j.at("beta1").get<double>();
  c.beta2 = j.at("beta2").get<double>();
  c.adam_epsilon = j.at("adam_epsilon").get<double>();
}

Metrics compute_metrics(std::span<const ContactVector> predictions, std::span<const ContactVector> labels) {
  if (predictions.size() != labels.size()) throw LengthMismatch("predictions and labels differ in length");
  if (labels.empty()) throw EmptyDataset("no windows to score");
  Metrics m;
  m.windows = labels.size();
  std::size_t exact = 0;
  for (std::size_t w = 0; w < labels.size(); ++w) {
    bool all_equal = true;
    for (int i = 0; i < kNumEndcaps; ++i) {
      const bool p = predictions[w][i] != 0;
      const bool y = labels[w][i] != 0;
      auto& c = m.confusion[i];
      if (p && y) ++c.tp;
      else if (p && !y) ++c.fp;
      else if (!p && y) ++c.fn;
      else ++c.tn;
      all_equal = all_equal && p == y;
    }
    if (all_equal) ++exact;
  }
  m.exact_match_accuracy = static_cast<double>(exact) / static_cast<double>(labels.size());
  double f1_sum = 0.0;
  for (int i = 0; i < kNumEndcaps; ++i) {
    const auto& c = m.confusion[i];
    const double tp = static_cast<double>(c.tp);
    m.precision[i] = c.tp + c.fp > 0 ? tp / static_cast<double>(c.tp + c.fp) : 0.0;
    m.recall[i] = c.tp + c.fn > 0 ? tp / static_cast<double>(c.tp + c.fn) : 0.0;
    const std::uint64_t denom = 2 * c.tp + c.fp + c.fn;
    m.f1[i] = denom > 0 ? 2.0 * tp / static_cast<double>(denom) : 0.0;
    f1_sum += m.f1[i];
  }
  m.macro_f1 = f1_sum / kNumEndcaps;
  return m;
}

template <typename T>
Tensor<T> batch_loss(std::span<const WindowSample> samples, const HeteroGraph& graph, const ModelParams<T>& params,
                     std::span<const GroupElement> group, bool symmetry_enabled, GroupActionMode mode) {
  const Tensor<T> logits = symmetry_enabled ? sym_forward_batch<T>(samples, graph, params, group, mode)
                                            : plain_forward_batch<T>(samples, graph, params);
  Matrix<T> labels(static_cast<Index>(samples.size()) * kNumEndcaps, 1);
  for (std::size_t s = 0; s < samples.size(); ++s) {
    if (!samples[s].labeled) throw FormatError("training window has no label");
    for (int i = 0; i < kNumEndcaps; ++i) labels(static_cast<Index>(s) * kNumEndcaps + i, 0) = samples[s].label[i];
  }
  return autodiff::bce_with_logits(logits, labels);
}

template <typename T>
std::vector<ContactVector> predict_dataset(const ModelParams<T>& params, const WindowDataset& dataset,
                                           bool symmetry_enabled, GroupActionMode mode, int batch_size) {
  if (dataset.empty()) throw EmptyDataset("evaluation set is empty");
  if (dataset.history() != params.hyper.history) {
    throw ShapeMismatch("dataset history " + std::to_string(dataset.history()) + " vs model history " +
                        std::to_string(params.hyper.history));
  }
  const auto topology = build_canonical_topology();
  const auto graph = assemble_graph(topology);
  const auto group = build_d3_group(topology);
  autodiff::NoGradGuard no_grad;
  std::vector<ContactVector> out;
  out.reserve(dataset.size());
  std::vector<WindowSample> batch;
  const std::size_t step = static_cast<std::size_t>(std::max(batch_size, 1));
  for (std::size_t start = 0; start < dataset.size(); start += step) {
    const std::size_t end = std::min(dataset.size(), start + step);
    batch.clear();
    for (std::size_t i = start; i < end; ++i) batch.push_back(dataset.sample(i));
    const Tensor<T> logits = symmetry_enabled
                                 ? sym_forward_batch<T>(batch, graph, params, group.elements(), mode)
                                 : plain_forward_batch<T>(batch, graph, params);
    for (std::size_t s = 0; s < batch.size(); ++s) {
      std::array<double, kNumEndcaps> z{};
      for (int i = 0; i < kNumEndcaps; ++i) z[i] = static_cast<double>(logits(static_cast<Index>(s) * kNumEndcaps + i));
      out.push_back(predict_contacts(z));
    }
  }
  return out;
}

template <typename T>
Metrics evaluate(const ModelParams<T>& params, const WindowDataset& dataset, bool symmetry_enabled,
                 GroupActionMode mode, int batch_size) {
  const auto predictions = predict_dataset(params, dataset, symmetry_enabled, mode, batch_size);
  std::vector<ContactVector> labels;
  labels.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i) labels.push_back(dataset.label(i));
  return compute_metrics(predictions, labels);
}

namespace {

class Adam {
 public:
  Adam(std::vector<Tensor<float>> params, const TrainConfig& config)
      : params_(std::move(params)), lr_(config.learning_rate), beta1_(config.beta1), beta2_(config.beta2),
        eps_(config.adam_epsilon) {
    for (const auto& p : params_) {
      m_.push_back(Matrix<float>::Zero(p.rows(), p.cols()));
      v_.push_back(Matrix<float>::Zero(p.rows(), p.cols()));
    }
  }

  void step() {
    ++t_;
    const double c1 = 1.0 - std::pow(beta1_, t_);
    const double c2 = 1.0 - std::pow(beta2_, t_);
    const float b1 = static_cast<float>(beta1_);
    const float b2 = static_cast<float>(beta2_);
    const float step_size = static_cast<float>(lr_ / c1);
    const float inv_sqrt_c2 = static_cast<float>(1.0 / std::sqrt(c2));
    const float eps = static_cast<float>(eps_);
    for (std::size_t k = 0; k < params_.size(); ++k) {
      auto& p = params_[k];
      const Matrix<float>& g = p.grad();
      m_[k] = b1 * m_[k] + (1.0f - b1) * g;
      v_[k] = b2 * v_[k] + (1.0f - b2) * g.cwiseProduct(g);
      auto& w = p.mutable_value();
      w.array() -= step_size * m_[k].array() / (v_[k].array().sqrt() * inv_sqrt_c2 + eps);
    }
  }

  void zero_grad() {
    for (auto& p : params_) p.zero_grad();
  }

 private:
  std::vector<Tensor<float>> params_;
  std::vector<Matrix<float>> m_, v_;
  double lr_, beta1_, beta2_, eps_;
  int t_ = 0;
};

}  // namespace

TrainResult train(const WindowDataset& train_set, const WindowDataset& val_set, const TrainConfig& config,
                  const EpochCallback& on_epoch) {
  config.validate();
  return train_from(ModelParams<float>::initialize(config.hyper(), split_seed(config.seed, 1)), train_set, val_set,
                    config, on_epoch);
}

TrainResult train_from(ModelParams<float> params, const WindowDataset& train_set, const WindowDataset& val_set,
                       const TrainConfig& config, const EpochCallback& on_epoch) {
  if (train_set.empty()) throw EmptyDataset("training set is empty");
  if (train_set.history() != config.history || (!val_set.empty() && val_set.history() != config.history)) {
    throw ShapeMismatch("window length differs from configured history " + std::to_string(config.history));
  }
  if (params.hyper != config.hyper()) throw ShapeMismatch("initial parameters do not match the configuration");

  const auto topology = build_canonical_topology();
  const auto graph = assemble_graph(topology);
  const auto group = build_d3_group(topology);

  Adam adam(params.parameters(), config);
  adam.zero_grad();

  const std::size_t copies = config.augment_group ? group.size() : 1;
  std::vector<std::size_t> order(train_set.size() * copies);
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::mt19937_64 shuffle_rng(split_seed(config.seed, 2));

  TrainResult result;
  double best_f1 = -1.0;
  std::vector<WindowSample> batch;
  for (int epoch = 1; epoch <= config.epochs; ++epoch) {
    const auto started = std::chrono::steady_clock::now();
    std::shuffle(order.begin(), order.end(), shuffle_rng);
    double loss_sum = 0.0;
    for (std::size_t start = 0; start < order.size(); start += static_cast<std::size_t>(config.batch_size)) {
      const std::size_t end = std::min(order.size(), start + static_cast<std::size_t>(config.batch_size));
      batch.clear();
      for (std::size_t k = start; k < end; ++k) {
        const std::size_t window = order[k] / copies;
        WindowSample s = train_set.sample(window);
        if (copies > 1) s = apply_group_to_sample(group[order[k] % copies], s, config.group_mode);
        batch.push_back(std::move(s));
      }
      {
        const Tensor<float> loss =
            batch_loss<float>(batch, graph, params, group.elements(), config.symmetry_enabled, config.group_mode);
        autodiff::backward(loss);
        loss_sum += static_cast<double>(loss.item()) * static_cast<double>(batch.size());
      }
      adam.step();
      adam.zero_grad();
    }
    EpochRecord record;
    record.epoch = epoch;
    record.train_loss = loss_sum / static_cast<double>(order.size());
    if (!val_set.empty()) {
      const Metrics m = evaluate(params, val_set, config.symmetry_enabled, config.group_mode, config.batch_size);
      record.val_accuracy = m.exact_match_accuracy;
      record.val_macro_f1 = m.macro_f1;
    } else {
      record.val_accuracy = std::nan("");
      record.val_macro_f1 = std::nan("");
    }
    record.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    result.history.push_back(record);
    const bool better = val_set.empty() || record.val_macro_f1 > best_f1;
    if (better) {
      best_f1 = val_set.empty() ? best_f1 : record.val_macro_f1;
      result.params = params.cast<float>();
      result.best_epoch = epoch;
    }
    if (on_epoch && !on_epoch(record)) break;
  }
  return result;
}

#define TENSEGRITY_INSTANTIATE(T)                                                                              \
  template Tensor<T> batch_loss<T>(std::span<const WindowSample>, const HeteroGraph&, const ModelParams<T>&,   \
                                   std::span<const GroupElement>, bool, GroupActionMode);                      \
  template std::vector<ContactVector> predict_dataset<T>(const ModelParams<T>&, const WindowDataset&, bool,    \
                                                         GroupActionMode, int);                                \
  template Metrics evaluate<T>(const ModelParams<T>&, const WindowDataset&, bool, GroupActionMode, int);

TENSEGRITY_INSTANTIATE(float)
TENSEGRITY_INSTANTIATE(double)
#undef TENSEGRITY_INSTANTIATE

}  // namespace tensegrity
