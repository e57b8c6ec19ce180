#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include "sleepdet/autodiff.hpp"
#include "sleepdet/label_remap.hpp"
#include "sleepdet/tensor.hpp"

// The detector network: three dense convolutional units with max pooling down
// to one step per second, eleven dilated dense units, and a bidirectional
// LSTM block with a residual 1x1 path feeding the four soft-maxed output
// channels. Every ablation experiment is a single configuration toggle.

namespace sleepdet::net {

struct ModelConfig {
  int input_channels = 12;
  int dcu1_count = 3;
  int dcu2_count = 11;
  std::vector<int> pool_widths = {2, 5, 5};
  // Each dense unit holds four depthwise-separable sub-layers, each growing
  // the unit by out/4 channels; the unit output is their concatenation.
  std::vector<int> dcu1_out_channels = {32, 64, 64};
  int dcu2_channels = 64;
  int kernel_size = 3;
  std::vector<int> dilation_schedule = {1, 2, 4, 8, 16, 32, 16, 8, 4, 2, 1};
  int lstm_hidden = 64;
  enum class Activation { selu, relu } activation = Activation::selu;
  bool positionwise_in_dcu1 = false;
  bool positionwise_in_dcu2 = true;
  bool use_lstm = true;
  bool use_residual_in_lstm_block = true;
  bool use_weight_norm = true;
  bool multi_task = true;
  // Preprocessing-stage toggle; carried here so one experiment number maps
  // to one switch.
  bool use_moving_normalization = true;

  static constexpr int kSublayersPerUnit = 4;

  void validate() const;
  int pool_product() const;
  /// A narrow variant for desk-scale runs.
  static ModelConfig desk_scale(int width = 16, int lstm = 16);
};

/// Returns the config with exactly the one documented change applied;
/// experiment 1 is the identity.
ModelConfig apply_ablation(const ModelConfig& config, int experiment);
/// One-line description of an experiment, for report headers.
std::string ablation_description(int experiment);

std::string config_to_json(const ModelConfig& config);
ModelConfig config_from_json(const std::string& json_text);

template <typename T>
struct NamedTensor {
  std::string name;
  Tensor<T> tensor;
  bool learnable = true;
};

/// Flat named parameter store; construction order is fixed by the config, so
/// seeds fully determine the initial weights.
template <typename T>
struct DrcnnParams {
  std::vector<NamedTensor<T>> entries;
  std::unordered_map<std::string, size_t> index;

  static DrcnnParams init(const ModelConfig& config, uint64_t seed);

  Tensor<T>& at(const std::string& name) {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("params: unknown tensor " + name);
    return entries[it->second].tensor;
  }
  const Tensor<T>& at(const std::string& name) const {
    auto it = index.find(name);
    if (it == index.end()) throw ValidationError("params: unknown tensor " + name);
    return entries[it->second].tensor;
  }
  void add(std::string name, Tensor<T> t, bool learnable) {
    index.emplace(name, entries.size());
    entries.push_back({std::move(name), std::move(t), learnable});
  }
  int64_t learnable_scalars() const {
    int64_t n = 0;
    for (const auto& e : entries)
      if (e.learnable) n += e.tensor.numel();
    return n;
  }
  template <typename U>
  DrcnnParams<U> cast() const {
    DrcnnParams<U> out;
    for (const auto& e : entries) out.add(e.name, e.tensor.template cast<U>(), e.learnable);
    return out;
  }
};

/// Leaves bound into one graph, keyed by parameter name. `store` provides
/// the mutable running-normalization state.
template <typename T>
struct BoundParams {
  std::unordered_map<std::string, ad::NodePtr<T>> nodes;
  DrcnnParams<T>* store = nullptr;

  const ad::NodePtr<T>& at(const std::string& name) const {
    auto it = nodes.find(name);
    if (it == nodes.end()) throw ValidationError("bound params: missing " + name);
    return it->second;
  }
};

template <typename T>
class Drcnn {
 public:
  Drcnn(const ModelConfig& config, DrcnnParams<T>& params)
      : cfg_(config), params_(params) {
    cfg_.validate();
  }

  /// Binds every parameter as a graph leaf. When grad_sinks is given it must
  /// be aligned with params.entries; learnable leaves accumulate there.
  BoundParams<T> bind(ad::Graph<T>& g, std::vector<Tensor<T>>* grad_sinks = nullptr) const;

  /// Probabilities 4 x (T/50) for a 12 x T input at 50 Hz.
  ad::NodePtr<T> forward(ad::Graph<T>& g, const Tensor<T>& input, ad::Mode mode,
                         std::vector<Tensor<T>>* grad_sinks = nullptr) const;

  /// Same, over an existing input node and binding (the gradient-check path).
  ad::NodePtr<T> forward_bound(ad::Graph<T>& g, BoundParams<T>& bp, ad::NodePtr<T> input,
                               ad::Mode mode) const;

  /// Pre-softmax 4-channel output of the LSTM block alone (tests).
  ad::NodePtr<T> lstm_block(ad::Graph<T>& g, BoundParams<T>& bp, ad::NodePtr<T> input,
                            ad::Mode mode) const;

  /// One dense unit (tests and receptive-field checks). `dcu2` selects the
  /// dilated, position-wise-normalized variant.
  ad::NodePtr<T> dcu_unit(ad::Graph<T>& g, BoundParams<T>& bp, ad::NodePtr<T> input,
                          const std::string& prefix, int growth, int dilation, bool positionwise,
                          ad::Mode mode) const;

  const ModelConfig& config() const { return cfg_; }

 private:
  ad::NodePtr<T> conv(ad::Graph<T>& g, BoundParams<T>& bp, ad::NodePtr<T> x,
                      const std::string& prefix, int dilation, int groups) const;
  ad::NodePtr<T> activation(ad::Graph<T>& g, ad::NodePtr<T> x) const;
  ad::NodePtr<T> lstm_mat(ad::Graph<T>& g, BoundParams<T>& bp, const std::string& prefix) const;

  ModelConfig cfg_;
  DrcnnParams<T>& params_;
};

void save_checkpoint(const ModelConfig& config, const DrcnnParams<float>& params,
                     const std::filesystem::path& dir);
std::pair<ModelConfig, DrcnnParams<float>> load_checkpoint(const std::filesystem::path& dir);

// ---------------------------------------------------------------------------
// Parameter layout. One enumeration drives initialization, binding and
// checkpoint verification.
// ---------------------------------------------------------------------------

namespace detail {

enum class ParamKind { direction, magnitude, bias, plain_weight, bn_gamma, bn_beta, bn_mean, bn_var, lstm_forget_bias };

struct ParamSpec {
  std::string name;
  std::vector<int64_t> shape;
  ParamKind kind;
  int64_t fan_in = 1;
  bool learnable = true;
};

std::vector<ParamSpec> enumerate_params(const ModelConfig& cfg);

}  // namespace detail

template <typename T>
DrcnnParams<T> DrcnnParams<T>::init(const ModelConfig& config, uint64_t seed) {
  config.validate();
  DrcnnParams<T> out;
  std::mt19937_64 rng(seed);
  for (const auto& spec : detail::enumerate_params(config)) {
    Tensor<T> t;
    switch (spec.kind) {
      case detail::ParamKind::direction:
      case detail::ParamKind::plain_weight:
        t = randn<T>(spec.shape, rng, 1.0 / std::sqrt(static_cast<double>(spec.fan_in)));
        break;
      case detail::ParamKind::magnitude:
      case detail::ParamKind::bn_gamma:
      case detail::ParamKind::bn_var:
        t = Tensor<T>::full(spec.shape, T(1));
        break;
      case detail::ParamKind::bias:
      case detail::ParamKind::bn_beta:
      case detail::ParamKind::bn_mean:
        t = Tensor<T>::zeros(spec.shape);
        break;
      case detail::ParamKind::lstm_forget_bias: {
        t = Tensor<T>::zeros(spec.shape);
        const int64_t h = spec.shape[0] / 4;
        for (int64_t i = h; i < 2 * h; ++i) t.data[static_cast<size_t>(i)] = T(1);
        break;
      }
    }
    out.add(spec.name, std::move(t), spec.learnable);
  }
  return out;
}

template <typename T>
BoundParams<T> Drcnn<T>::bind(ad::Graph<T>& g, std::vector<Tensor<T>>* grad_sinks) const {
  if (grad_sinks && grad_sinks->size() != params_.entries.size())
    throw ValidationError("bind: gradient sink list misaligned with parameters");
  BoundParams<T> bp;
  bp.store = &params_;
  for (size_t i = 0; i < params_.entries.size(); ++i) {
    const auto& e = params_.entries[i];
    if (!e.learnable) continue;  // running stats stay outside the graph
    Tensor<T>* sink = nullptr;
    if (grad_sinks) {
      auto& slot = (*grad_sinks)[i];
      if (!slot.same_shape(e.tensor)) slot = Tensor<T>::zeros(e.tensor.shape);
      sink = &slot;
    }
    bp.nodes.emplace(e.name, g.param(e.tensor, sink));
  }
  return bp;
}

template <typename T>
ad::NodePtr<T> Drcnn<T>::conv(ad::Graph<T>& g, BoundParams<T>& bp, ad::NodePtr<T> x,
                              const std::string& prefix, int dilation, int groups) const {
  ad::NodePtr<T> w;
  if (cfg_.use_weight_norm)
    w = ad::weight_norm(g, bp.at(prefix + ".v"), bp.at(prefix + ".g"));
  else
    w = bp.at(prefix + ".w");
  return ad::conv1d(g, x, w, bp.at(prefix + ".b"), dilation, groups);
}

template <typename T>
ad::NodePtr<T> Drcnn<T>::activation(ad::Graph<T>& g, ad::NodePtr<T> x) const {
  return cfg_.activation == ModelConfig::Activation::selu ? ad::selu(g, x) : ad::relu(g, x);
}

template <typename T>
ad::NodePtr<T> Drcnn<T>::lstm_mat(ad::Graph<T>& g, BoundParams<T>& bp,
                                  const std::string& prefix) const {
  if (cfg_.use_weight_norm)
    return ad::weight_norm(g, bp.at(prefix + ".v"), bp.at(prefix + ".g"));
  return bp.at(prefix + ".w");
}

template <typename T>
ad::NodePtr<T> Drcnn<T>::dcu_unit(ad::Graph<T>& g, BoundParams<T>& bp, ad::NodePtr<T> input,
                                  const std::string& prefix, int growth, int dilation,
                                  bool positionwise, ad::Mode mode) const {
  std::vector<ad::NodePtr<T>> feats{input};
  std::vector<ad::NodePtr<T>> outs;
  for (int j = 0; j < ModelConfig::kSublayersPerUnit; ++j) {
    auto in = feats.size() == 1 ? input : ad::concat_channels(g, feats);
    const int in_ch = static_cast<int>(in->value.dim(0));
    const std::string sub = prefix + ".sub" + std::to_string(j);
    auto h = conv(g, bp, in, sub + ".dw", dilation, in_ch);
    h = conv(g, bp, h, sub + ".pw", 1, 1);
    if (positionwise) h = ad::positionwise_norm(g, h);
    ad::BatchNormStats<T> stats{&bp.store->at(sub + ".bn.running_mean"),
                                &bp.store->at(sub + ".bn.running_var")};
    h = ad::batch_norm(g, h, bp.at(sub + ".bn.gamma"), bp.at(sub + ".bn.beta"), stats, mode);
    h = activation(g, h);
    feats.push_back(h);
    outs.push_back(h);
  }
  return ad::concat_channels(g, outs);
}

template <typename T>
ad::NodePtr<T> Drcnn<T>::lstm_block(ad::Graph<T>& g, BoundParams<T>& bp, ad::NodePtr<T> input,
                                    ad::Mode mode) const {
  (void)mode;
  ad::NodePtr<T> s;
  if (cfg_.use_lstm) {
    ad::LstmDirectionWeights<T> fwd{lstm_mat(g, bp, "lstm.fwd.wx"),
                                    lstm_mat(g, bp, "lstm.fwd.wh"), bp.at("lstm.fwd.b")};
    ad::LstmDirectionWeights<T> bwd{lstm_mat(g, bp, "lstm.bwd.wx"),
                                    lstm_mat(g, bp, "lstm.bwd.wh"), bp.at("lstm.bwd.b")};
    s = ad::bilstm(g, input, fwd, bwd);
  }
  if (cfg_.use_residual_in_lstm_block) {
    auto r = conv(g, bp, input, "lstm.res", 1, 1);
    s = s ? ad::add(g, s, r) : r;
  }
  if (!s)
    throw ValidationError("model: the LSTM block needs the LSTM or the residual path");
  auto h = conv(g, bp, s, "lstm.conv_a", 1, 1);
  h = ad::tanh_op(g, h);
  return conv(g, bp, h, "lstm.conv_b", 1, 1);
}

template <typename T>
ad::NodePtr<T> Drcnn<T>::forward_bound(ad::Graph<T>& g, BoundParams<T>& bp,
                                       ad::NodePtr<T> input, ad::Mode mode) const {
  if (input->value.rank() != 2 || input->value.dim(0) != cfg_.input_channels)
    throw ValidationError("model: input must be " + std::to_string(cfg_.input_channels) +
                          " x T, got " + shape_str(input->value.shape));
  if (input->value.dim(1) % cfg_.pool_product() != 0 || input->value.dim(1) == 0)
    throw ValidationError("model: input length must be a positive multiple of " +
                          std::to_string(cfg_.pool_product()));
  auto x = input;
  for (int u = 0; u < cfg_.dcu1_count; ++u) {
    x = dcu_unit(g, bp, x, "dcu1." + std::to_string(u),
                 cfg_.dcu1_out_channels[static_cast<size_t>(u)] / ModelConfig::kSublayersPerUnit,
                 1, cfg_.positionwise_in_dcu1, mode);
    x = ad::maxpool1d(g, x, cfg_.pool_widths[static_cast<size_t>(u)]);
  }
  for (int u = 0; u < cfg_.dcu2_count; ++u)
    x = dcu_unit(g, bp, x, "dcu2." + std::to_string(u),
                 cfg_.dcu2_channels / ModelConfig::kSublayersPerUnit,
                 cfg_.dilation_schedule[static_cast<size_t>(u)], cfg_.positionwise_in_dcu2,
                 mode);
  auto logits = lstm_block(g, bp, x, mode);
  return ad::softmax_channels(g, logits);
}

template <typename T>
ad::NodePtr<T> Drcnn<T>::forward(ad::Graph<T>& g, const Tensor<T>& input, ad::Mode mode,
                                 std::vector<Tensor<T>>* grad_sinks) const {
  auto bp = bind(g, grad_sinks);
  return forward_bound(g, bp, g.input(input), mode);
}

}  // namespace sleepdet::net
