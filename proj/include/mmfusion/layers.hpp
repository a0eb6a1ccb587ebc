// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_LAYERS_HPP
#define MMFUSION_LAYERS_HPP

#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/ops.hpp"
#include "mmfusion/rng.hpp"
#include "mmfusion/tensor.hpp"

namespace mmf {

struct ForwardContext {
  bool training = false;
  Rng* rng = nullptr;  // required when training with dropout

  Rng& random() const;
};

/// One stage of a sequential stack. Forward is const: parameters are tensor
/// handles that only the optimizer mutates.
class Layer {
 public:
  virtual ~Layer() = default;
  virtual Tensor forward(const Tensor& x, ForwardContext& ctx) const = 0;
  /// Short stage label (Conv, MaxP, Drop, LSTM, GRU, ATT, GlobAve, Dense).
  virtual std::string_view kind() const = 0;
  virtual void collect_parameters(const std::string& /*prefix*/, std::vector<NamedTensor>& /*out*/) const {}
};

// Weight initializers.
Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, Shape shape);
Tensor orthogonal(std::size_t n, Rng& rng);

class Dense final : public Layer {
 public:
  Dense(std::size_t in, std::size_t out, Activation act, Rng& rng);
  Dense(Tensor weights, Tensor bias, Activation act);

  Tensor forward(const Tensor& x, ForwardContext& ctx) const override;
  std::string_view kind() const override { return "Dense"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  std::size_t in_features() const { return weights_.dim(0); }
  std::size_t out_features() const { return weights_.dim(1); }
  const Tensor& weights() const { return weights_; }
  const Tensor& bias() const { return bias_; }
  Activation activation() const { return act_; }

 private:
  Tensor weights_, bias_;
  Activation act_;
};

class Conv1D final : public Layer {
 public:
  Conv1D(std::size_t in_channels, std::size_t filters, std::size_t width, std::size_t stride, Activation act,
         Rng& rng);

  Tensor forward(const Tensor& x, ForwardContext& ctx) const override;
  std::string_view kind() const override { return "Conv"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override;

  std::size_t filters() const { return kernels_.dim(2); }
  std::size_t width() const { return kernels_.dim(0); }
  std::size_t stride() const { return stride_; }
  const Tensor& kernels() const { return kernels_; }
  const Tensor& bias() const { return bias_; }

 private:
  Tensor kernels_, bias_;
  std::size_t stride_;
  Activation act_;
};

class MaxPool1D final : public Layer {
 public:
  explicit MaxPool1D(std::size_t window) : window_(window) {}
  Tensor forward(const Tensor& x, ForwardContext&) const override { return max_pool1d(x, window_); }
  std::string_view kind() const override { return "MaxP"; }
  std::size_t window() const { return window_; }

 private:
  std::size_t window_;
};

class Dropout final : public Layer {
 public:
  explicit Dropout(double rate);
  Tensor forward(const Tensor& x, ForwardContext& ctx) const override;
  std::string_view kind() const override { return "Drop"; }
  double rate() const { return rate_; }

 private:
  double rate_;
};

class GlobalAvgPool final : public Layer {
 public:
  Tensor forward(const Tensor& x, ForwardContext&) const override { return global_avg_pool(x); }
  std::string_view kind() const override { return "GlobAve"; }
};

/// Input and recurrent weights of one gate: x*W + h*U + b.
struct GateParams {
  Tensor input_weights;      // [features x units]
  Tensor recurrent_weights;  // [units x units]
  Tensor bias;               // [units]

  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

/// Takes [time x features] or [batch x time x features], returns the full hidden
/// sequence with the same leading layout. State starts at zero.
class LSTM final : public Layer {
 public:
  LSTM(std::size_t features, std::size_t units, Rng& rng);

  Tensor forward(const Tensor& x, ForwardContext& ctx) const override;
  std::string_view kind() const override { return "LSTM"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override;
  std::size_t units() const { return units_; }

  GateParams input_gate, forget_gate, cell_gate, output_gate;

 private:
  std::size_t units_;
};

class GRU final : public Layer {
 public:
  GRU(std::size_t features, std::size_t units, Rng& rng);

  Tensor forward(const Tensor& x, ForwardContext& ctx) const override;
  std::string_view kind() const override { return "GRU"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override;
  std::size_t units() const { return units_; }

  GateParams update_gate, reset_gate, candidate;

 private:
  std::size_t units_;
};

/// Q, K and V projections of one attention head. d_k is the key width.
struct AttentionHead {
  Tensor w_q, w_k, w_v;

  AttentionHead() = default;
  AttentionHead(std::size_t model_dim, std::size_t head_dim, Rng& rng);
  /// Separate input widths for the query, key and value sources.
  AttentionHead(std::size_t query_dim, std::size_t key_dim, std::size_t value_dim, std::size_t head_dim, Rng& rng);

  std::size_t head_dim() const { return w_k.dim(1); }
  void collect(const std::string& prefix, std::vector<NamedTensor>& out) const;
};

struct AttentionResult {
  Tensor output;   // [.. x t_q x head_dim]
  Tensor weights;  // [.. x t_q x t_k], rows sum to one
};

/// softmax(Q K^T / sqrt(d_k) + mask) V. Inputs are [t x d] or [batch x t x d].
/// key_mask, when non-empty, holds batch*t_k entries; zero marks a padded key.
AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             std::span<const double> key_mask = {});

AttentionResult self_attention(const AttentionHead& head, const Tensor& sequence,
                               std::span<const double> key_mask = {});

enum class CrossAttentionForm {
  kStandard,         // Q from modality a; K and V from modality b
  kQueryValueFromA,  // Q and V from modality a; K from modality b (needs t_a == t_b)
};

std::string_view cross_attention_form_name(CrossAttentionForm form);
CrossAttentionForm parse_cross_attention_form(std::string_view name);

/// Output has t_a rows. The head's value projection must accept the width of
/// whichever modality supplies V under `form`.
AttentionResult cross_attention(const AttentionHead& head, const Tensor& modality_a, const Tensor& modality_b,
                                CrossAttentionForm form = CrossAttentionForm::kStandard,
                                std::span<const double> key_mask_b = {});

/// Single-head self-attention as a stack stage ("attentive CNN").
class SelfAttentionLayer final : public Layer {
 public:
  SelfAttentionLayer(std::size_t model_dim, std::size_t head_dim, Rng& rng) : head_(model_dim, head_dim, rng) {}
  Tensor forward(const Tensor& x, ForwardContext&) const override { return self_attention(head_, x).output; }
  std::string_view kind() const override { return "ATT"; }
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const override {
    head_.collect(prefix, out);
  }
  const AttentionHead& head() const { return head_; }

 private:
  AttentionHead head_;
};

/// sin on even indices, cos on odd, wavelength 10000^(2i/dim). dim must be even.
Tensor positional_encoding(std::size_t time, std::size_t dim);

class Embedding {
 public:
  Embedding(std::size_t vocab, std::size_t dim, Rng& rng);
  Tensor forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t length) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;
  const Tensor& table() const { return table_; }
  std::size_t dim() const { return table_.dim(1); }

 private:
  Tensor table_;
};

/// Post-norm encoder block: multi-head self-attention, residual, layer norm,
/// position-wise ReLU feed-forward, residual, layer norm.
class TransformerEncoderBlock {
 public:
  TransformerEncoderBlock(std::size_t dim, std::size_t heads, std::size_t ff_dim, Rng& rng);

  Tensor forward(const Tensor& x, std::span<const double> key_mask = {}) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;

  std::vector<AttentionHead> heads;
  Dense output_projection;
  Tensor norm1_gain, norm1_bias;
  Dense feed_forward1, feed_forward2;
  Tensor norm2_gain, norm2_bias;

  static constexpr double kNormEpsilon = 1e-5;
};

}  // namespace mmf

#endif  // MMFUSION_LAYERS_HPP
