// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_FUSION_HPP
#define MMFUSION_FUSION_HPP

#include <cstdint>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "mmfusion/data.hpp"
#include "mmfusion/layers.hpp"

namespace mmf {

enum class BaseModel { kCnn, kLstm, kGru, kAtt };
std::string_view base_model_name(BaseModel b);
BaseModel parse_base_model(std::string_view name);

enum class Channel { kBond, kRatios, kMarket, kCovariate, kText };
std::string_view channel_name(Channel c);
Channel parse_channel(std::string_view name);
/// Comma-separated list such as "bond,text" or "all".
std::vector<Channel> parse_channels(std::string_view list);
std::string channels_to_string(std::span<const Channel> channels);
const std::vector<Channel>& all_channels();
const std::vector<Channel>& numeric_channels();
std::size_t channel_width(Channel c);

class BuildError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

struct FusionConfig {
  int group = 3;  // 1..4
  BaseModel base = BaseModel::kCnn;
  int num_classes = kMergedClasses;

  // Convolution stages.
  std::size_t filters = 64;
  std::size_t kernel = 2;
  std::size_t stride = 1;
  std::size_t pool = 2;
  double dropout = 0.2;  // Drop stages inside Networks A/B

  std::size_t units = 64;          // LSTM / GRU width
  std::size_t attention_dim = 64;  // ATT stage width in Network A

  // Text stream.
  std::size_t vocab_size = 20000;
  std::size_t embedding_dim = 64;
  std::size_t max_len = 512;
  std::size_t encoder_blocks = 2;
  std::size_t encoder_heads = 2;
  std::size_t encoder_ff = 128;

  // Fusion and head.
  std::size_t cross_dim = 64;
  CrossAttentionForm cross_form = CrossAttentionForm::kStandard;
  std::size_t head_units = 64;
  double head_dropout = 0.3;

  std::vector<Channel> channels = all_channels();

  /// Throws BuildError on out-of-range fields.
  void validate() const;
  bool uses(Channel c) const;
};

/// One model input batch. Numeric channels are [batch x width].
struct Batch {
  std::size_t size = 0;
  Tensor bond, ratios, market, covariate;
  std::vector<std::int32_t> tokens;  // batch * max_len ids
  std::size_t max_len = 0;
  std::vector<int> labels;  // 0-based merged class

  const Tensor& channel(Channel c) const;
};

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows, std::size_t max_len);

/// A sequential stack that either pools to a vector or stops at the last
/// sequence stage (the fusion tap used by cross-attention groups).
class Network {
 public:
  Network() = default;
  Network(Network&&) = default;
  Network& operator=(Network&&) = default;

  void append(std::unique_ptr<Layer> layer) { stages_.push_back(std::move(layer)); }
  /// x: [batch x time x features]. With pooled=false the trailing GlobAve is skipped.
  Tensor forward(const Tensor& x, ForwardContext& ctx, bool pooled = true) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;

  std::vector<std::string> stage_kinds() const;
  const Layer& stage(std::size_t i) const { return *stages_.at(i); }
  std::size_t size() const { return stages_.size(); }
  std::size_t output_width() const { return output_width_; }
  /// Time steps left after the last sequence stage for an input of `length`.
  std::size_t sequence_length(std::size_t length) const;

 private:
  friend Network build_network_a(BaseModel, std::size_t, const FusionConfig&, Rng&);
  friend class TextNetwork;
  std::vector<std::unique_ptr<Layer>> stages_;
  std::size_t output_width_ = 0;
};

/// Network A over a length-`input_length` single-feature sequence.
Network build_network_a(BaseModel base, std::size_t input_length, const FusionConfig& cfg, Rng& rng);

/// Network B: token embedding followed by the base-specific text stack, or a
/// small transformer encoder for the attention base.
class TextNetwork {
 public:
  TextNetwork(BaseModel base, const FusionConfig& cfg, Rng& rng);

  struct Output {
    Tensor value;               // pooled [batch x width] or sequence [batch x time x width]
    std::vector<double> mask;   // key mask for sequences (empty when every step is valid)
  };
  Output forward(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t length, ForwardContext& ctx,
                 bool pooled = true) const;
  void collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const;

  std::vector<std::string> stage_kinds() const;
  std::size_t output_width() const { return width_; }
  std::size_t sequence_length(std::size_t length) const;
  std::size_t conv_count() const;
  const Embedding& embedding() const { return embedding_; }

 private:
  BaseModel base_;
  Embedding embedding_;
  Network stack_;                                  // non-attention bases
  std::vector<TransformerEncoderBlock> encoder_;   // attention base
  std::size_t width_ = 0;
};

TextNetwork build_network_b(BaseModel base, std::size_t vocab_size, const FusionConfig& cfg, Rng& rng);

struct ForwardOptions {
  bool zero_text_stream = false;  // zero Network B's output at the fusion point
};

class MultimodalModel {
 public:
  MultimodalModel(const FusionConfig& cfg, std::uint64_t seed);
  MultimodalModel(MultimodalModel&&) = default;
  MultimodalModel& operator=(MultimodalModel&&) = default;

  /// Logits [batch x num_classes].
  Tensor forward(const Batch& batch, ForwardContext& ctx, const ForwardOptions& options = {}) const;

  std::vector<NamedTensor> parameters() const;
  std::size_t parameter_count() const;

  const FusionConfig& config() const { return cfg_; }
  std::size_t network_a_count() const { return network_a_.size(); }
  const Network& network_a(std::size_t i) const { return network_a_.at(i); }
  std::span<const Channel> network_a_channels() const { return a_channels_; }
  const TextNetwork* network_b() const { return network_b_ ? &*network_b_ : nullptr; }
  std::size_t cross_attention_count() const { return cross_ ? 1 : 0; }
  /// Width of the vector fed to the head.
  std::size_t fused_width() const { return fused_width_; }
  /// Coordinates of the fused vector that come from Network B (Groups 1 and 3).
  std::pair<std::size_t, std::size_t> text_slice() const { return text_slice_; }
  const Dense& head_hidden() const { return *head_hidden_; }
  const Dense& head_output() const { return *head_output_; }

 private:
  Tensor numeric_input(const Batch& batch, std::span<const Channel> channels) const;

  FusionConfig cfg_;
  std::vector<Network> network_a_;
  std::vector<std::vector<Channel>> a_inputs_;  // channels feeding each Network A
  std::vector<Channel> a_channels_;             // first channel of each A, for naming
  std::optional<TextNetwork> network_b_;
  std::optional<AttentionHead> cross_;
  std::optional<Dense> head_hidden_, head_output_;
  Dropout head_dropout_;
  std::size_t fused_width_ = 0;
  std::pair<std::size_t, std::size_t> text_slice_{0, 0};
};

MultimodalModel build_model(const FusionConfig& cfg, std::uint64_t seed);
std::size_t parameter_count(const MultimodalModel& model);

}  // namespace mmf

#endif  // MMFUSION_FUSION_HPP
