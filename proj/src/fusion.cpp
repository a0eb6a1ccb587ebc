// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <set>

namespace mmf {

std::string_view base_model_name(BaseModel b) {
  switch (b) {
    case BaseModel::kCnn: return "cnn";
    case BaseModel::kLstm: return "lstm";
    case BaseModel::kGru: return "gru";
    case BaseModel::kAtt: return "att";
  }
  return "?";
}

BaseModel parse_base_model(std::string_view name) {
  if (name == "cnn") return BaseModel::kCnn;
  if (name == "lstm") return BaseModel::kLstm;
  if (name == "gru") return BaseModel::kGru;
  if (name == "att") return BaseModel::kAtt;
  throw BuildError("unknown base model '" + std::string(name) + "' (expected cnn, lstm, gru or att)");
}

std::string_view channel_name(Channel c) {
  switch (c) {
    case Channel::kBond: return "bond";
    case Channel::kRatios: return "ratios";
    case Channel::kMarket: return "market";
    case Channel::kCovariate: return "covariate";
    case Channel::kText: return "text";
  }
  return "?";
}

Channel parse_channel(std::string_view name) {
  for (Channel c : all_channels())
    if (channel_name(c) == name) return c;
  throw BuildError("unknown channel '" + std::string(name) + "' (expected bond, ratios, market, covariate or text)");
}

std::vector<Channel> parse_channels(std::string_view list) {
  if (list == "all") return all_channels();
  std::vector<Channel> out;
  while (!list.empty()) {
    const auto comma = list.find(',');
    const auto item = list.substr(0, comma);
    if (!item.empty()) {
      const Channel c = parse_channel(item);
      if (std::find(out.begin(), out.end(), c) != out.end())
        throw BuildError("channel '" + std::string(item) + "' listed twice");
      out.push_back(c);
    }
    list = comma == std::string_view::npos ? std::string_view{} : list.substr(comma + 1);
  }
  if (out.empty()) throw BuildError("empty channel list");
  // Canonical order keeps architectures independent of how the list was typed.
  std::sort(out.begin(), out.end());
  return out;
}

std::string channels_to_string(std::span<const Channel> channels) {
  std::string out;
  for (Channel c : channels) {
    if (!out.empty()) out += ',';
    out += channel_name(c);
  }
  return out;
}

const std::vector<Channel>& all_channels() {
  static const std::vector<Channel> v{Channel::kBond, Channel::kRatios, Channel::kMarket, Channel::kCovariate,
                                      Channel::kText};
  return v;
}

const std::vector<Channel>& numeric_channels() {
  static const std::vector<Channel> v{Channel::kBond, Channel::kRatios, Channel::kMarket, Channel::kCovariate};
  return v;
}

std::size_t channel_width(Channel c) {
  switch (c) {
    case Channel::kBond: return kBondWidth;
    case Channel::kRatios: return kRatiosWidth;
    case Channel::kMarket: return kMarketWidth;
    case Channel::kCovariate: return kCovariateWidth;
    case Channel::kText: return 0;
  }
  return 0;
}

void FusionConfig::validate() const {
  auto fail = [](const std::string& what) { throw BuildError("fusion config: " + what); };
  if (group < 1 || group > 4) fail("group must be 1..4, got " + std::to_string(group));
  if (num_classes < 2) fail("num_classes must be at least 2");
  if (!filters || !kernel || !stride || !pool || !units || !attention_dim) fail("layer sizes must be positive");
  if (!embedding_dim || !max_len || !cross_dim || !head_units) fail("layer sizes must be positive");
  if (vocab_size < Vocabulary::kReservedCount) fail("vocab_size below the reserved token count");
  if (!(dropout >= 0.0 && dropout < 1.0) || !(head_dropout >= 0.0 && head_dropout < 1.0))
    fail("dropout rates must be in [0,1)");
  if (base == BaseModel::kAtt) {
    if (!encoder_blocks || !encoder_heads || !encoder_ff) fail("encoder sizes must be positive");
    if (embedding_dim % 2) fail("embedding_dim must be even for positional encoding");
    if (embedding_dim % encoder_heads) fail("embedding_dim must be divisible by encoder_heads");
  }
  if (channels.empty()) fail("no input channels");
  std::set<Channel> unique(channels.begin(), channels.end());
  if (unique.size() != channels.size()) fail("duplicate channel");
}

bool FusionConfig::uses(Channel c) const { return std::find(channels.begin(), channels.end(), c) != channels.end(); }

// --- Batches -----------------------------------------------------------------

const Tensor& Batch::channel(Channel c) const {
  switch (c) {
    case Channel::kBond: return bond;
    case Channel::kRatios: return ratios;
    case Channel::kMarket: return market;
    case Channel::kCovariate: return covariate;
    case Channel::kText: break;
  }
  throw std::invalid_argument("Batch::channel: text has no tensor");
}

Batch make_batch(const Dataset& data, std::span<const std::size_t> rows, std::size_t max_len) {
  Batch b;
  b.size = rows.size();
  b.max_len = max_len;
  auto pack = [&](std::vector<double> Sample::*field, std::size_t width) {
    std::vector<double> v;
    v.reserve(rows.size() * width);
    for (std::size_t r : rows) {
      const auto& x = data.at(r).*field;
      if (x.size() != width) throw ShapeError("make_batch: record " + std::to_string(r) + " has a bad channel width");
      v.insert(v.end(), x.begin(), x.end());
    }
    return Tensor::from_data({rows.size(), width}, std::move(v));
  };
  b.bond = pack(&Sample::bond, kBondWidth);
  b.ratios = pack(&Sample::ratios, kRatiosWidth);
  b.market = pack(&Sample::market, kMarketWidth);
  b.covariate = pack(&Sample::covariate, kCovariateWidth);
  b.tokens.reserve(rows.size() * max_len);
  for (std::size_t r : rows) {
    const auto& t = data[r].tokens;
    if (t.size() != max_len)
      throw ShapeError("make_batch: record " + std::to_string(r) + " has " + std::to_string(t.size()) +
                       " tokens, expected " + std::to_string(max_len));
    b.tokens.insert(b.tokens.end(), t.begin(), t.end());
    b.labels.push_back(data[r].label - 1);
  }
  return b;
}

// --- Networks ----------------------------------------------------------------

Tensor Network::forward(const Tensor& x, ForwardContext& ctx, bool pooled) const {
  Tensor h = x;
  for (std::size_t i = 0; i < stages_.size(); ++i) {
    if (!pooled && i + 1 == stages_.size() && stages_[i]->kind() == "GlobAve") break;
    h = stages_[i]->forward(h, ctx);
  }
  return h;
}

void Network::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t i = 0; i < stages_.size(); ++i)
    stages_[i]->collect_parameters(prefix + "." + std::to_string(i) + "." + std::string(stages_[i]->kind()), out);
}

std::vector<std::string> Network::stage_kinds() const {
  std::vector<std::string> out;
  for (const auto& s : stages_) out.emplace_back(s->kind());
  return out;
}

std::size_t Network::sequence_length(std::size_t length) const {
  for (const auto& s : stages_) {
    if (const auto* conv = dynamic_cast<const Conv1D*>(s.get())) {
      if (length < conv->width()) return 0;
      length = (length - conv->width()) / conv->stride() + 1;
    } else if (const auto* pool = dynamic_cast<const MaxPool1D*>(s.get())) {
      length /= pool->window();
    }
  }
  return length;
}

namespace {

// Pooling falls back to a window of 1 when a full window would leave the next
// convolution without enough steps (short channels such as the covariates).
std::size_t pool_window(std::size_t length, const FusionConfig& cfg, bool conv_follows) {
  const std::size_t need = conv_follows ? cfg.kernel : 1;
  return length / cfg.pool >= need ? cfg.pool : 1;
}

std::size_t conv_length(std::size_t length, const FusionConfig& cfg, const std::string& where) {
  if (length < cfg.kernel)
    throw BuildError(where + ": sequence of length " + std::to_string(length) + " is shorter than kernel " +
                     std::to_string(cfg.kernel));
  return (length - cfg.kernel) / cfg.stride + 1;
}

std::unique_ptr<Layer> conv(std::size_t in, const FusionConfig& cfg, Rng& rng) {
  return std::make_unique<Conv1D>(in, cfg.filters, cfg.kernel, cfg.stride, Activation::kRelu, rng);
}

}  // namespace

Network build_network_a(BaseModel base, std::size_t input_length, const FusionConfig& cfg, Rng& rng) {
  if (input_length < 1) throw BuildError("network A: input_features must be positive");
  Network net;
  std::size_t len = conv_length(input_length, cfg, "network A");
  net.append(conv(1, cfg, rng));
  switch (base) {
    case BaseModel::kCnn: {
      const std::size_t w = pool_window(len, cfg, true);
      net.append(std::make_unique<MaxPool1D>(w));
      conv_length(len / w, cfg, "network A");
      net.append(conv(cfg.filters, cfg, rng));
      net.output_width_ = cfg.filters;
      break;
    }
    case BaseModel::kLstm:
    case BaseModel::kGru: {
      net.append(std::make_unique<MaxPool1D>(pool_window(len, cfg, false)));
      if (base == BaseModel::kLstm)
        net.append(std::make_unique<LSTM>(cfg.filters, cfg.units, rng));
      else
        net.append(std::make_unique<GRU>(cfg.filters, cfg.units, rng));
      net.output_width_ = cfg.units;
      break;
    }
    case BaseModel::kAtt:
      net.append(std::make_unique<Dropout>(cfg.dropout));
      net.append(std::make_unique<SelfAttentionLayer>(cfg.filters, cfg.attention_dim, rng));
      net.output_width_ = cfg.attention_dim;
      break;
  }
  net.append(std::make_unique<GlobalAvgPool>());
  return net;
}

TextNetwork::TextNetwork(BaseModel base, const FusionConfig& cfg, Rng& rng)
    : base_(base), embedding_(cfg.vocab_size, cfg.embedding_dim, rng) {
  if (cfg.vocab_size < Vocabulary::kReservedCount) throw BuildError("network B: vocab_size below reserved count");
  if (base == BaseModel::kAtt) {
    if (cfg.embedding_dim % cfg.encoder_heads)
      throw BuildError("network B: embedding_dim " + std::to_string(cfg.embedding_dim) + " not divisible by " +
                       std::to_string(cfg.encoder_heads) + " heads");
    for (std::size_t i = 0; i < cfg.encoder_blocks; ++i)
      encoder_.emplace_back(cfg.embedding_dim, cfg.encoder_heads, cfg.encoder_ff, rng);
    width_ = cfg.embedding_dim;
    return;
  }
  std::size_t len = conv_length(cfg.max_len, cfg, "network B");
  stack_.append(conv(cfg.embedding_dim, cfg, rng));
  stack_.append(std::make_unique<Dropout>(cfg.dropout));
  len = conv_length(len, cfg, "network B");
  stack_.append(conv(cfg.filters, cfg, rng));
  if (base == BaseModel::kCnn) {
    const std::size_t w = pool_window(len, cfg, true);
    stack_.append(std::make_unique<MaxPool1D>(w));
    conv_length(len / w, cfg, "network B");
    stack_.append(conv(cfg.filters, cfg, rng));
    width_ = cfg.filters;
  } else {
    stack_.append(std::make_unique<MaxPool1D>(pool_window(len, cfg, false)));
    if (base == BaseModel::kLstm)
      stack_.append(std::make_unique<LSTM>(cfg.filters, cfg.units, rng));
    else
      stack_.append(std::make_unique<GRU>(cfg.filters, cfg.units, rng));
    width_ = cfg.units;
  }
  stack_.append(std::make_unique<GlobalAvgPool>());
  stack_.output_width_ = width_;
}

TextNetwork::Output TextNetwork::forward(std::span<const std::int32_t> tokens, std::size_t batch, std::size_t length,
                                         ForwardContext& ctx, bool pooled) const {
  if (tokens.size() != batch * length) throw ShapeError("network B: token count does not match batch x length");
  std::vector<double> mask(tokens.size());
  for (std::size_t i = 0; i < tokens.size(); ++i) mask[i] = tokens[i] == Vocabulary::kPad ? 0.0 : 1.0;
  const std::size_t dim = embedding_.dim();
  Tensor x = embedding_.forward(tokens, batch, length);

  if (base_ == BaseModel::kAtt) {
    x = add(scale(x, std::sqrt(static_cast<double>(dim))), positional_encoding(length, dim));
    for (const auto& block : encoder_) x = block.forward(x, mask);
    if (pooled) return {masked_mean_pool(x, mask), {}};
    return {x, std::move(mask)};
  }

  // Pad positions contribute zero vectors to the convolutions.
  std::vector<double> wide(tokens.size() * dim);
  for (std::size_t i = 0; i < tokens.size(); ++i) std::fill_n(wide.begin() + static_cast<std::ptrdiff_t>(i * dim), dim, mask[i]);
  x = mul(x, Tensor::from_data({batch, length, dim}, std::move(wide)));
  return {stack_.forward(x, ctx, pooled), {}};
}

void TextNetwork::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  embedding_.collect_parameters(prefix + ".embedding", out);
  stack_.collect_parameters(prefix, out);
  for (std::size_t i = 0; i < encoder_.size(); ++i) encoder_[i].collect_parameters(prefix + ".encoder" + std::to_string(i), out);
}

std::vector<std::string> TextNetwork::stage_kinds() const {
  std::vector<std::string> out{"Embed"};
  if (base_ == BaseModel::kAtt) {
    for (std::size_t i = 0; i < encoder_.size(); ++i) out.emplace_back("Encoder");
    out.emplace_back("MaskedMean");
    return out;
  }
  for (auto& k : stack_.stage_kinds()) out.push_back(std::move(k));
  return out;
}

std::size_t TextNetwork::sequence_length(std::size_t length) const {
  return base_ == BaseModel::kAtt ? length : stack_.sequence_length(length);
}

std::size_t TextNetwork::conv_count() const {
  const auto kinds = stage_kinds();
  return static_cast<std::size_t>(std::count(kinds.begin(), kinds.end(), "Conv"));
}

TextNetwork build_network_b(BaseModel base, std::size_t vocab_size, const FusionConfig& cfg, Rng& rng) {
  FusionConfig c = cfg;
  c.vocab_size = vocab_size;
  return TextNetwork(base, c, rng);
}

// --- Model ---------------------------------------------------------------------

MultimodalModel::MultimodalModel(const FusionConfig& cfg, std::uint64_t seed)
    : cfg_(cfg), head_dropout_(cfg.head_dropout) {
  cfg_.validate();
  Rng rng(seed);

  std::vector<Channel> numeric;
  for (Channel c : numeric_channels())
    if (cfg_.uses(c)) numeric.push_back(c);
  const bool per_channel = cfg_.group <= 2;
  if (per_channel) {
    for (Channel c : numeric) {
      network_a_.push_back(build_network_a(cfg_.base, channel_width(c), cfg_, rng));
      a_inputs_.push_back({c});
      a_channels_.push_back(c);
    }
  } else if (!numeric.empty()) {
    std::size_t width = 0;
    for (Channel c : numeric) width += channel_width(c);
    network_a_.push_back(build_network_a(cfg_.base, width, cfg_, rng));
    a_inputs_.push_back(numeric);
    a_channels_.push_back(numeric.front());
  }
  if (cfg_.uses(Channel::kText)) network_b_.emplace(cfg_.base, cfg_, rng);

  const bool cross = (cfg_.group == 2 || cfg_.group == 4) && !network_a_.empty() && network_b_;
  if (cross) {
    const std::size_t width_a = network_a_.front().output_width();
    const std::size_t width_b = network_b_->output_width();
    if (cfg_.cross_form == CrossAttentionForm::kQueryValueFromA) {
      std::size_t t_a = 0;
      for (std::size_t i = 0; i < network_a_.size(); ++i) {
        std::size_t len = 0;
        for (Channel c : a_inputs_[i]) len += channel_width(c);
        t_a += network_a_[i].sequence_length(len);
      }
      const std::size_t t_b = network_b_->sequence_length(cfg_.max_len);
      if (t_a != t_b)
        throw BuildError("qv_from_a cross-attention needs equal sequence lengths; numeric stream has " +
                         std::to_string(t_a) + " steps, text stream " + std::to_string(t_b));
    }
    const std::size_t value_dim = cfg_.cross_form == CrossAttentionForm::kStandard ? width_b : width_a;
    cross_.emplace(width_a, width_b, value_dim, cfg_.cross_dim, rng);
    fused_width_ = cfg_.cross_dim;
  } else {
    for (const auto& a : network_a_) fused_width_ += a.output_width();
    if (network_b_) {
      text_slice_ = {fused_width_, network_b_->output_width()};
      fused_width_ += network_b_->output_width();
    }
  }
  head_hidden_.emplace(fused_width_, cfg_.head_units, Activation::kRelu, rng);
  head_output_.emplace(cfg_.head_units, static_cast<std::size_t>(cfg_.num_classes), Activation::kNone, rng);
}

Tensor MultimodalModel::numeric_input(const Batch& batch, std::span<const Channel> channels) const {
  std::vector<Tensor> parts;
  for (Channel c : channels) {
    const Tensor& t = batch.channel(c);
    if (t.rank() != 2 || t.dim(0) != batch.size || t.dim(1) != channel_width(c))
      throw ShapeError("forward: channel " + std::string(channel_name(c)) + " has shape " + shape_to_string(t.shape()) +
                       ", expected [" + std::to_string(batch.size) + "x" + std::to_string(channel_width(c)) + "]");
    parts.push_back(t);
  }
  Tensor joined = parts.size() == 1 ? parts.front() : concat(parts, 1);
  return reshape(joined, {batch.size, joined.dim(1), 1});
}

Tensor MultimodalModel::forward(const Batch& batch, ForwardContext& ctx, const ForwardOptions& options) const {
  if (batch.size == 0) throw ShapeError("forward: empty batch");
  if (network_b_ && (batch.max_len != cfg_.max_len || batch.tokens.size() != batch.size * batch.max_len))
    throw ShapeError("forward: channel text has length " + std::to_string(batch.max_len) + ", expected " +
                     std::to_string(cfg_.max_len));

  Tensor fused;
  if (cross_) {
    std::vector<Tensor> seqs;
    for (std::size_t i = 0; i < network_a_.size(); ++i)
      seqs.push_back(network_a_[i].forward(numeric_input(batch, a_inputs_[i]), ctx, false));
    const Tensor a = seqs.size() == 1 ? seqs.front() : concat(seqs, 1);
    auto text = network_b_->forward(batch.tokens, batch.size, batch.max_len, ctx, false);
    if (options.zero_text_stream) text.value = Tensor::zeros(text.value.shape());
    const auto attended = cross_attention(*cross_, a, text.value, cfg_.cross_form, text.mask);
    fused = global_avg_pool(attended.output);
  } else {
    std::vector<Tensor> parts;
    for (std::size_t i = 0; i < network_a_.size(); ++i)
      parts.push_back(network_a_[i].forward(numeric_input(batch, a_inputs_[i]), ctx, true));
    if (network_b_) {
      Tensor t = network_b_->forward(batch.tokens, batch.size, batch.max_len, ctx, true).value;
      if (options.zero_text_stream) t = Tensor::zeros(t.shape());
      parts.push_back(t);
    }
    fused = parts.size() == 1 ? parts.front() : concat(parts, 1);
  }
  Tensor h = head_hidden_->forward(fused, ctx);
  h = head_dropout_.forward(h, ctx);
  return head_output_->forward(h, ctx);
}

std::vector<NamedTensor> MultimodalModel::parameters() const {
  std::vector<NamedTensor> out;
  for (std::size_t i = 0; i < network_a_.size(); ++i) {
    const std::string name = cfg_.group <= 2 ? std::string(channel_name(a_channels_[i])) : "early";
    network_a_[i].collect_parameters("a." + name, out);
  }
  if (network_b_) network_b_->collect_parameters("b", out);
  if (cross_) cross_->collect("fusion.cross", out);
  head_hidden_->collect_parameters("head.hidden", out);
  head_output_->collect_parameters("head.output", out);
  return out;
}

std::size_t MultimodalModel::parameter_count() const {
  const auto p = parameters();
  return total_size(p);
}

MultimodalModel build_model(const FusionConfig& cfg, std::uint64_t seed) { return MultimodalModel(cfg, seed); }

std::size_t parameter_count(const MultimodalModel& model) { return model.parameter_count(); }

}  // namespace mmf
