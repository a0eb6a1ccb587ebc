// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/layers.hpp"

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

namespace mmf {

Rng& ForwardContext::random() const {
  if (!rng) throw std::logic_error("forward context has no random generator");
  return *rng;
}

Tensor glorot_uniform(std::size_t fan_in, std::size_t fan_out, Rng& rng, Shape shape) {
  const double limit = std::sqrt(6.0 / static_cast<double>(fan_in + fan_out));
  std::vector<double> v(shape_numel(shape));
  for (auto& x : v) x = rng.uniform(-limit, limit);
  return Tensor::from_data(std::move(shape), std::move(v), true);
}

Tensor orthogonal(std::size_t n, Rng& rng) {
  Eigen::MatrixXd a(n, n);
  for (Eigen::Index i = 0; i < a.rows(); ++i)
    for (Eigen::Index j = 0; j < a.cols(); ++j) a(i, j) = rng.normal();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(a);
  Eigen::MatrixXd q = qr.householderQ();
  // Sign fix so the distribution is uniform over orthogonal matrices.
  const Eigen::MatrixXd r = qr.matrixQR().triangularView<Eigen::Upper>();
  for (Eigen::Index j = 0; j < q.cols(); ++j) {
    if (r(j, j) < 0) q.col(j) *= -1.0;
  }
  std::vector<double> v(n * n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < n; ++j) v[i * n + j] = q(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j));
  return Tensor::from_data({n, n}, std::move(v), true);
}

// --- Dense -------------------------------------------------------------------

Dense::Dense(std::size_t in, std::size_t out, Activation act, Rng& rng)
    : weights_(glorot_uniform(in, out, rng, {in, out})), bias_(Tensor::zeros({out}, true)), act_(act) {}

Dense::Dense(Tensor weights, Tensor bias, Activation act)
    : weights_(std::move(weights)), bias_(std::move(bias)), act_(act) {
  if (weights_.rank() != 2 || bias_.shape() != Shape{weights_.dim(1)}) {
    throw ShapeError("dense: weights " + shape_to_string(weights_.shape()) + " inconsistent with bias " +
                     shape_to_string(bias_.shape()));
  }
}

Tensor Dense::forward(const Tensor& x, ForwardContext&) const {
  if (x.rank() == 0 || x.dim(-1) != in_features()) {
    throw ShapeError("dense: input " + shape_to_string(x.shape()) + " does not end in " +
                     std::to_string(in_features()));
  }
  const Tensor* input = &x;
  Tensor expanded;
  if (x.rank() == 1) {
    expanded = reshape(x, {1, x.dim(0)});
    input = &expanded;
  }
  Tensor y = mmf::activation(add(matmul(*input, weights_), bias_), act_);
  return x.rank() == 1 ? reshape(y, {out_features()}) : y;
}

void Dense::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".weight", weights_});
  out.push_back({prefix + ".bias", bias_});
}

// --- Conv1D ------------------------------------------------------------------

Conv1D::Conv1D(std::size_t in_channels, std::size_t filters, std::size_t width, std::size_t stride, Activation act,
               Rng& rng)
    : kernels_(glorot_uniform(width * in_channels, width * filters, rng, {width, in_channels, filters})),
      bias_(Tensor::zeros({filters}, true)),
      stride_(stride),
      act_(act) {
  if (width == 0 || stride == 0 || filters == 0 || in_channels == 0) {
    throw std::invalid_argument("conv1d layer: width, stride, filters and channels must be positive");
  }
}

Tensor Conv1D::forward(const Tensor& x, ForwardContext&) const {
  return activation(conv1d(x, kernels_, bias_, stride_), act_);
}

void Conv1D::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".kernel", kernels_});
  out.push_back({prefix + ".bias", bias_});
}

// --- Dropout -----------------------------------------------------------------

Dropout::Dropout(double rate) : rate_(rate) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
}

Tensor Dropout::forward(const Tensor& x, ForwardContext& ctx) const {
  if (!ctx.training || rate_ == 0.0) return x;
  return dropout(x, rate_, true, ctx.random());
}

// --- Recurrent ---------------------------------------------------------------

namespace {

GateParams make_gate(std::size_t features, std::size_t units, double bias_value, Rng& rng) {
  GateParams g;
  g.input_weights = glorot_uniform(features, units, rng, {features, units});
  g.recurrent_weights = orthogonal(units, rng);
  g.bias = Tensor::full({units}, bias_value, true);
  return g;
}

struct SequenceView {
  Tensor batched;  // [B x T x F]
  bool was_batched;
};

SequenceView as_batched(const Tensor& x, std::size_t features, const char* who) {
  if (x.rank() == 2) {
    if (x.dim(1) != features) throw ShapeError(std::string(who) + ": feature width mismatch " + shape_to_string(x.shape()));
    if (x.dim(0) == 0) throw ShapeError(std::string(who) + ": empty sequence");
    return {reshape(x, {1, x.dim(0), x.dim(1)}), false};
  }
  if (x.rank() == 3) {
    if (x.dim(2) != features) throw ShapeError(std::string(who) + ": feature width mismatch " + shape_to_string(x.shape()));
    if (x.dim(1) == 0) throw ShapeError(std::string(who) + ": empty sequence");
    return {x, true};
  }
  throw ShapeError(std::string(who) + ": expected [time x features] or [batch x time x features]");
}

Tensor time_step(const Tensor& projected, std::size_t t) {
  const std::size_t batch = projected.dim(0), width = projected.dim(2);
  return reshape(slice(projected, 1, t, 1), {batch, width});
}

Tensor finish_sequence(std::vector<Tensor>& steps, bool was_batched) {
  Tensor out = stack(steps, 1);
  if (!was_batched) return reshape(out, {out.dim(1), out.dim(2)});
  return out;
}

}  // namespace

void GateParams::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".input_weight", input_weights});
  out.push_back({prefix + ".recurrent_weight", recurrent_weights});
  out.push_back({prefix + ".bias", bias});
}

LSTM::LSTM(std::size_t features, std::size_t units, Rng& rng)
    : input_gate(make_gate(features, units, 0.0, rng)),
      forget_gate(make_gate(features, units, 1.0, rng)),
      cell_gate(make_gate(features, units, 0.0, rng)),
      output_gate(make_gate(features, units, 0.0, rng)),
      units_(units) {}

Tensor LSTM::forward(const Tensor& x, ForwardContext&) const {
  const auto seq = as_batched(x, input_gate.input_weights.dim(0), "lstm");
  const std::size_t batch = seq.batched.dim(0), time = seq.batched.dim(1);
  auto project = [&](const GateParams& g) { return add(matmul(seq.batched, g.input_weights), g.bias); };
  const Tensor xi = project(input_gate), xf = project(forget_gate), xg = project(cell_gate), xo = project(output_gate);

  Tensor h = Tensor::zeros({batch, units_});
  Tensor c = Tensor::zeros({batch, units_});
  std::vector<Tensor> outputs;
  outputs.reserve(time);
  for (std::size_t t = 0; t < time; ++t) {
    const Tensor i = sigmoid(add(time_step(xi, t), matmul(h, input_gate.recurrent_weights)));
    const Tensor f = sigmoid(add(time_step(xf, t), matmul(h, forget_gate.recurrent_weights)));
    const Tensor g = mmf::tanh(add(time_step(xg, t), matmul(h, cell_gate.recurrent_weights)));
    const Tensor o = sigmoid(add(time_step(xo, t), matmul(h, output_gate.recurrent_weights)));
    c = add(mul(f, c), mul(i, g));
    h = mul(o, mmf::tanh(c));
    outputs.push_back(h);
  }
  return finish_sequence(outputs, seq.was_batched);
}

void LSTM::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  input_gate.collect(prefix + ".input", out);
  forget_gate.collect(prefix + ".forget", out);
  cell_gate.collect(prefix + ".cell", out);
  output_gate.collect(prefix + ".output", out);
}

GRU::GRU(std::size_t features, std::size_t units, Rng& rng)
    : update_gate(make_gate(features, units, 0.0, rng)),
      reset_gate(make_gate(features, units, 0.0, rng)),
      candidate(make_gate(features, units, 0.0, rng)),
      units_(units) {}

Tensor GRU::forward(const Tensor& x, ForwardContext&) const {
  const auto seq = as_batched(x, update_gate.input_weights.dim(0), "gru");
  const std::size_t batch = seq.batched.dim(0), time = seq.batched.dim(1);
  auto project = [&](const GateParams& g) { return add(matmul(seq.batched, g.input_weights), g.bias); };
  const Tensor xz = project(update_gate), xr = project(reset_gate), xc = project(candidate);

  Tensor h = Tensor::zeros({batch, units_});
  std::vector<Tensor> outputs;
  outputs.reserve(time);
  for (std::size_t t = 0; t < time; ++t) {
    const Tensor z = sigmoid(add(time_step(xz, t), matmul(h, update_gate.recurrent_weights)));
    const Tensor r = sigmoid(add(time_step(xr, t), matmul(h, reset_gate.recurrent_weights)));
    const Tensor cand = mmf::tanh(add(time_step(xc, t), matmul(mul(r, h), candidate.recurrent_weights)));
    // (1 - z) * h + z * cand
    h = add(h, mul(z, sub(cand, h)));
    outputs.push_back(h);
  }
  return finish_sequence(outputs, seq.was_batched);
}

void GRU::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  update_gate.collect(prefix + ".update", out);
  reset_gate.collect(prefix + ".reset", out);
  candidate.collect(prefix + ".candidate", out);
}

// --- Attention ---------------------------------------------------------------

AttentionHead::AttentionHead(std::size_t model_dim, std::size_t head_dim, Rng& rng)
    : AttentionHead(model_dim, model_dim, model_dim, head_dim, rng) {}

AttentionHead::AttentionHead(std::size_t query_dim, std::size_t key_dim, std::size_t value_dim, std::size_t head_dim,
                             Rng& rng)
    : w_q(glorot_uniform(query_dim, head_dim, rng, {query_dim, head_dim})),
      w_k(glorot_uniform(key_dim, head_dim, rng, {key_dim, head_dim})),
      w_v(glorot_uniform(value_dim, head_dim, rng, {value_dim, head_dim})) {}

void AttentionHead::collect(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".query", w_q});
  out.push_back({prefix + ".key", w_k});
  out.push_back({prefix + ".value", w_v});
}

AttentionResult scaled_dot_product_attention(const Tensor& q, const Tensor& k, const Tensor& v,
                                             std::span<const double> key_mask) {
  if (q.rank() != k.rank() || q.rank() != v.rank() || (q.rank() != 2 && q.rank() != 3)) {
    throw ShapeError("attention: q, k, v must all be [t x d] or [batch x t x d]");
  }
  if (q.dim(-1) != k.dim(-1)) {
    throw ShapeError("attention: query width " + std::to_string(q.dim(-1)) + " differs from key width " +
                     std::to_string(k.dim(-1)));
  }
  if (k.dim(-2) != v.dim(-2)) {
    throw ShapeError("attention: " + std::to_string(k.dim(-2)) + " keys but " + std::to_string(v.dim(-2)) + " values");
  }
  if (q.dim(-2) == 0 || k.dim(-2) == 0) throw ShapeError("attention: empty sequence");
  const bool batched = q.rank() == 3;
  const Tensor q3 = batched ? q : reshape(q, {1, q.dim(0), q.dim(1)});
  const Tensor k3 = batched ? k : reshape(k, {1, k.dim(0), k.dim(1)});
  const Tensor v3 = batched ? v : reshape(v, {1, v.dim(0), v.dim(1)});
  const std::size_t batch = q3.dim(0), tq = q3.dim(1), tk = k3.dim(1);
  if (k3.dim(0) != batch || v3.dim(0) != batch) throw ShapeError("attention: batch sizes differ");

  const double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(q.dim(-1)));
  Tensor scores = scale(matmul(q3, transpose(k3)), inv_sqrt_dk);
  if (!key_mask.empty()) {
    if (key_mask.size() != batch * tk) throw ShapeError("attention: key mask size does not match batch x t_k");
    std::vector<double> penalty(batch * tq * tk);
    for (std::size_t b = 0; b < batch; ++b)
      for (std::size_t i = 0; i < tq; ++i)
        for (std::size_t j = 0; j < tk; ++j) penalty[(b * tq + i) * tk + j] = key_mask[b * tk + j] > 0.0 ? 0.0 : -1e9;
    scores = add(scores, Tensor::from_data({batch, tq, tk}, std::move(penalty)));
  }
  Tensor weights = softmax(scores);
  Tensor out = matmul(weights, v3);
  if (!batched) {
    out = reshape(out, {tq, out.dim(2)});
    weights = reshape(weights, {tq, tk});
  }
  return {out, weights};
}

AttentionResult self_attention(const AttentionHead& head, const Tensor& sequence, std::span<const double> key_mask) {
  return scaled_dot_product_attention(matmul(sequence, head.w_q), matmul(sequence, head.w_k),
                                      matmul(sequence, head.w_v), key_mask);
}

std::string_view cross_attention_form_name(CrossAttentionForm form) {
  return form == CrossAttentionForm::kStandard ? "standard" : "qv_from_a";
}

CrossAttentionForm parse_cross_attention_form(std::string_view name) {
  if (name == "standard") return CrossAttentionForm::kStandard;
  if (name == "qv_from_a") return CrossAttentionForm::kQueryValueFromA;
  throw std::invalid_argument("unknown cross-attention form '" + std::string(name) + "'");
}

AttentionResult cross_attention(const AttentionHead& head, const Tensor& modality_a, const Tensor& modality_b,
                                CrossAttentionForm form, std::span<const double> key_mask_b) {
  if (modality_a.rank() < 2 || modality_b.rank() < 2 || modality_a.dim(-2) == 0 || modality_b.dim(-2) == 0) {
    throw ShapeError("cross_attention: both modalities must be non-empty sequences");
  }
  const Tensor q = matmul(modality_a, head.w_q);
  const Tensor k = matmul(modality_b, head.w_k);
  if (form == CrossAttentionForm::kStandard) {
    return scaled_dot_product_attention(q, k, matmul(modality_b, head.w_v), key_mask_b);
  }
  if (modality_a.dim(-2) != modality_b.dim(-2)) {
    throw ShapeError("cross_attention: qv_from_a form needs equal sequence lengths, got " +
                     std::to_string(modality_a.dim(-2)) + " and " + std::to_string(modality_b.dim(-2)));
  }
  return scaled_dot_product_attention(q, k, matmul(modality_a, head.w_v), key_mask_b);
}

Tensor positional_encoding(std::size_t time, std::size_t dim) {
  if (dim == 0 || dim % 2 != 0) throw std::invalid_argument("positional_encoding: dim must be even and positive");
  std::vector<double> v(time * dim);
  for (std::size_t p = 0; p < time; ++p) {
    for (std::size_t i = 0; i < dim / 2; ++i) {
      const double angle =
          static_cast<double>(p) / std::pow(10000.0, static_cast<double>(2 * i) / static_cast<double>(dim));
      v[p * dim + 2 * i] = std::sin(angle);
      v[p * dim + 2 * i + 1] = std::cos(angle);
    }
  }
  return Tensor::from_data({time, dim}, std::move(v));
}

// --- Embedding ---------------------------------------------------------------

Embedding::Embedding(std::size_t vocab, std::size_t dim, Rng& rng) {
  std::vector<double> v(vocab * dim);
  for (auto& x : v) x = rng.uniform(-0.05, 0.05);
  table_ = Tensor::from_data({vocab, dim}, std::move(v), true);
}

Tensor Embedding::forward(std::span<const std::int32_t> ids, std::size_t batch, std::size_t length) const {
  return embedding_lookup(table_, ids, batch, length);
}

void Embedding::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  out.push_back({prefix + ".table", table_});
}

// --- Transformer encoder -----------------------------------------------------

namespace {

std::vector<AttentionHead> make_heads(std::size_t dim, std::size_t heads, Rng& rng) {
  if (heads == 0 || dim % heads != 0) {
    throw std::invalid_argument("transformer encoder: dim " + std::to_string(dim) + " not divisible by " +
                                std::to_string(heads) + " heads");
  }
  std::vector<AttentionHead> out;
  for (std::size_t h = 0; h < heads; ++h) out.emplace_back(dim, dim / heads, rng);
  return out;
}

}  // namespace

TransformerEncoderBlock::TransformerEncoderBlock(std::size_t dim, std::size_t num_heads, std::size_t ff_dim, Rng& rng)
    : heads(make_heads(dim, num_heads, rng)),
      output_projection(dim, dim, Activation::kNone, rng),
      norm1_gain(Tensor::full({dim}, 1.0, true)),
      norm1_bias(Tensor::zeros({dim}, true)),
      feed_forward1(dim, ff_dim, Activation::kRelu, rng),
      feed_forward2(ff_dim, dim, Activation::kNone, rng),
      norm2_gain(Tensor::full({dim}, 1.0, true)),
      norm2_bias(Tensor::zeros({dim}, true)) {}

Tensor TransformerEncoderBlock::forward(const Tensor& x, std::span<const double> key_mask) const {
  ForwardContext ctx;
  Tensor attended;
  if (heads.size() == 1) {
    attended = self_attention(heads[0], x, key_mask).output;
  } else {
    std::vector<Tensor> parts;
    parts.reserve(heads.size());
    for (const auto& h : heads) parts.push_back(self_attention(h, x, key_mask).output);
    attended = concat(parts, -1);
  }
  const Tensor h1 = layer_norm(add(x, output_projection.forward(attended, ctx)), norm1_gain, norm1_bias, kNormEpsilon);
  const Tensor ff = feed_forward2.forward(feed_forward1.forward(h1, ctx), ctx);
  return layer_norm(add(h1, ff), norm2_gain, norm2_bias, kNormEpsilon);
}

void TransformerEncoderBlock::collect_parameters(const std::string& prefix, std::vector<NamedTensor>& out) const {
  for (std::size_t h = 0; h < heads.size(); ++h) heads[h].collect(prefix + ".head" + std::to_string(h), out);
  output_projection.collect_parameters(prefix + ".attn_out", out);
  out.push_back({prefix + ".norm1.gain", norm1_gain});
  out.push_back({prefix + ".norm1.bias", norm1_bias});
  feed_forward1.collect_parameters(prefix + ".ff1", out);
  feed_forward2.collect_parameters(prefix + ".ff2", out);
  out.push_back({prefix + ".norm2.gain", norm2_gain});
  out.push_back({prefix + ".norm2.bias", norm2_bias});
}

}  // namespace mmf
