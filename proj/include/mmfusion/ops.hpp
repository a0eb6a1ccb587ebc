// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_OPS_HPP
#define MMFUSION_OPS_HPP

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "mmfusion/rng.hpp"
#include "mmfusion/tensor.hpp"

namespace mmf {

enum class Activation { kNone, kRelu, kSigmoid, kTanh, kSoftmax };

std::string_view activation_name(Activation kind);
Activation parse_activation(std::string_view name);

// Every op below records a backward recipe when any input requires grad.
// Sequence ops accept [time x channels] or a batched [batch x time x channels].

/// [m,k]x[k,n], [B,m,k]x[k,n] (shared right operand) or [B,m,k]x[B,k,n].
Tensor matmul(const Tensor& a, const Tensor& b);
/// Swaps the last two axes.
Tensor transpose(const Tensor& x);

/// Elementwise ops. `b` must have a's shape or equal a trailing suffix of it
/// (broadcast over the leading axes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double factor);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor activation(const Tensor& x, Activation kind);
inline Tensor relu(const Tensor& x) { return activation(x, Activation::kRelu); }
inline Tensor sigmoid(const Tensor& x) { return activation(x, Activation::kSigmoid); }
inline Tensor tanh(const Tensor& x) { return activation(x, Activation::kTanh); }
inline Tensor softmax(const Tensor& x) { return activation(x, Activation::kSoftmax); }

/// Negative axes count from the back.
Tensor concat(std::span<const Tensor> inputs, int axis);
Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length);
/// Inserts a new axis at `axis` and concatenates along it.
Tensor stack(std::span<const Tensor> inputs, int axis);

/// Valid-padding cross-correlation. kernels: [width x channels x filters].
Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride = 1);
/// Non-overlapping windows, trailing remainder dropped, ties to the earliest index.
Tensor max_pool1d(const Tensor& input, std::size_t window);
/// Mean over the time axis: [T,C] -> [C], [B,T,C] -> [B,C].
Tensor global_avg_pool(const Tensor& input);
/// Mean over time of [B,T,C] weighting each step by mask[b*T+t] (0 or 1).
/// Rows with an all-zero mask produce zeros.
Tensor masked_mean_pool(const Tensor& input, std::span<const double> mask);

/// ids of length L -> [L x dim].
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids);
/// `ids` holds batch*length ids row-major -> [batch x length x dim].
Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids, std::size_t batch,
                        std::size_t length);

/// Inverted dropout. Identity when training is false or rate is 0.
Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng);

/// Normalizes over the last axis, then applies gain and bias of that width.
Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon = 1e-5);

/// Mean softmax cross-entropy. labels are 0-based class indices.
Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels);

}  // namespace mmf

#endif  // MMFUSION_OPS_HPP
