// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/ops.hpp"

#include "mmfusion/gradcheck.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <string>

namespace mmf {

namespace {

using detail::make_result;
using detail::Node;
using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;
using StridedCMap = Eigen::Map<const RowMat, 0, Eigen::OuterStride<>>;

// Grad buffer of parent i, or nullptr when that parent is not tracked.
double* parent_grad(Node& self, std::size_t i) {
  Node& p = *self.parents[i];
  if (!p.requires_grad) return nullptr;
  p.ensure_grad();
  return p.grad.data();
}

const double* parent_data(Node& self, std::size_t i) { return self.parents[i]->data.data(); }

std::size_t normalize_axis(int axis, std::size_t rank, const char* op) {
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) {
    throw ShapeError(std::string(op) + ": axis " + std::to_string(axis) + " out of range for rank " +
                     std::to_string(rank));
  }
  return static_cast<std::size_t>(a);
}

// Returns the broadcast block size (numel of b) after validating b is a suffix of a.
std::size_t broadcast_inner(const Tensor& a, const Tensor& b, const char* op) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  bool ok = sb.size() <= sa.size();
  for (std::size_t i = 0; ok && i < sb.size(); ++i) ok = sb[sb.size() - 1 - i] == sa[sa.size() - 1 - i];
  if (!ok) {
    throw ShapeError(std::string(op) + ": shape " + shape_to_string(sb) + " does not broadcast to " +
                     shape_to_string(sa));
  }
  return b.size();
}

struct SeqDims {
  std::size_t batch, time, channels;
  bool batched;
};

SeqDims seq_dims(const Tensor& x, const char* op) {
  if (x.rank() == 2) return {1, x.dim(0), x.dim(1), false};
  if (x.rank() == 3) return {x.dim(0), x.dim(1), x.dim(2), true};
  throw ShapeError(std::string(op) + ": expected [time x channels] or [batch x time x channels], got " +
                   shape_to_string(x.shape()));
}

Shape seq_shape(const SeqDims& d, std::size_t time, std::size_t channels) {
  if (d.batched) return {d.batch, time, channels};
  return {time, channels};
}

}  // namespace

std::string_view activation_name(Activation kind) {
  switch (kind) {
    case Activation::kNone: return "none";
    case Activation::kRelu: return "relu";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kTanh: return "tanh";
    case Activation::kSoftmax: return "softmax";
  }
  return "none";
}

Activation parse_activation(std::string_view name) {
  for (auto k : {Activation::kNone, Activation::kRelu, Activation::kSigmoid, Activation::kTanh, Activation::kSoftmax}) {
    if (activation_name(k) == name) return k;
  }
  throw std::invalid_argument("unknown activation '" + std::string(name) + "'");
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  const auto& sa = a.shape();
  const auto& sb = b.shape();
  auto mismatch = [&] {
    return ShapeError("matmul: incompatible shapes " + shape_to_string(sa) + " and " + shape_to_string(sb));
  };
  if (sa.size() < 2 || sb.size() < 2 || sb.size() > 3) throw mismatch();
  const std::size_t k = sa.back();

  if (sb.size() == 2) {
    if (sb[0] != k) throw mismatch();
    const std::size_t n = sb[1];
    const std::size_t m = a.size() / k;
    std::vector<double> out(m * n);
    MapMat(out.data(), m, n).noalias() = CMapMat(a.data().data(), m, k) * CMapMat(b.data().data(), k, n);
    Shape shape(sa.begin(), sa.end() - 1);
    shape.push_back(n);
    return make_result(std::move(shape), std::move(out), {a, b}, [m, k, n](Node& self) {
      CMapMat dc(self.grad.data(), m, n);
      if (double* ga = parent_grad(self, 0)) {
        MapMat(ga, m, k).noalias() += dc * CMapMat(parent_data(self, 1), k, n).transpose();
      }
      if (double* gb = parent_grad(self, 1)) {
        MapMat(gb, k, n).noalias() += CMapMat(parent_data(self, 0), m, k).transpose() * dc;
      }
    });
  }

  if (sa.size() != 3 || sa[0] != sb[0] || sb[1] != k) throw mismatch();
  const std::size_t batch = sa[0], m = sa[1], n = sb[2];
  std::vector<double> out(batch * m * n);
  for (std::size_t i = 0; i < batch; ++i) {
    MapMat(out.data() + i * m * n, m, n).noalias() =
        CMapMat(a.data().data() + i * m * k, m, k) * CMapMat(b.data().data() + i * k * n, k, n);
  }
  return make_result({batch, m, n}, std::move(out), {a, b}, [batch, m, k, n](Node& self) {
    double* ga = parent_grad(self, 0);
    double* gb = parent_grad(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      CMapMat dc(self.grad.data() + i * m * n, m, n);
      if (ga) MapMat(ga + i * m * k, m, k).noalias() += dc * CMapMat(parent_data(self, 1) + i * k * n, k, n).transpose();
      if (gb) MapMat(gb + i * k * n, k, n).noalias() += CMapMat(parent_data(self, 0) + i * m * k, m, k).transpose() * dc;
    }
  });
}

Tensor transpose(const Tensor& x) {
  const auto& s = x.shape();
  if (s.size() < 2) throw ShapeError("transpose: rank >= 2 required, got " + shape_to_string(s));
  const std::size_t r = s[s.size() - 2], c = s.back();
  const std::size_t outer = x.size() / (r * c);
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < outer; ++o) {
    MapMat(out.data() + o * r * c, c, r) = CMapMat(x.data().data() + o * r * c, r, c).transpose();
  }
  Shape shape = s;
  std::swap(shape[shape.size() - 2], shape[shape.size() - 1]);
  return make_result(std::move(shape), std::move(out), {x}, [outer, r, c](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t o = 0; o < outer; ++o) {
      MapMat(g + o * r * c, r, c) += CMapMat(self.grad.data() + o * r * c, c, r).transpose();
    }
  });
}

Tensor add(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner(a, b, "add");
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] + pb[i % inner];
  return make_result(a.shape(), std::move(out), {a, b}, [n, inner](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i % inner] += g[i];
    }
  });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner(a, b, "sub");
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] - pb[i % inner];
  return make_result(a.shape(), std::move(out), {a, b}, [n, inner](Node& self) {
    const double* g = self.grad.data();
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i % inner] -= g[i];
    }
  });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  const std::size_t inner = broadcast_inner(a, b, "mul");
  const std::size_t n = a.size();
  std::vector<double> out(n);
  const double* pa = a.data().data();
  const double* pb = b.data().data();
  for (std::size_t i = 0; i < n; ++i) out[i] = pa[i] * pb[i % inner];
  return make_result(a.shape(), std::move(out), {a, b}, [n, inner](Node& self) {
    const double* g = self.grad.data();
    const double* xa = parent_data(self, 0);
    const double* xb = parent_data(self, 1);
    if (double* ga = parent_grad(self, 0)) {
      for (std::size_t i = 0; i < n; ++i) ga[i] += g[i] * xb[i % inner];
    }
    if (double* gb = parent_grad(self, 1)) {
      for (std::size_t i = 0; i < n; ++i) gb[i % inner] += g[i] * xa[i];
    }
  });
}

Tensor scale(const Tensor& x, double factor) {
  std::vector<double> out(x.data().begin(), x.data().end());
  for (auto& v : out) v *= factor;
  return make_result(x.shape(), std::move(out), {x}, [factor](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += factor * self.grad[i];
  });
}

Tensor sum(const Tensor& x) {
  const auto d = x.data();
  const double total = std::accumulate(d.begin(), d.end(), 0.0);
  return make_result({}, {total}, {x}, [](Node& self) {
    double* g = parent_grad(self, 0);
    const std::size_t n = self.parents[0]->data.size();
    for (std::size_t i = 0; i < n; ++i) g[i] += self.grad[0];
  });
}

Tensor mean(const Tensor& x) {
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(x.size()));
}

Tensor reshape(const Tensor& x, Shape shape) {
  if (shape_numel(shape) != x.size()) {
    throw ShapeError("reshape: cannot view " + shape_to_string(x.shape()) + " as " + shape_to_string(shape));
  }
  std::vector<double> out(x.data().begin(), x.data().end());
  return make_result(std::move(shape), std::move(out), {x}, [](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < self.grad.size(); ++i) g[i] += self.grad[i];
  });
}

Tensor activation(const Tensor& x, Activation kind) {
  const auto in = x.data();
  const std::size_t n = in.size();
  std::vector<double> out(n);
  switch (kind) {
    case Activation::kNone:
      return x;
    case Activation::kRelu:
      for (std::size_t i = 0; i < n; ++i) out[i] = in[i] > 0.0 ? in[i] : 0.0;
      if (detail::kink_tracking_enabled()) {
        std::uint64_t bits = 0;
        for (std::size_t i = 0; i < n; ++i) {
          bits = (bits << 1) | (in[i] > 0.0 ? 1U : 0U);
          if (i % 64 == 63 || i + 1 == n) detail::record_kink_decision(bits);
        }
      }
      return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        double* g = parent_grad(self, 0);
        const double* xv = parent_data(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          if (xv[i] > 0.0) g[i] += self.grad[i];
        }
      });
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < n; ++i) {
        out[i] = in[i] >= 0.0 ? 1.0 / (1.0 + std::exp(-in[i])) : std::exp(in[i]) / (1.0 + std::exp(in[i]));
      }
      return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        double* g = parent_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double y = self.data[i];
          g[i] += self.grad[i] * y * (1.0 - y);
        }
      });
    case Activation::kTanh:
      for (std::size_t i = 0; i < n; ++i) out[i] = std::tanh(in[i]);
      return make_result(x.shape(), std::move(out), {x}, [](Node& self) {
        double* g = parent_grad(self, 0);
        for (std::size_t i = 0; i < self.grad.size(); ++i) {
          const double y = self.data[i];
          g[i] += self.grad[i] * (1.0 - y * y);
        }
      });
    case Activation::kSoftmax: {
      if (x.rank() == 0 || x.dim(-1) == 0) throw ShapeError("softmax: last dimension must be >= 1");
      const std::size_t width = x.dim(-1);
      const std::size_t rows = n / width;
      for (std::size_t r = 0; r < rows; ++r) {
        const double* row = in.data() + r * width;
        double* o = out.data() + r * width;
        const double mx = *std::max_element(row, row + width);
        double z = 0.0;
        for (std::size_t j = 0; j < width; ++j) z += (o[j] = std::exp(row[j] - mx));
        for (std::size_t j = 0; j < width; ++j) o[j] /= z;
      }
      return make_result(x.shape(), std::move(out), {x}, [rows, width](Node& self) {
        double* g = parent_grad(self, 0);
        for (std::size_t r = 0; r < rows; ++r) {
          const double* y = self.data.data() + r * width;
          const double* dy = self.grad.data() + r * width;
          double dot = 0.0;
          for (std::size_t j = 0; j < width; ++j) dot += dy[j] * y[j];
          for (std::size_t j = 0; j < width; ++j) g[r * width + j] += y[j] * (dy[j] - dot);
        }
      });
    }
  }
  return x;
}

Tensor concat(std::span<const Tensor> inputs, int axis) {
  if (inputs.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = inputs[0].shape();
  const std::size_t ax = normalize_axis(axis, first.size(), "concat");
  std::size_t total = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Shape& s = inputs[i].shape();
    bool ok = s.size() == first.size();
    for (std::size_t d = 0; ok && d < s.size(); ++d) ok = d == ax || s[d] == first[d];
    if (!ok) {
      throw ShapeError("concat: input " + std::to_string(i) + " has shape " + shape_to_string(s) +
                       ", incompatible with input 0 shape " + shape_to_string(first) + " along axis " +
                       std::to_string(ax));
    }
    total += s[ax];
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= first[d];
  for (std::size_t d = ax + 1; d < first.size(); ++d) inner *= first[d];

  Shape shape = first;
  shape[ax] = total;
  std::vector<double> out(shape_numel(shape));
  std::vector<std::size_t> widths;
  widths.reserve(inputs.size());
  for (const auto& t : inputs) widths.push_back(t.dim(static_cast<int>(ax)) * inner);
  const std::size_t row = total * inner;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const double* src = inputs[i].data().data();
    for (std::size_t o = 0; o < outer; ++o) {
      std::copy_n(src + o * widths[i], widths[i], out.data() + o * row + offset);
    }
    offset += widths[i];
  }
  std::vector<Tensor> parents(inputs.begin(), inputs.end());
  return make_result(std::move(shape), std::move(out), std::move(parents),
                     [outer, row, widths = std::move(widths)](Node& self) {
                       std::size_t off = 0;
                       for (std::size_t i = 0; i < widths.size(); ++i) {
                         if (double* g = parent_grad(self, i)) {
                           for (std::size_t o = 0; o < outer; ++o) {
                             const double* src = self.grad.data() + o * row + off;
                             for (std::size_t j = 0; j < widths[i]; ++j) g[o * widths[i] + j] += src[j];
                           }
                         }
                         off += widths[i];
                       }
                     });
}

Tensor slice(const Tensor& x, int axis, std::size_t start, std::size_t length) {
  const Shape& s = x.shape();
  const std::size_t ax = normalize_axis(axis, s.size(), "slice");
  if (start + length > s[ax]) {
    throw ShapeError("slice: range [" + std::to_string(start) + ", " + std::to_string(start + length) +
                     ") exceeds axis size " + std::to_string(s[ax]));
  }
  std::size_t outer = 1, inner = 1;
  for (std::size_t d = 0; d < ax; ++d) outer *= s[d];
  for (std::size_t d = ax + 1; d < s.size(); ++d) inner *= s[d];
  const std::size_t src_row = s[ax] * inner;
  const std::size_t dst_row = length * inner;
  const std::size_t off = start * inner;
  Shape shape = s;
  shape[ax] = length;
  std::vector<double> out(outer * dst_row);
  const double* src = x.data().data();
  for (std::size_t o = 0; o < outer; ++o) std::copy_n(src + o * src_row + off, dst_row, out.data() + o * dst_row);
  return make_result(std::move(shape), std::move(out), {x}, [outer, src_row, dst_row, off](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t o = 0; o < outer; ++o) {
      for (std::size_t j = 0; j < dst_row; ++j) g[o * src_row + off + j] += self.grad[o * dst_row + j];
    }
  });
}

Tensor stack(std::span<const Tensor> inputs, int axis) {
  if (inputs.empty()) throw ShapeError("stack: no inputs");
  const std::size_t rank = inputs[0].rank() + 1;
  const int r = static_cast<int>(rank);
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ShapeError("stack: axis out of range");
  std::vector<Tensor> expanded;
  expanded.reserve(inputs.size());
  for (const auto& t : inputs) {
    Shape s = t.shape();
    s.insert(s.begin() + a, 1);
    expanded.push_back(reshape(t, std::move(s)));
  }
  return concat(expanded, a);
}

Tensor conv1d(const Tensor& input, const Tensor& kernels, const Tensor& bias, std::size_t stride) {
  const SeqDims d = seq_dims(input, "conv1d");
  if (kernels.rank() != 3 || kernels.dim(1) != d.channels || bias.rank() != 1 || bias.dim(0) != kernels.dim(2)) {
    throw ShapeError("conv1d: kernels " + shape_to_string(kernels.shape()) + " and bias " +
                     shape_to_string(bias.shape()) + " do not fit input " + shape_to_string(input.shape()));
  }
  if (stride == 0) throw std::invalid_argument("conv1d: stride must be positive");
  const std::size_t width = kernels.dim(0), filters = kernels.dim(2);
  if (d.time < width) {
    throw ShapeError("conv1d: input length " + std::to_string(d.time) + " shorter than kernel width " +
                     std::to_string(width));
  }
  const std::size_t out_t = (d.time - width) / stride + 1;
  const std::size_t patch = width * d.channels;
  std::vector<double> out(d.batch * out_t * filters);
  CMapMat k(kernels.data().data(), patch, filters);
  Eigen::Map<const Eigen::RowVectorXd> b(bias.data().data(), filters);
  for (std::size_t i = 0; i < d.batch; ++i) {
    StridedCMap patches(input.data().data() + i * d.time * d.channels, out_t, patch,
                        Eigen::OuterStride<>(static_cast<Eigen::Index>(stride * d.channels)));
    MapMat y(out.data() + i * out_t * filters, out_t, filters);
    y.noalias() = patches * k;
    y.rowwise() += b;
  }
  return make_result(seq_shape(d, out_t, filters), std::move(out), {input, kernels, bias},
                     [d, stride, out_t, patch, filters](Node& self) {
                       double* gx = parent_grad(self, 0);
                       double* gk = parent_grad(self, 1);
                       double* gb = parent_grad(self, 2);
                       const double* x = parent_data(self, 0);
                       CMapMat k(parent_data(self, 1), patch, filters);
                       RowMat dpatch;
                       const std::size_t step = stride * d.channels;
                       for (std::size_t i = 0; i < d.batch; ++i) {
                         CMapMat dy(self.grad.data() + i * out_t * filters, out_t, filters);
                         const std::size_t base = i * d.time * d.channels;
                         if (gk) {
                           StridedCMap patches(x + base, out_t, patch, Eigen::OuterStride<>(static_cast<Eigen::Index>(step)));
                           MapMat(gk, patch, filters).noalias() += patches.transpose() * dy;
                         }
                         if (gb) {
                           Eigen::Map<Eigen::RowVectorXd>(gb, filters) += dy.colwise().sum();
                         }
                         if (gx) {
                           dpatch.noalias() = dy * k.transpose();
                           for (std::size_t t = 0; t < out_t; ++t) {
                             double* dst = gx + base + t * step;
                             const double* src = dpatch.data() + t * patch;
                             for (std::size_t j = 0; j < patch; ++j) dst[j] += src[j];
                           }
                         }
                       }
                     });
}

Tensor max_pool1d(const Tensor& input, std::size_t window) {
  const SeqDims d = seq_dims(input, "max_pool1d");
  if (window == 0) throw std::invalid_argument("max_pool1d: window must be positive");
  if (window > d.time) {
    throw ShapeError("max_pool1d: window " + std::to_string(window) + " larger than input length " +
                     std::to_string(d.time));
  }
  const std::size_t out_t = d.time / window;
  const std::size_t c = d.channels;
  std::vector<double> out(d.batch * out_t * c);
  std::vector<std::size_t> argmax(out.size());
  const double* x = input.data().data();
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t t = 0; t < out_t; ++t) {
      for (std::size_t ch = 0; ch < c; ++ch) {
        std::size_t best = (b * d.time + t * window) * c + ch;
        for (std::size_t w = 1; w < window; ++w) {
          const std::size_t idx = (b * d.time + t * window + w) * c + ch;
          if (x[idx] > x[best]) best = idx;
        }
        const std::size_t o = (b * out_t + t) * c + ch;
        out[o] = x[best];
        argmax[o] = best;
      }
    }
  }
  if (detail::kink_tracking_enabled()) {
    for (auto idx : argmax) detail::record_kink_decision(idx);
  }
  return make_result(seq_shape(d, out_t, c), std::move(out), {input}, [argmax = std::move(argmax)](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t o = 0; o < argmax.size(); ++o) g[argmax[o]] += self.grad[o];
  });
}

Tensor global_avg_pool(const Tensor& input) {
  const SeqDims d = seq_dims(input, "global_avg_pool");
  if (d.time == 0) throw ShapeError("global_avg_pool: empty time axis");
  const std::size_t c = d.channels;
  std::vector<double> out(d.batch * c, 0.0);
  const double* x = input.data().data();
  const double inv = 1.0 / static_cast<double>(d.time);
  for (std::size_t b = 0; b < d.batch; ++b) {
    for (std::size_t t = 0; t < d.time; ++t) {
      for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] += x[(b * d.time + t) * c + ch];
    }
    for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] *= inv;
  }
  Shape shape = d.batched ? Shape{d.batch, c} : Shape{c};
  return make_result(std::move(shape), std::move(out), {input}, [d, c, inv](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t b = 0; b < d.batch; ++b) {
      for (std::size_t t = 0; t < d.time; ++t) {
        for (std::size_t ch = 0; ch < c; ++ch) g[(b * d.time + t) * c + ch] += inv * self.grad[b * c + ch];
      }
    }
  });
}

Tensor masked_mean_pool(const Tensor& input, std::span<const double> mask) {
  if (input.rank() != 3) throw ShapeError("masked_mean_pool: expected [batch x time x channels]");
  const std::size_t batch = input.dim(0), time = input.dim(1), c = input.dim(2);
  if (mask.size() != batch * time) throw ShapeError("masked_mean_pool: mask size does not match batch x time");
  std::vector<double> weights(batch * time);
  for (std::size_t b = 0; b < batch; ++b) {
    double count = 0.0;
    for (std::size_t t = 0; t < time; ++t) count += mask[b * time + t];
    for (std::size_t t = 0; t < time; ++t) weights[b * time + t] = count > 0.0 ? mask[b * time + t] / count : 0.0;
  }
  std::vector<double> out(batch * c, 0.0);
  const double* x = input.data().data();
  for (std::size_t b = 0; b < batch; ++b) {
    for (std::size_t t = 0; t < time; ++t) {
      const double w = weights[b * time + t];
      if (w == 0.0) continue;
      for (std::size_t ch = 0; ch < c; ++ch) out[b * c + ch] += w * x[(b * time + t) * c + ch];
    }
  }
  return make_result({batch, c}, std::move(out), {input}, [batch, time, c, weights = std::move(weights)](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t b = 0; b < batch; ++b) {
      for (std::size_t t = 0; t < time; ++t) {
        const double w = weights[b * time + t];
        for (std::size_t ch = 0; ch < c; ++ch) g[(b * time + t) * c + ch] += w * self.grad[b * c + ch];
      }
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids, std::size_t batch,
                        std::size_t length) {
  if (table.rank() != 2) throw ShapeError("embedding_lookup: table must be [vocab x dim]");
  if (ids.size() != batch * length) throw ShapeError("embedding_lookup: id count does not match batch x length");
  const std::size_t vocab = table.dim(0), dim = table.dim(1);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || static_cast<std::size_t>(ids[i]) >= vocab) {
      throw std::out_of_range("embedding_lookup: id " + std::to_string(ids[i]) + " at position " + std::to_string(i) +
                              " outside vocabulary of size " + std::to_string(vocab));
    }
  }
  std::vector<double> out(ids.size() * dim);
  const double* tab = table.data().data();
  for (std::size_t i = 0; i < ids.size(); ++i) {
    std::copy_n(tab + static_cast<std::size_t>(ids[i]) * dim, dim, out.data() + i * dim);
  }
  std::vector<std::int32_t> kept(ids.begin(), ids.end());
  return make_result({batch, length, dim}, std::move(out), {table}, [dim, kept = std::move(kept)](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < kept.size(); ++i) {
      double* row = g + static_cast<std::size_t>(kept[i]) * dim;
      for (std::size_t j = 0; j < dim; ++j) row[j] += self.grad[i * dim + j];
    }
  });
}

Tensor embedding_lookup(const Tensor& table, std::span<const std::int32_t> ids) {
  Tensor batched = embedding_lookup(table, ids, 1, ids.size());
  return reshape(batched, {ids.size(), table.dim(1)});
}

Tensor dropout(const Tensor& x, double rate, bool training, Rng& rng) {
  if (!(rate >= 0.0 && rate < 1.0)) throw std::invalid_argument("dropout: rate must lie in [0, 1)");
  if (!training || rate == 0.0) return x;
  const double keep_scale = 1.0 / (1.0 - rate);
  std::vector<double> factor(x.size());
  for (auto& f : factor) f = rng.uniform() < rate ? 0.0 : keep_scale;
  std::vector<double> out(x.size());
  const auto in = x.data();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = in[i] * factor[i];
  return make_result(x.shape(), std::move(out), {x}, [factor = std::move(factor)](Node& self) {
    double* g = parent_grad(self, 0);
    for (std::size_t i = 0; i < factor.size(); ++i) g[i] += factor[i] * self.grad[i];
  });
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double epsilon) {
  if (x.rank() == 0) throw ShapeError("layer_norm: scalar input");
  const std::size_t width = x.dim(-1);
  if (gain.shape() != Shape{width} || bias.shape() != Shape{width}) {
    throw ShapeError("layer_norm: gain/bias must be [" + std::to_string(width) + "]");
  }
  const std::size_t rows = x.size() / width;
  std::vector<double> out(x.size());
  std::vector<double> xhat(x.size());
  std::vector<double> inv_std(rows);
  const double* in = x.data().data();
  const double* gm = gain.data().data();
  const double* bt = bias.data().data();
  for (std::size_t r = 0; r < rows; ++r) {
    const double* row = in + r * width;
    double mu = 0.0;
    for (std::size_t j = 0; j < width; ++j) mu += row[j];
    mu /= static_cast<double>(width);
    double var = 0.0;
    for (std::size_t j = 0; j < width; ++j) var += (row[j] - mu) * (row[j] - mu);
    var /= static_cast<double>(width);
    inv_std[r] = 1.0 / std::sqrt(var + epsilon);
    for (std::size_t j = 0; j < width; ++j) {
      const std::size_t i = r * width + j;
      xhat[i] = (row[j] - mu) * inv_std[r];
      out[i] = gm[j] * xhat[i] + bt[j];
    }
  }
  return make_result(x.shape(), std::move(out), {x, gain, bias},
                     [rows, width, xhat = std::move(xhat), inv_std = std::move(inv_std)](Node& self) {
                       double* gx = parent_grad(self, 0);
                       double* gg = parent_grad(self, 1);
                       double* gbias = parent_grad(self, 2);
                       const double* gm = parent_data(self, 1);
                       const double w = static_cast<double>(width);
                       for (std::size_t r = 0; r < rows; ++r) {
                         const double* dy = self.grad.data() + r * width;
                         const double* xh = xhat.data() + r * width;
                         if (gg || gbias) {
                           for (std::size_t j = 0; j < width; ++j) {
                             if (gg) gg[j] += dy[j] * xh[j];
                             if (gbias) gbias[j] += dy[j];
                           }
                         }
                         if (gx) {
                           double mean_d = 0.0, mean_dx = 0.0;
                           for (std::size_t j = 0; j < width; ++j) {
                             const double dxh = dy[j] * gm[j];
                             mean_d += dxh;
                             mean_dx += dxh * xh[j];
                           }
                           mean_d /= w;
                           mean_dx /= w;
                           for (std::size_t j = 0; j < width; ++j) {
                             const double dxh = dy[j] * gm[j];
                             gx[r * width + j] += inv_std[r] * (dxh - mean_d - xh[j] * mean_dx);
                           }
                         }
                       }
                     });
}

Tensor cross_entropy_loss(const Tensor& logits, std::span<const int> labels) {
  if (logits.rank() != 2) throw ShapeError("cross_entropy_loss: logits must be [batch x classes]");
  const std::size_t batch = logits.dim(0), classes = logits.dim(1);
  if (labels.size() != batch) {
    throw ShapeError("cross_entropy_loss: " + std::to_string(labels.size()) + " labels for batch of " +
                     std::to_string(batch));
  }
  if (batch == 0) throw ShapeError("cross_entropy_loss: empty batch");
  const double* z = logits.data().data();
  std::vector<double> probs(batch * classes);
  double total = 0.0;
  for (std::size_t b = 0; b < batch; ++b) {
    if (labels[b] < 0 || static_cast<std::size_t>(labels[b]) >= classes) {
      throw std::out_of_range("cross_entropy_loss: label " + std::to_string(labels[b]) + " at row " +
                              std::to_string(b) + " outside [0, " + std::to_string(classes) + ")");
    }
    const double* row = z + b * classes;
    const double mx = *std::max_element(row, row + classes);
    double s = 0.0;
    for (std::size_t j = 0; j < classes; ++j) s += std::exp(row[j] - mx);
    const double lse = mx + std::log(s);
    for (std::size_t j = 0; j < classes; ++j) probs[b * classes + j] = std::exp(row[j] - lse);
    total += lse - row[labels[b]];
  }
  std::vector<int> kept(labels.begin(), labels.end());
  return make_result({}, {total / static_cast<double>(batch)}, {logits},
                     [batch, classes, probs = std::move(probs), kept = std::move(kept)](Node& self) {
                       double* g = parent_grad(self, 0);
                       const double f = self.grad[0] / static_cast<double>(batch);
                       for (std::size_t b = 0; b < batch; ++b) {
                         for (std::size_t j = 0; j < classes; ++j) {
                           const double target = static_cast<std::size_t>(kept[b]) == j ? 1.0 : 0.0;
                           g[b * classes + j] += f * (probs[b * classes + j] - target);
                         }
                       }
                     });
}

}  // namespace mmf
