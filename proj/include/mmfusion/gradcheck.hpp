// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_GRADCHECK_HPP
#define MMFUSION_GRADCHECK_HPP

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "mmfusion/tensor.hpp"

namespace mmf {

struct GradCheckResult {
  double max_relative_error = 0.0;
  std::vector<double> per_parameter_errors;  // one entry per checked scalar coordinate
  std::size_t rejected = 0;                  // coordinates skipped because a kink was crossed
};

enum class DifferenceStencil {
  kCentral2,  // (f(x+h) - f(x-h)) / 2h
  kCentral4,  // (8[f(x+h) - f(x-h)] - [f(x+2h) - f(x-2h)]) / 12h
  // Central differences at shrinking steps from `ridders_step`, extrapolated
  // to h -> 0 (Ridders). The large initial step keeps cancellation noise far
  // below gradients of order 1e-10.
  kRidders,
};

struct GradCheckOptions {
  // The fourth-order stencil tolerates a larger step, which keeps rounding
  // noise well below tiny gradients (recurrent gates see values near 1e-7).
  double epsilon = 1e-4;
  DifferenceStencil stencil = DifferenceStencil::kCentral4;
  double ridders_step = 1e-2;
  std::size_t max_samples = 0;  // 0 checks every coordinate
  std::uint64_t seed = 0;
  /// Skip coordinates whose perturbation flips a ReLU mask or max-pool argmax.
  bool reject_kinks = true;
};

/// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

/// Central-difference gradient check of a scalar loss with respect to `params`.
/// `loss` must rebuild the graph deterministically on every call.
GradCheckResult grad_check(const std::function<Tensor()>& loss, std::span<const NamedTensor> params,
                           const GradCheckOptions& options = {});

namespace detail {

/// While alive, ReLU and max-pool ops fold their branch decisions into a signature
/// so perturbations that cross a non-differentiable point can be detected.
class KinkTracker {
 public:
  KinkTracker();
  ~KinkTracker();
  KinkTracker(const KinkTracker&) = delete;
  KinkTracker& operator=(const KinkTracker&) = delete;

  void reset();
  std::uint64_t signature() const;
};

bool kink_tracking_enabled();
void record_kink_decision(std::uint64_t value);

}  // namespace detail

}  // namespace mmf

#endif  // MMFUSION_GRADCHECK_HPP
