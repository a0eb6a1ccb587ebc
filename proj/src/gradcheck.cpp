// SPDX-License-Identifier: Apache-2.0
#include "mmfusion/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <optional>

#include "mmfusion/rng.hpp"

namespace mmf {

namespace detail {

namespace {
thread_local int g_tracking_depth = 0;
thread_local std::uint64_t g_signature = 0;
}  // namespace

KinkTracker::KinkTracker() {
  ++g_tracking_depth;
  g_signature = 0;
}

KinkTracker::~KinkTracker() { --g_tracking_depth; }

void KinkTracker::reset() { g_signature = 0; }

std::uint64_t KinkTracker::signature() const { return g_signature; }

bool kink_tracking_enabled() { return g_tracking_depth > 0; }

void record_kink_decision(std::uint64_t value) {
  // FNV-1a style fold; order-sensitive.
  g_signature ^= value + 0x9E3779B97F4A7C15ULL + (g_signature << 6) + (g_signature >> 2);
  g_signature *= 0x100000001B3ULL;
}

}  // namespace detail

namespace {

struct Extrapolated {
  double value;
  double error;  // tableau estimate plus a rounding floor
};

// Ridders' extrapolation of central differences. A step whose evaluations cross
// a kink restarts the tableau at the next smaller step; nullopt if no clean
// step remains.
template <class Eval>
std::optional<Extrapolated> ridders_from(Eval& eval, double x, double h, double f_scale, bool& kinked,
                                         bool honor_kinks) {
  constexpr int kSteps = 16, kTable = 10;
  constexpr double kShrink = 1.4, kShrink2 = kShrink * kShrink, kSafe = 2.0;
  double table[kTable][kTable];
  int col = 0;
  double best = 0.0, best_err = std::numeric_limits<double>::infinity(), best_h = h;
  bool found = false;
  for (int step = 0; step < kSteps; ++step, h /= kShrink) {
    kinked = false;
    const double d = (eval(x + h) - eval(x - h)) / (2.0 * h);
    if (kinked && honor_kinks) {
      col = 0;
      best_err = std::numeric_limits<double>::infinity();
      found = false;
      continue;
    }
    table[0][col] = d;
    if (!found && col == 0) best = d;
    double fac = kShrink2;
    for (int j = 1; j <= col; ++j) {
      table[j][col] = (table[j - 1][col] * fac - table[j - 1][col - 1]) / (fac - 1.0);
      fac *= kShrink2;
      const double e = std::max(std::abs(table[j][col] - table[j - 1][col]), std::abs(table[j][col] - table[j - 1][col - 1]));
      if (e <= best_err) {
        best_err = e;
        best = table[j][col];
        best_h = h;
        found = true;
      }
    }
    if (col > 0 && std::abs(table[col][col] - table[col - 1][col - 1]) >= kSafe * best_err) break;
    if (++col == kTable) break;
  }
  kinked = false;
  if (!found) return std::nullopt;
  // Differences of 1e-16 f are noise; the tableau cannot see that once
  // neighbouring columns quantize to the same value.
  const double rounding = 4.0 * std::numeric_limits<double>::epsilon() * f_scale / best_h;
  return Extrapolated{best, best_err + rounding};
}

// The initial step must sit inside the region where f is smooth; sharply
// curved spots (near-constant LayerNorm rows) need much smaller steps than the
// rest. Try a few decades and keep the estimate the tableau trusts most.
template <class Eval>
std::optional<double> ridders(Eval& eval, double x, double h, double f_scale, bool& kinked, bool honor_kinks) {
  std::optional<Extrapolated> best;
  for (int decade = 0; decade < 3; ++decade, h /= 10.0) {
    const auto r = ridders_from(eval, x, h, f_scale, kinked, honor_kinks);
    if (r && (!best || r->error < best->error)) best = r;
  }
  if (!best) return std::nullopt;
  return best->value;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

GradCheckResult grad_check(const std::function<Tensor()>& loss, std::span<const NamedTensor> params,
                           const GradCheckOptions& options) {
  if (!(options.epsilon > 0.0)) throw std::invalid_argument("grad_check: epsilon must be positive");

  zero_grads(params);
  Tensor base = loss();
  base.backward();
  const double f_scale = std::max(std::abs(base.item()), 1.0);

  struct Coord {
    std::size_t param, index;
  };
  std::vector<Coord> coords;
  for (std::size_t p = 0; p < params.size(); ++p) {
    for (std::size_t i = 0; i < params[p].tensor.size(); ++i) coords.push_back({p, i});
  }
  std::vector<std::vector<double>> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) {
    const auto g = p.tensor.grad();
    analytic.emplace_back(g.begin(), g.end());
  }
  if (options.max_samples > 0) {
    Rng rng(options.seed);
    rng.shuffle(std::span<Coord>(coords));
  }

  GradCheckResult result;
  detail::KinkTracker tracker;
  std::uint64_t base_signature = 0;
  if (options.reject_kinks) {
    tracker.reset();
    (void)loss();
    base_signature = tracker.signature();
  }

  const double eps = options.epsilon;
  for (const auto& c : coords) {
    if (options.max_samples > 0 && result.per_parameter_errors.size() >= options.max_samples) break;
    Tensor t = params[c.param].tensor;
    double& slot = t.mutable_data()[c.index];
    const double original = slot;

    bool kinked = false;
    auto eval = [&](double x) {
      slot = x;
      tracker.reset();
      const double v = loss().item();
      if (tracker.signature() != base_signature) kinked = true;
      return v;
    };
    double numeric = 0.0;
    if (options.stencil == DifferenceStencil::kRidders) {
      const auto r = ridders(eval, original, options.ridders_step, f_scale, kinked, options.reject_kinks);
      slot = original;
      if (!r) {
        ++result.rejected;
        continue;
      }
      numeric = *r;
    } else if (options.stencil == DifferenceStencil::kCentral2) {
      numeric = (eval(original + eps) - eval(original - eps)) / (2.0 * eps);
    } else {
      const double d1 = eval(original + eps) - eval(original - eps);
      const double d2 = eval(original + 2.0 * eps) - eval(original - 2.0 * eps);
      numeric = (8.0 * d1 - d2) / (12.0 * eps);
    }
    slot = original;
    if (options.reject_kinks && kinked) {
      ++result.rejected;
      continue;
    }
    const double err = relative_error(analytic[c.param][c.index], numeric);
    result.per_parameter_errors.push_back(err);
    result.max_relative_error = std::max(result.max_relative_error, err);
  }
  zero_grads(params);
  return result;
}

}  // namespace mmf
