// SPDX-License-Identifier: Apache-2.0
#ifndef MMFUSION_SUITE_HPP
#define MMFUSION_SUITE_HPP

#include <cstdint>
#include <string>
#include <vector>

namespace mmf {

struct GradientSuiteOptions {
  std::size_t layer_instances = 100;
  std::size_t samples_per_model = 20;
  double tolerance = 1e-4;
  std::uint64_t seed = 0;
  bool models = true;  // include the 16 full architectures
};

struct GradientSuiteEntry {
  std::string name;
  double max_relative_error = 0.0;
  std::size_t checked = 0;
  std::size_t rejected = 0;
};

struct GradientSuiteReport {
  std::vector<GradientSuiteEntry> entries;
  double tolerance = 1e-4;

  double max_relative_error() const;
  bool passed() const { return max_relative_error() < tolerance; }
};

/// Finite-difference checks over random layer instances (every layer kind,
/// input gradients included) and, optionally, all 16 (group, base) models.
GradientSuiteReport run_gradient_suite(const GradientSuiteOptions& options = {});

}  // namespace mmf

#endif  // MMFUSION_SUITE_HPP
