#pragma once

#include <array>
#include <cmath>
#include <vector>

#include "cellmt/network.hpp"

namespace cellmt {

struct AdamSettings {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-7;
};

// Adam with per-group step counters. A group outside the update mask is
// skipped entirely: its parameters, moments, and step count stay as they
// were. Skipping matters because Adam would otherwise keep moving parameters
// on stale momentum even when their gradient is zero.
template <typename T>
class Adam {
 public:
  Adam(const std::vector<Param<T>>& params, AdamSettings settings)
      : settings_(settings) {
    first_.reserve(params.size());
    second_.reserve(params.size());
    for (const auto& p : params) {
      first_.emplace_back(p.value.size(), 0.0f);
      second_.emplace_back(p.value.size(), 0.0f);
    }
  }

  void step(std::vector<Param<T>>& params, const ParamGrads<T>& grads, double learning_rate,
            const GroupMask& mask) {
    for (auto g : kAllGroups) {
      if (mask.contains(g)) ++steps_[static_cast<int>(g)];
    }
    for (std::size_t i = 0; i < params.size(); ++i) {
      auto& p = params[i];
      if (!mask.contains(p.group)) continue;
      const long t = steps_[static_cast<int>(p.group)];
      const double b1 = settings_.beta1, b2 = settings_.beta2;
      const double step_size = learning_rate * std::sqrt(1.0 - std::pow(b2, t)) / (1.0 - std::pow(b1, t));
      const double eps_hat = settings_.epsilon * std::sqrt(1.0 - std::pow(b2, t));
      auto& m = first_[i];
      auto& v = second_[i];
      const auto& g = grads[i];
      for (std::size_t k = 0; k < p.value.size(); ++k) {
        const double gk = g[k];
        m[k] = static_cast<float>(b1 * m[k] + (1 - b1) * gk);
        v[k] = static_cast<float>(b2 * v[k] + (1 - b2) * gk * gk);
        p.value[k] -= static_cast<T>(step_size * m[k] / (std::sqrt(static_cast<double>(v[k])) + eps_hat));
      }
    }
  }

  [[nodiscard]] long steps(ParamGroup g) const { return steps_[static_cast<int>(g)]; }
  [[nodiscard]] const AdamSettings& settings() const { return settings_; }

 private:
  AdamSettings settings_;
  std::vector<std::vector<float>> first_;
  std::vector<std::vector<float>> second_;
  std::array<long, 3> steps_{0, 0, 0};
};

}  // namespace cellmt
