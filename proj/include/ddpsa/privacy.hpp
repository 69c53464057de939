/*
 * Copyright 2026 The ddpsa Authors
 *
 * Licensed under the Apache License, Version 2.0 (the "License");
 * you may not use this file except in compliance with the License.
 * You may obtain a copy of the License at
 *
 *      http://www.apache.org/licenses/LICENSE-2.0
 *
 * Unless required by applicable law or agreed to in writing, software
 * distributed under the License is distributed on an "AS IS" BASIS,
 * WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
 * See the License for the specific language governing permissions and
 * limitations under the License.
 */


#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <limits>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include "ddpsa/errors.hpp"
#include "ddpsa/gradient.hpp"
#include "ddpsa/random.hpp"

namespace ddpsa {

// Per-round (epsilon, delta) with the L1 sensitivity bound. An infinite
// epsilon denotes the noise-free mechanisms (No-Private, MPC).
struct DpParams {
  double epsilon = 0.1;
  double delta = 0.0;
  double clip_norm = 1.0;

  void validate() const {
    if (!(epsilon > 0)) throw InvalidParameterError("epsilon must be > 0");
    if (!(delta >= 0 && delta < 1)) {
      throw InvalidParameterError("delta must lie in [0, 1)");
    }
    if (!(clip_norm > 0) || !std::isfinite(clip_norm)) {
      throw InvalidParameterError("clip_norm must be finite and > 0");
    }
  }

  // Laplace scale b = clip_norm / epsilon; 0 when epsilon is infinite.
  double noise_scale() const {
    validate();
    return std::isinf(epsilon) ? 0.0 : clip_norm / epsilon;
  }
};

struct PrivacyTotals {
  double epsilon = 0.0;
  double delta = 0.0;
};

// Append-only record of per-round parameters; totals are always recomputed.
class PrivacyLedger {
 public:
  explicit PrivacyLedger(double delta_prime = 1e-4) : delta_prime_(delta_prime) {}

  void append(const DpParams& p) {
    p.validate();
    per_round_.push_back(p);
  }

  const std::vector<DpParams>& per_round() const { return per_round_; }
  std::size_t rounds() const { return per_round_.size(); }
  double delta_prime() const { return delta_prime_; }
  bool empty() const { return per_round_.empty(); }

 private:
  std::vector<DpParams> per_round_;
  double delta_prime_;
};

// Scales g down so that ||g||_1 <= clip_norm. Vectors already inside the
// ball are returned unchanged. The divisor is nudged upward until the
// rounded result is inside the ball, which makes clipping idempotent.
inline GradientVector clip_l1(const GradientVector& g, double clip_norm) {
  if (!(clip_norm > 0)) throw InvalidParameterError("clip_norm must be > 0");
  const double norm = g.l1_norm();
  if (norm <= clip_norm) return g;
  double divisor = norm / clip_norm;
  GradientVector out = g / divisor;
  while (out.l1_norm() > clip_norm) {
    divisor = std::nextafter(divisor, std::numeric_limits<double>::infinity());
    out = g / divisor;
  }
  return out;
}

// One Laplace(0, b) draw by inverse CDF.
inline double laplace_sample(double scale, Rng& rng) {
  const double u = uniform_centered_open(rng);
  const double sign = (u > 0) - (u < 0);
  return -scale * sign * std::log1p(-2.0 * std::fabs(u));
}

inline GradientVector laplace_noise(std::size_t dim, double scale, Rng& rng) {
  if (dim == 0) throw InvalidParameterError("laplace_noise: dim must be >= 1");
  if (!(scale > 0) || !std::isfinite(scale)) {
    throw InvalidParameterError("laplace_noise: scale must be finite and > 0");
  }
  GradientVector out(dim);
  for (std::size_t i = 0; i < dim; ++i) out[i] = laplace_sample(scale, rng);
  return out;
}

// (sum_clipped + Lap(clip/eps)^d) / n_samples. With infinite epsilon no
// noise is drawn and the result is sum_clipped / n_samples exactly.
inline GradientVector perturb_gradient(const GradientVector& sum_clipped,
                                       std::size_t n_samples,
                                       const DpParams& params, Rng& rng) {
  if (n_samples == 0) throw InvalidParameterError("perturb_gradient: N_i = 0");
  const double b = params.noise_scale();
  GradientVector out = sum_clipped;
  if (b > 0) out += laplace_noise(sum_clipped.size(), b, rng);
  out /= static_cast<double>(n_samples);
  return out;
}

// Median of the unclipped per-sample L1 norms.
inline double calibrate_sensitivity(std::vector<double> norms) {
  if (norms.empty()) {
    throw InvalidParameterError("calibrate_sensitivity: no norms");
  }
  const std::size_t n = norms.size();
  const auto mid = norms.begin() + static_cast<std::ptrdiff_t>(n / 2);
  std::nth_element(norms.begin(), mid, norms.end());
  const double upper = *mid;
  if (n % 2 == 1) return upper;
  const double lower = *std::max_element(norms.begin(), mid);
  return (lower + upper) / 2.0;
}

namespace detail {

// Neumaier-compensated running sum; 1000 copies of 0.1 total exactly 100.
class CompensatedSum {
 public:
  void add(double x) {
    const double t = sum_ + x;
    comp_ += std::fabs(sum_) >= std::fabs(x) ? (sum_ - t) + x : (x - t) + sum_;
    sum_ = t;
  }
  double value() const { return sum_ + comp_; }

 private:
  double sum_ = 0.0;
  double comp_ = 0.0;
};

}  // namespace detail

// Basic composition: (sum eps_i, sum delta_i).
inline PrivacyTotals compose_basic(const PrivacyLedger& ledger) {
  if (ledger.empty()) throw InvalidParameterError("compose_basic: empty ledger");
  detail::CompensatedSum eps, delta;
  for (const auto& p : ledger.per_round()) {
    eps.add(p.epsilon);
    delta.add(p.delta);
  }
  return {eps.value(), delta.value()};
}

// Advanced composition of T rounds of (eps, delta):
//   eps_total = eps sqrt(2T ln(1/delta')) + eps T (e^eps - 1),
//   delta_total = T delta + delta'.
inline PrivacyTotals compose_advanced(double epsilon, double delta,
                                      std::size_t rounds, double delta_prime) {
  if (!(delta_prime > 0)) {
    throw InvalidParameterError("compose_advanced: delta' must be > 0");
  }
  if (rounds == 0) throw InvalidParameterError("compose_advanced: T must be >= 1");
  if (epsilon < 0) throw InvalidParameterError("compose_advanced: epsilon < 0");
  const double t = static_cast<double>(rounds);
  return {epsilon * std::sqrt(2.0 * t * std::log(1.0 / delta_prime)) +
              epsilon * t * std::expm1(epsilon),
          t * delta + delta_prime};
}

// Heterogeneous form over a ledger: sqrt(2 ln(1/delta') sum eps_i^2) +
// sum eps_i (e^eps_i - 1). Equals the uniform formula when all eps_i agree.
inline PrivacyTotals compose_advanced(const PrivacyLedger& ledger) {
  if (ledger.empty()) {
    throw InvalidParameterError("compose_advanced: empty ledger");
  }
  if (!(ledger.delta_prime() > 0)) {
    throw InvalidParameterError("compose_advanced: delta' must be > 0");
  }
  detail::CompensatedSum sq, drift, delta;
  for (const auto& p : ledger.per_round()) {
    sq.add(p.epsilon * p.epsilon);
    drift.add(p.epsilon * std::expm1(p.epsilon));
    delta.add(p.delta);
  }
  return {std::sqrt(2.0 * std::log(1.0 / ledger.delta_prime()) * sq.value()) +
              drift.value(),
          delta.value() + ledger.delta_prime()};
}

struct AllocationPlan {
  enum class Strategy { kUniform, kAdaptive };

  double total_budget = 1.0;
  std::size_t rounds = 1;
  Strategy strategy = Strategy::kUniform;
  double alpha = 0.9;  // adaptive only

  static AllocationPlan uniform(double total, std::size_t rounds) {
    return {total, rounds, Strategy::kUniform, 0.0};
  }
  static AllocationPlan adaptive(double total, std::size_t rounds, double alpha) {
    return {total, rounds, Strategy::kAdaptive, alpha};
  }
};

// Per-round budgets summing to the total: equal shares, or geometric decay
// eps_t proportional to alpha^(t-1).
inline std::vector<double> allocate_budget(const AllocationPlan& plan) {
  if (plan.rounds == 0) throw InvalidParameterError("allocate_budget: T = 0");
  if (!(plan.total_budget > 0)) {
    throw InvalidParameterError("allocate_budget: total budget must be > 0");
  }
  const std::size_t t = plan.rounds;
  if (plan.strategy == AllocationPlan::Strategy::kUniform) {
    return std::vector<double>(t, plan.total_budget / static_cast<double>(t));
  }
  if (!(plan.alpha > 0 && plan.alpha < 1)) {
    throw InvalidParameterError("allocate_budget: alpha must lie in (0, 1)");
  }
  std::vector<double> w(t);
  double a = 1.0;
  for (std::size_t i = 0; i < t; ++i) {
    w[i] = a;
    a *= plan.alpha;
  }
  const double sum = std::accumulate(w.begin(), w.end(), 0.0);
  for (double& x : w) x = plan.total_budget * x / sum;
  return w;
}

// Probability that all m independently compromised servers (each with
// probability q) are held by the adversary.
inline double compromise_probability(double q, std::size_t m) {
  if (!(q >= 0 && q <= 1)) {
    throw InvalidParameterError("compromise_probability: q must lie in [0, 1]");
  }
  if (m == 0) throw InvalidParameterError("compromise_probability: m must be >= 1");
  return std::pow(q, static_cast<double>(m));
}

}  // namespace ddpsa
