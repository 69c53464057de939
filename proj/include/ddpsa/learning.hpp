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

#include <array>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <istream>
#include <ostream>
#include <span>
#include <sstream>
#include <string>
#include <variant>
#include <vector>

#include "ddpsa/errors.hpp"
#include "ddpsa/gradient.hpp"
#include "ddpsa/random.hpp"

namespace ddpsa {

using Features = std::array<double, 2>;

// Half-open index range [begin, end).
struct IndexRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  bool empty() const { return end <= begin; }
  friend bool operator==(const IndexRange&, const IndexRange&) = default;
};

// Synthetic regression data y = x1 + x2 + 1 with a 60/20/20 split in
// generation order.
struct Dataset {
  std::vector<Features> features;
  std::vector<double> labels;
  IndexRange train;
  IndexRange validation;
  IndexRange test;

  std::size_t size() const { return labels.size(); }
};

namespace detail {
inline IndexRange split_ranges(std::size_t n, IndexRange& val, IndexRange& test) {
  const std::size_t n_train = n * 6 / 10;
  const std::size_t n_val = n * 2 / 10;
  val = {n_train, n_train + n_val};
  test = {n_train + n_val, n};
  return {0, n_train};
}
}  // namespace detail

// Features are uniform on a 2^-32 grid in [0, 1), so the label sum and
// the residual label - x1 - x2 - 1 are exact in binary64.
inline Dataset generate_dataset(std::size_t n_samples, Rng& rng) {
  if (n_samples < 5) {
    throw InvalidParameterError("generate_dataset: need at least 5 samples");
  }
  Dataset ds;
  ds.features.reserve(n_samples);
  ds.labels.reserve(n_samples);
  for (std::size_t i = 0; i < n_samples; ++i) {
    const double x1 = static_cast<double>(rng() >> 32) * 0x1.0p-32;
    const double x2 = static_cast<double>(rng() >> 32) * 0x1.0p-32;
    ds.features.push_back({x1, x2});
    ds.labels.push_back(x1 + x2 + 1.0);
  }
  ds.train = detail::split_ranges(n_samples, ds.validation, ds.test);
  return ds;
}

inline Dataset generate_dataset(std::size_t n_samples, std::uint64_t seed) {
  Rng rng = make_stream(seed, {stream::kData});
  return generate_dataset(n_samples, rng);
}

// Contiguous equal blocks; the remainder goes to the last client.
inline std::vector<IndexRange> partition_iid(const IndexRange& train,
                                             std::size_t n_clients) {
  if (n_clients == 0) throw InvalidParameterError("partition_iid: n_clients = 0");
  if (n_clients > train.size()) {
    throw InvalidParameterError("partition_iid: more clients than samples");
  }
  const std::size_t block = train.size() / n_clients;
  std::vector<IndexRange> out;
  out.reserve(n_clients);
  for (std::size_t i = 0; i < n_clients; ++i) {
    const std::size_t b = train.begin + i * block;
    out.push_back({b, i + 1 == n_clients ? train.end : b + block});
  }
  return out;
}

// Linear model y_hat = w . x + b (d = 3).
struct ModelParams {
  std::array<double, 2> weights{0.0, 0.0};
  double bias = 0.0;

  static constexpr std::size_t kDimension = 3;

  double predict(const Features& x) const {
    return weights[0] * x[0] + weights[1] * x[1] + bias;
  }

  std::vector<double> flat() const { return {weights[0], weights[1], bias}; }

  static ModelParams from_flat(std::span<const double> v) {
    if (v.size() != kDimension) {
      throw InvalidParameterError("model expects 3 parameters");
    }
    return {{v[0], v[1]}, v[2]};
  }

  friend bool operator==(const ModelParams&, const ModelParams&) = default;
};

// Loss 0.5 * (y_hat - y)^2.
inline double sample_loss(const ModelParams& p, const Features& x, double y) {
  const double r = p.predict(x) - y;
  return 0.5 * r * r;
}

inline GradientVector per_sample_gradient(const ModelParams& p,
                                          const Features& x, double y) {
  const double r = p.predict(x) - y;
  return {r * x[0], r * x[1], r};
}

struct Sgd {
  double learning_rate = 0.1;
};

struct Adam {
  double learning_rate = 0.001;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
};

class OptimizerState {
 public:
  using Kind = std::variant<Sgd, Adam>;

  explicit OptimizerState(Kind kind, std::size_t dimension = ModelParams::kDimension)
      : kind_(kind), first_(dimension, 0.0), second_(dimension, 0.0) {}

  const Kind& kind() const { return kind_; }
  std::uint64_t step() const { return step_; }
  const std::vector<double>& first_moment() const { return first_; }
  const std::vector<double>& second_moment() const { return second_; }

  // Returns the parameter change for `direction` and advances the step.
  std::vector<double> delta(const GradientVector& direction) {
    if (direction.size() != first_.size()) {
      throw InvalidParameterError("optimizer: direction dimension mismatch");
    }
    ++step_;
    std::vector<double> out(direction.size());
    if (const auto* sgd = std::get_if<Sgd>(&kind_)) {
      for (std::size_t i = 0; i < out.size(); ++i) {
        out[i] = -sgd->learning_rate * direction[i];
      }
      return out;
    }
    const auto& a = std::get<Adam>(kind_);
    const double t = static_cast<double>(step_);
    const double c1 = 1.0 - std::pow(a.beta1, t);
    const double c2 = 1.0 - std::pow(a.beta2, t);
    for (std::size_t i = 0; i < out.size(); ++i) {
      const double g = direction[i];
      first_[i] = a.beta1 * first_[i] + (1.0 - a.beta1) * g;
      second_[i] = a.beta2 * second_[i] + (1.0 - a.beta2) * g * g;
      const double m_hat = first_[i] / c1;
      const double v_hat = second_[i] / c2;
      out[i] = -a.learning_rate * m_hat / (std::sqrt(v_hat) + a.epsilon);
    }
    return out;
  }

 private:
  Kind kind_;
  std::vector<double> first_;
  std::vector<double> second_;
  std::uint64_t step_ = 0;
};

inline ModelParams apply_update(const ModelParams& params, OptimizerState& opt,
                                const GradientVector& direction) {
  auto theta = params.flat();
  const auto d = opt.delta(direction);
  for (std::size_t i = 0; i < theta.size(); ++i) theta[i] += d[i];
  return ModelParams::from_flat(theta);
}

struct EvalResult {
  double mse = 0.0;
  double r_squared = 0.0;
};

// Mean squared error and R^2 = 1 - SS_res / SS_tot over one split.
inline EvalResult evaluate(const ModelParams& p, const Dataset& ds,
                           const IndexRange& split) {
  if (split.empty()) throw InvalidParameterError("evaluate: empty split");
  double mean = 0.0;
  for (std::size_t i = split.begin; i < split.end; ++i) mean += ds.labels[i];
  mean /= static_cast<double>(split.size());
  double ss_res = 0.0, ss_tot = 0.0;
  for (std::size_t i = split.begin; i < split.end; ++i) {
    const double r = p.predict(ds.features[i]) - ds.labels[i];
    const double c = ds.labels[i] - mean;
    ss_res += r * r;
    ss_tot += c * c;
  }
  if (ss_tot == 0.0) throw DegenerateLabelsError("evaluate: constant labels");
  return {ss_res / static_cast<double>(split.size()), 1.0 - ss_res / ss_tot};
}

inline double mse(const ModelParams& p, const Dataset& ds,
                  const IndexRange& split) {
  if (split.empty()) throw InvalidParameterError("mse: empty split");
  double s = 0.0;
  for (std::size_t i = split.begin; i < split.end; ++i) {
    const double r = p.predict(ds.features[i]) - ds.labels[i];
    s += r * r;
  }
  return s / static_cast<double>(split.size());
}

// CSV with an x1,x2,y header. Values are written with 17 significant
// digits so a read-back is bit-exact.
inline void write_dataset_csv(std::ostream& os, const Dataset& ds) {
  os << "x1,x2,y\n" << std::setprecision(17);
  for (std::size_t i = 0; i < ds.size(); ++i) {
    os << ds.features[i][0] << ',' << ds.features[i][1] << ',' << ds.labels[i]
       << '\n';
  }
}

inline Dataset read_dataset_csv(std::istream& is) {
  std::string line;
  if (!std::getline(is, line) || line != "x1,x2,y") {
    throw InvalidParameterError("dataset csv: missing x1,x2,y header");
  }
  Dataset ds;
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::istringstream row(line);
    double x1 = 0, x2 = 0, y = 0;
    char c1 = 0, c2 = 0;
    if (!(row >> x1 >> c1 >> x2 >> c2 >> y) || c1 != ',' || c2 != ',') {
      throw InvalidParameterError("dataset csv: malformed row '" + line + "'");
    }
    ds.features.push_back({x1, x2});
    ds.labels.push_back(y);
  }
  if (ds.size() < 5) throw InvalidParameterError("dataset csv: fewer than 5 rows");
  ds.train = detail::split_ranges(ds.size(), ds.validation, ds.test);
  return ds;
}

}  // namespace ddpsa
