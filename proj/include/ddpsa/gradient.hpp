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

#include <cmath>
#include <cstddef>
#include <initializer_list>
#include <span>
#include <vector>

#include "ddpsa/errors.hpp"

namespace ddpsa {

// d-dimensional real gradient (or update direction).
class GradientVector {
 public:
  GradientVector() = default;
  explicit GradientVector(std::size_t d) : values_(d, 0.0) {}
  GradientVector(std::initializer_list<double> v) : values_(v) {}
  explicit GradientVector(std::vector<double> v) : values_(std::move(v)) {}

  std::size_t size() const { return values_.size(); }
  double& operator[](std::size_t i) { return values_[i]; }
  double operator[](std::size_t i) const { return values_[i]; }
  std::span<const double> values() const { return values_; }
  const std::vector<double>& vec() const { return values_; }

  double l1_norm() const {
    double s = 0.0;
    for (double v : values_) s += std::fabs(v);
    return s;
  }

  bool all_finite() const {
    for (double v : values_) {
      if (!std::isfinite(v)) return false;
    }
    return true;
  }

  GradientVector& operator+=(const GradientVector& o) {
    require_same_size(o);
    for (std::size_t i = 0; i < values_.size(); ++i) values_[i] += o.values_[i];
    return *this;
  }

  GradientVector& operator/=(double s) {
    for (double& v : values_) v /= s;
    return *this;
  }

  GradientVector& operator*=(double s) {
    for (double& v : values_) v *= s;
    return *this;
  }

  friend GradientVector operator+(GradientVector a, const GradientVector& b) {
    a += b;
    return a;
  }
  friend GradientVector operator/(GradientVector a, double s) {
    a /= s;
    return a;
  }

  friend bool operator==(const GradientVector&, const GradientVector&) = default;

 private:
  void require_same_size(const GradientVector& o) const {
    if (o.size() != size()) {
      throw InvalidParameterError("gradient dimension mismatch");
    }
  }

  std::vector<double> values_;
};

}  // namespace ddpsa
