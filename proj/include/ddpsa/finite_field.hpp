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
#include <bit>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>

#include "ddpsa/errors.hpp"
#include "ddpsa/random.hpp"
#include "ddpsa/wire.hpp"

namespace ddpsa {

namespace detail {

inline unsigned bit_width(u128 v) {
  const auto hi = static_cast<std::uint64_t>(v >> 64);
  if (hi != 0) return 64 + static_cast<unsigned>(std::bit_width(hi));
  return static_cast<unsigned>(std::bit_width(static_cast<std::uint64_t>(v)));
}

// (a + b) mod p for a, b < p, correct for any p < 2^128.
inline u128 add_mod(u128 a, u128 b, u128 p) {
  const u128 s = a + b;
  return (s < a || s >= p) ? s - p : s;
}

inline u128 mul_mod(u128 a, u128 b, u128 p) {
  if (p <= (u128{1} << 64)) return (a % p) * (b % p) % p;
  u128 r = 0;
  a %= p;
  while (b != 0) {
    if (b & 1) r = add_mod(r, a, p);
    a = add_mod(a, a, p);
    b >>= 1;
  }
  return r;
}

inline u128 pow_mod(u128 base, u128 exp, u128 p) {
  u128 r = 1 % p;
  base %= p;
  while (exp != 0) {
    if (exp & 1) r = mul_mod(r, base, p);
    base = mul_mod(base, base, p);
    exp >>= 1;
  }
  return r;
}

inline bool miller_rabin(u128 n, u128 a) {
  a %= n;
  if (a == 0) return true;
  u128 d = n - 1;
  int s = 0;
  while ((d & 1) == 0) {
    d >>= 1;
    ++s;
  }
  u128 x = pow_mod(a, d, n);
  if (x == 1 || x == n - 1) return true;
  for (int i = 1; i < s; ++i) {
    x = mul_mod(x, x, n);
    if (x == n - 1) return true;
  }
  return false;
}

// Lucas-Lehmer for 2^k - 1 with k an odd prime.
inline bool lucas_lehmer(unsigned k, u128 p) {
  u128 s = 4;
  for (unsigned i = 0; i + 2 < k; ++i) {
    s = mul_mod(s, s, p);
    s = s >= 2 ? s - 2 : s + p - 2;
  }
  return s == 0;
}

inline constexpr std::array<std::uint32_t, 25> kSmallPrimes = {
    2,  3,  5,  7,  11, 13, 17, 19, 23, 29, 31, 37, 41,
    43, 47, 53, 59, 61, 67, 71, 73, 79, 83, 89, 97};

}  // namespace detail

// Deterministic primality check for n < 2^128.
//
// Mersenne candidates are settled by Lucas-Lehmer. Below 2^64 the first
// twelve prime bases make Miller-Rabin exact. Above that a fixed set of
// twenty bases is used (deterministic, but not a proof).
inline bool is_prime(u128 n) {
  if (n < 2) return false;
  for (auto q : detail::kSmallPrimes) {
    if (n == q) return true;
    if (n % q == 0) return false;
  }
  if ((n & (n + 1)) == 0) {
    const unsigned k = detail::bit_width(n);
    if (!is_prime(k)) return false;
    return detail::lucas_lehmer(k, n);
  }
  const std::size_t bases = n < (u128{1} << 64) ? 12 : 20;
  for (std::size_t i = 0; i < bases; ++i) {
    if (!detail::miller_rabin(n, detail::kSmallPrimes[i])) return false;
  }
  return true;
}

// A prime modulus p < 2^128. Construction runs the primality check once;
// copies are cheap.
class PrimeModulus {
 public:
  explicit PrimeModulus(u128 p) : p_(p) {
    if (!is_prime(p)) {
      throw ConfigurationError("modulus " + ddpsa::to_string(p) +
                               " is not prime");
    }
    bit_width_ = detail::bit_width(p - 1);
  }

  // 2^127 - 1.
  static PrimeModulus mersenne127() {
    return PrimeModulus((u128{1} << 127) - 1);
  }

  u128 value() const { return p_; }
  // Bits needed to represent p - 1.
  unsigned bit_width() const { return bit_width_; }
  // Largest magnitude representable under the centered lift.
  u128 half() const { return (p_ - 1) / 2; }

  friend bool operator==(const PrimeModulus& a, const PrimeModulus& b) {
    return a.p_ == b.p_;
  }

 private:
  u128 p_;
  unsigned bit_width_ = 0;
};

// Residue in Z_p. The value is always reduced.
class FieldElement {
 public:
  FieldElement(u128 value, const PrimeModulus& modulus)
      : value_(value), modulus_(modulus) {
    if (value >= modulus.value()) {
      throw ConfigurationError("field element " + ddpsa::to_string(value) +
                               " not reduced mod " +
                               ddpsa::to_string(modulus.value()));
    }
  }

  static FieldElement zero(const PrimeModulus& modulus) {
    return FieldElement(0, modulus);
  }

  u128 value() const { return value_; }
  const PrimeModulus& modulus() const { return modulus_; }

  friend bool operator==(const FieldElement& a, const FieldElement& b) {
    return a.value_ == b.value_ && a.modulus_ == b.modulus_;
  }

 private:
  u128 value_;
  PrimeModulus modulus_;
};

namespace detail {
inline void require_same_modulus(const FieldElement& a, const FieldElement& b) {
  if (!(a.modulus() == b.modulus())) {
    throw ConfigurationError("field operands carry different moduli");
  }
}
}  // namespace detail

inline FieldElement field_add(const FieldElement& a, const FieldElement& b) {
  detail::require_same_modulus(a, b);
  return FieldElement(
      detail::add_mod(a.value(), b.value(), a.modulus().value()), a.modulus());
}

inline FieldElement field_neg(const FieldElement& a) {
  const u128 v = a.value() == 0 ? 0 : a.modulus().value() - a.value();
  return FieldElement(v, a.modulus());
}

inline FieldElement field_sub(const FieldElement& a, const FieldElement& b) {
  return field_add(a, field_neg(b));
}

inline FieldElement operator+(const FieldElement& a, const FieldElement& b) {
  return field_add(a, b);
}
inline FieldElement operator-(const FieldElement& a, const FieldElement& b) {
  return field_sub(a, b);
}

// Uniform element of Z_p by rejection sampling on [0, 2^k), 2^k >= p the
// smallest such power of two. No modulo bias.
template <class URBG>
FieldElement uniform_element(URBG& rng, const PrimeModulus& modulus) {
  static_assert(URBG::min() == 0 &&
                    URBG::max() == std::numeric_limits<std::uint64_t>::max(),
                "uniform_element needs a full 64-bit generator");
  const unsigned k = modulus.bit_width();
  const u128 mask = k >= 128 ? ~u128{0} : (u128{1} << k) - 1;
  for (;;) {
    u128 draw = static_cast<std::uint64_t>(rng());
    if (k > 64) draw |= u128{static_cast<std::uint64_t>(rng())} << 64;
    draw &= mask;
    if (draw < modulus.value()) return FieldElement(draw, modulus);
  }
}

// Magnitude limits the codec must support without wraparound: up to
// `max_clients` encodings, each of magnitude at most `max_abs_value`.
struct CodecBounds {
  std::uint64_t max_clients = 10'000;
  double max_abs_value = 1e6;
};

// Fixed-point codec: x -> round(x * 10^d) lifted into Z_p, negatives as
// p + k. Rounding is half away from zero and exact (no floating product).
class FixedPointCodec {
 public:
  static constexpr unsigned kMaxDecimalPlaces = 18;

  FixedPointCodec(const PrimeModulus& modulus, unsigned decimal_places,
                  CodecBounds bounds = {})
      : modulus_(modulus), decimal_places_(decimal_places), bounds_(bounds) {
    if (decimal_places > kMaxDecimalPlaces) {
      throw ConfigurationError("decimal_places must be <= " +
                               std::to_string(kMaxDecimalPlaces));
    }
    scale_ = 1;
    for (unsigned i = 0; i < decimal_places; ++i) scale_ *= 10;
    if (!(bounds.max_abs_value > 0) || bounds.max_clients == 0) {
      throw ConfigurationError("codec bounds must be positive");
    }
    // p > 2 * n_max * SF * V_max, checked in long double (64-bit mantissa
    // is plenty for a headroom test).
    const long double need = 2.0L * static_cast<long double>(bounds.max_clients) *
                             static_cast<long double>(scale_) *
                             static_cast<long double>(bounds.max_abs_value);
    if (!(static_cast<long double>(modulus.value()) > need)) {
      throw ConfigurationError(
          "modulus too small: p must exceed 2 * n_max * SF * V_max");
    }
  }

  const PrimeModulus& modulus() const { return modulus_; }
  unsigned decimal_places() const { return decimal_places_; }
  std::uint64_t scale_factor() const { return scale_; }
  const CodecBounds& bounds() const { return bounds_; }

  // Largest |x| accepted by encode (exclusive): p / (2 SF).
  double max_encodable() const {
    return static_cast<double>(static_cast<long double>(modulus_.value()) /
                               (2.0L * static_cast<long double>(scale_)));
  }

  // round(x * SF) as a signed integer, exactly.
  i128 quantize(double x) const {
    if (!std::isfinite(x)) {
      throw EncodingOverflowError("cannot encode non-finite value");
    }
    if (x == 0.0) return 0;
    int exp = 0;
    const double frac = std::frexp(std::fabs(x), &exp);
    const auto mant = static_cast<std::uint64_t>(std::ldexp(frac, 53));
    const int shift = exp - 53;  // |x| = mant * 2^shift
    const u128 prod = u128{mant} * scale_;  // < 2^113
    u128 mag = 0;
    if (shift >= 0) {
      if (detail::bit_width(prod) + static_cast<unsigned>(shift) > 127) {
        throw overflow(x);
      }
      mag = prod << shift;
    } else {
      const int s = -shift;
      if (s <= 120) mag = (prod + (u128{1} << (s - 1))) >> s;
    }
    if (mag > modulus_.half()) throw overflow(x);
    return x < 0 ? -static_cast<i128>(mag) : static_cast<i128>(mag);
  }

  FieldElement encode(double x) const { return lift(quantize(x)); }

  // Maps a signed integer with |k| <= (p-1)/2 into Z_p.
  FieldElement lift(i128 k) const {
    const u128 mag = k < 0 ? static_cast<u128>(-k) : static_cast<u128>(k);
    if (mag > modulus_.half()) {
      throw EncodingOverflowError("integer outside centered range");
    }
    if (k < 0 && mag != 0) return FieldElement(modulus_.value() - mag, modulus_);
    return FieldElement(mag, modulus_);
  }

  // Centered lift: residues above (p-1)/2 are negative.
  i128 centered(const FieldElement& e) const {
    require_modulus(e);
    if (e.value() > modulus_.half()) {
      return -static_cast<i128>(modulus_.value() - e.value());
    }
    return static_cast<i128>(e.value());
  }

  double decode(const FieldElement& e) const {
    return integer_to_real(centered(e));
  }

  // k / SF rounded to double.
  double integer_to_real(i128 k) const {
    const bool neg = k < 0;
    const u128 mag = neg ? static_cast<u128>(-k) : static_cast<u128>(k);
    const u128 q = mag / scale_;
    const auto r = static_cast<std::uint64_t>(mag % scale_);
    double v = 0.0;
    constexpr std::uint64_t kExact = std::uint64_t{1} << 53;
    if (q == 0 && r < kExact && scale_ <= kExact) {
      v = static_cast<double>(r) / static_cast<double>(scale_);
    } else {
      v = static_cast<double>(static_cast<long double>(q) +
                              static_cast<long double>(r) /
                                  static_cast<long double>(scale_));
    }
    return neg ? -v : v;
  }

 private:
  void require_modulus(const FieldElement& e) const {
    if (!(e.modulus() == modulus_)) {
      throw ConfigurationError("field element modulus differs from codec");
    }
  }

  EncodingOverflowError overflow(double x) const {
    return EncodingOverflowError(
        "value " + std::to_string(x) + " outside encodable range (|x| < " +
        std::to_string(max_encodable()) + ")");
  }

  PrimeModulus modulus_;
  unsigned decimal_places_;
  std::uint64_t scale_ = 1;
  CodecBounds bounds_;
};

inline FieldElement encode(double x, const FixedPointCodec& codec) {
  return codec.encode(x);
}

inline double decode(const FieldElement& e, const FixedPointCodec& codec) {
  return codec.decode(e);
}

}  // namespace ddpsa
