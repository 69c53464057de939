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

#include <cstdint>
#include <limits>
#include <span>
#include <string>
#include <vector>

#include "ddpsa/errors.hpp"
#include "ddpsa/finite_field.hpp"
#include "ddpsa/random.hpp"
#include "ddpsa/wire.hpp"

namespace ddpsa {

// client_id carried by a per-server aggregate.
inline constexpr std::uint32_t kAggregatedClient =
    std::numeric_limits<std::uint32_t>::max();

// One server's additive share of an encoded vector.
struct ShareVector {
  std::uint16_t server_index = 0;
  std::vector<FieldElement> elements;
  std::uint64_t round_id = 0;
  std::uint32_t client_id = 0;

  std::size_t dimension() const { return elements.size(); }

  friend bool operator==(const ShareVector&, const ShareVector&) = default;
};

// The m shares of one secret, indexed by server. `server_count` is the m
// the secret was split into; fewer shares than that cannot reconstruct.
struct ShareSet {
  std::size_t server_count = 0;
  std::vector<ShareVector> shares;
};

namespace detail {

inline void check_split_args(std::span<const FieldElement> secret,
                             std::size_t m) {
  if (m == 0) throw InvalidParameterError("split: m must be >= 1");
  if (m > std::numeric_limits<std::uint16_t>::max()) {
    throw InvalidParameterError("split: m exceeds 16-bit server index");
  }
  if (secret.empty()) throw InvalidParameterError("split: empty secret");
  for (const auto& e : secret) require_same_modulus(secret.front(), e);
}

inline ShareSet empty_shareset(std::size_t m, std::size_t d,
                               std::uint64_t round_id,
                               std::uint32_t client_id) {
  ShareSet set{m, std::vector<ShareVector>(m)};
  for (std::size_t j = 0; j < m; ++j) {
    set.shares[j].server_index = static_cast<std::uint16_t>(j);
    set.shares[j].round_id = round_id;
    set.shares[j].client_id = client_id;
    set.shares[j].elements.reserve(d);
  }
  return set;
}

// Servers 0..m-2 get uniform draws; server m-1 absorbs the residual.
template <class DrawFn>
void split_coordinate(const FieldElement& secret, ShareSet& set, DrawFn&& draw) {
  const std::size_t m = set.server_count;
  FieldElement partial = FieldElement::zero(secret.modulus());
  for (std::size_t j = 0; j + 1 < m; ++j) {
    FieldElement s = draw();
    partial = partial + s;
    set.shares[j].elements.push_back(s);
  }
  set.shares[m - 1].elements.push_back(secret - partial);
}

}  // namespace detail

// Full-threshold additive split of `secret` into m shares. Randomness is
// consumed coordinate-major from `rng`.
template <class URBG>
ShareSet split(std::span<const FieldElement> secret, std::size_t m, URBG& rng,
               std::uint64_t round_id = 0, std::uint32_t client_id = 0) {
  detail::check_split_args(secret, m);
  ShareSet set = detail::empty_shareset(m, secret.size(), round_id, client_id);
  const PrimeModulus& modulus = secret.front().modulus();
  for (const auto& coordinate : secret) {
    detail::split_coordinate(coordinate, set,
                             [&] { return uniform_element(rng, modulus); });
  }
  return set;
}

// Same as split() but with a fresh stream per coordinate, derived from
// (seed, client_id, round_id, coordinate). This is the form clients use.
inline ShareSet split_streamed(std::span<const FieldElement> secret,
                               std::size_t m, std::uint64_t seed,
                               std::uint64_t round_id,
                               std::uint32_t client_id) {
  detail::check_split_args(secret, m);
  ShareSet set = detail::empty_shareset(m, secret.size(), round_id, client_id);
  const PrimeModulus& modulus = secret.front().modulus();
  for (std::size_t k = 0; k < secret.size(); ++k) {
    Rng rng = make_stream(seed, {stream::kShares, client_id, round_id, k});
    detail::split_coordinate(secret[k], set,
                             [&] { return uniform_element(rng, modulus); });
  }
  return set;
}

// Element-wise field sum of all m shares. Every server index 0..m-1 must be
// present exactly once.
inline std::vector<FieldElement> reconstruct(const ShareSet& set) {
  const std::size_t m = set.server_count;
  if (m == 0) throw IncompleteSharesetError("reconstruct: empty share set");
  std::vector<const ShareVector*> by_index(m, nullptr);
  for (const auto& share : set.shares) {
    if (share.server_index >= m) {
      throw ProtocolError("reconstruct: server index " +
                          std::to_string(share.server_index) +
                          " out of range");
    }
    if (by_index[share.server_index] != nullptr) {
      throw ProtocolError("reconstruct: duplicate share for server " +
                          std::to_string(share.server_index));
    }
    by_index[share.server_index] = &share;
  }
  for (std::size_t j = 0; j < m; ++j) {
    if (by_index[j] == nullptr) {
      throw IncompleteSharesetError("reconstruct: missing share from server " +
                                    std::to_string(j) + " of " +
                                    std::to_string(m));
    }
  }
  const std::size_t d = by_index[0]->dimension();
  std::vector<FieldElement> out = by_index[0]->elements;
  for (std::size_t j = 1; j < m; ++j) {
    if (by_index[j]->dimension() != d) {
      throw ProtocolError("reconstruct: share dimensions differ");
    }
    for (std::size_t k = 0; k < d; ++k) {
      out[k] = out[k] + by_index[j]->elements[k];
    }
  }
  return out;
}

// Share-wise sum at one intermediate server. Inputs must agree on server
// index, round and dimension.
inline ShareVector aggregate_shares(std::span<const ShareVector> shares) {
  if (shares.empty()) throw ProtocolError("aggregate_shares: no input");
  const ShareVector& first = shares.front();
  ShareVector out = first;
  out.client_id = kAggregatedClient;
  for (std::size_t i = 1; i < shares.size(); ++i) {
    const ShareVector& s = shares[i];
    if (s.server_index != first.server_index) {
      throw ProtocolError("aggregate_shares: mixed server indices " +
                          std::to_string(first.server_index) + " and " +
                          std::to_string(s.server_index));
    }
    if (s.dimension() != first.dimension()) {
      throw ProtocolError("aggregate_shares: dimension mismatch");
    }
    if (s.round_id != first.round_id) {
      throw ProtocolError("aggregate_shares: round mismatch");
    }
    for (std::size_t k = 0; k < s.dimension(); ++k) {
      out.elements[k] = out.elements[k] + s.elements[k];
    }
  }
  return out;
}

// Wire layout: round_id u64 | client_id u32 | server_index u16 | d u32 |
// d x 16-byte big-endian elements.
inline void write_share_vector(ByteWriter& w, const ShareVector& s) {
  w.u64(s.round_id);
  w.u32(s.client_id);
  w.u16(s.server_index);
  w.u32(static_cast<std::uint32_t>(s.dimension()));
  for (const auto& e : s.elements) w.u128be(e.value());
}

inline FieldElement read_field_element(ByteReader& r,
                                       const PrimeModulus& modulus) {
  const u128 v = r.u128be();
  if (v >= modulus.value()) {
    throw ConnectionFaultError("field element not reduced mod p");
  }
  return FieldElement(v, modulus);
}

inline ShareVector read_share_vector(ByteReader& r,
                                     const PrimeModulus& modulus) {
  ShareVector s;
  s.round_id = r.u64();
  s.client_id = r.u32();
  s.server_index = r.u16();
  const std::uint32_t d = r.u32();
  if (r.remaining() < std::size_t{d} * 16) {
    throw ConnectionFaultError("share vector truncated");
  }
  s.elements.reserve(d);
  for (std::uint32_t k = 0; k < d; ++k) {
    s.elements.push_back(read_field_element(r, modulus));
  }
  return s;
}

inline Bytes serialize(const ShareVector& s) {
  ByteWriter w(18 + 16 * s.dimension());
  write_share_vector(w, s);
  return std::move(w).take();
}

inline ShareVector deserialize_share_vector(std::span<const std::uint8_t> bytes,
                                            const PrimeModulus& modulus) {
  ByteReader r(bytes);
  ShareVector s = read_share_vector(r, modulus);
  if (!r.done()) throw ConnectionFaultError("trailing bytes after share vector");
  return s;
}

}  // namespace ddpsa
