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
#include <cstdint>
#include <initializer_list>
#include <random>
#include <vector>

namespace ddpsa {

// Every stochastic component draws from its own std::mt19937_64 instance.
using Rng = std::mt19937_64;

// Derives an independent generator from a base seed and a list of tags
// (client id, round id, coordinate, purpose...). Equal inputs give equal
// streams; any differing tag gives an unrelated stream.
inline Rng make_stream(std::uint64_t seed,
                       std::initializer_list<std::uint64_t> tags = {}) {
  std::vector<std::uint32_t> words;
  words.reserve(2 * (tags.size() + 1));
  auto push = [&words](std::uint64_t v) {
    words.push_back(static_cast<std::uint32_t>(v));
    words.push_back(static_cast<std::uint32_t>(v >> 32));
  };
  push(seed);
  for (auto t : tags) push(t);
  std::seed_seq seq(words.begin(), words.end());
  return Rng(seq);
}

// Stream purpose tags.
namespace stream {
inline constexpr std::uint64_t kData = 0xDA7A;
inline constexpr std::uint64_t kNoise = 0x401E;
inline constexpr std::uint64_t kShares = 0x54A2E;
}  // namespace stream

// Uniform double on [0, 1) with 53 random bits.
inline double uniform_unit(Rng& rng) {
  return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

// Uniform double on the open interval (-0.5, 0.5). 52 bits so that the
// half-offset stays exact.
inline double uniform_centered_open(Rng& rng) {
  return (static_cast<double>(rng() >> 12) + 0.5) * 0x1.0p-52 - 0.5;
}

}  // namespace ddpsa
