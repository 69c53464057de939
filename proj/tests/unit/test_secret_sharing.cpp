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


#include <gtest/gtest.h>

#include <array>
#include <vector>

#include "ddpsa/finite_field.hpp"
#include "ddpsa/random.hpp"
#include "ddpsa/secret_sharing.hpp"
#include "support/stats.hpp"

namespace {

using namespace ddpsa;

const PrimeModulus kP101(101);
const PrimeModulus kP = PrimeModulus::mersenne127();

std::vector<FieldElement> random_vector(Rng& rng, std::size_t d,
                                        const PrimeModulus& p = kP) {
  std::vector<FieldElement> v;
  for (std::size_t k = 0; k < d; ++k) v.push_back(uniform_element(rng, p));
  return v;
}

// Plain modular sum, computed without the library's field operators.
u128 oracle_sum(std::initializer_list<u128> xs, u128 p) {
  u128 s = 0;
  for (u128 x : xs) s = (s + x) % p;
  return s;
}

TEST(Split, WorkedExampleModulo101) {
  test::ScriptedEngine draws({17, 55});
  const std::vector<FieldElement> secret{FieldElement(42, kP101)};
  const ShareSet set = split(secret, 3, draws);
  ASSERT_EQ(set.shares.size(), 3u);
  EXPECT_EQ(set.shares[0].elements[0].value(), 17u);
  EXPECT_EQ(set.shares[1].elements[0].value(), 55u);
  EXPECT_EQ(set.shares[2].elements[0].value(), 71u);
  EXPECT_EQ(oracle_sum({17, 55, 71}, 101), 42u);
  EXPECT_EQ(reconstruct(set), secret);
}

TEST(Split, SingleServerGetsTheSecret) {
  Rng rng(1);
  const auto v = random_vector(rng, 5);
  const ShareSet set = split(v, 1, rng);
  ASSERT_EQ(set.shares.size(), 1u);
  EXPECT_EQ(set.shares[0].elements, v);
  EXPECT_EQ(reconstruct(set), v);
}

TEST(Split, ZeroServersIsInvalid) {
  Rng rng(1);
  const auto v = random_vector(rng, 2);
  EXPECT_THROW(split(v, 0, rng), InvalidParameterError);
  EXPECT_THROW(split(std::vector<FieldElement>{}, 2, rng), InvalidParameterError);
}

TEST(Split, ServerIndicesRoundAndClientAreStamped) {
  Rng rng(2);
  const auto v = random_vector(rng, 3);
  const ShareSet set = split(v, 4, rng, 12, 7);
  for (std::size_t j = 0; j < 4; ++j) {
    EXPECT_EQ(set.shares[j].server_index, j);
    EXPECT_EQ(set.shares[j].round_id, 12u);
    EXPECT_EQ(set.shares[j].client_id, 7u);
    EXPECT_EQ(set.shares[j].dimension(), 3u);
  }
}

TEST(Split, RoundtripExactAcrossServerCounts) {
  Rng rng(3);
  for (std::size_t m = 1; m <= 8; ++m) {
    for (std::size_t d : {1u, 3u, 17u}) {
      for (int t = 0; t < 200; ++t) {
        const auto v = random_vector(rng, d);
        ASSERT_EQ(reconstruct(split(v, m, rng)), v);
        ASSERT_EQ(reconstruct(split_streamed(v, m, rng(), t, 1)), v);
      }
    }
  }
}

TEST(Split, StreamedSplitIsDeterministic) {
  Rng rng(4);
  const auto v = random_vector(rng, 3);
  EXPECT_EQ(split_streamed(v, 3, 77, 5, 2).shares, split_streamed(v, 3, 77, 5, 2).shares);
  EXPECT_NE(split_streamed(v, 3, 77, 5, 2).shares[0],
            split_streamed(v, 3, 77, 6, 2).shares[0]);
}

TEST(Reconstruct, MissingShareIsIncomplete) {
  Rng rng(5);
  const auto v = random_vector(rng, 3);
  for (std::size_t m = 2; m <= 5; ++m) {
    for (std::size_t drop = 0; drop < m; ++drop) {
      ShareSet set = split(v, m, rng);
      set.shares.erase(set.shares.begin() + static_cast<std::ptrdiff_t>(drop));
      EXPECT_THROW(reconstruct(set), IncompleteSharesetError);
    }
  }
}

TEST(Reconstruct, DuplicateOrForeignIndexIsProtocolError) {
  Rng rng(6);
  const auto v = random_vector(rng, 2);
  ShareSet set = split(v, 3, rng);
  set.shares[1].server_index = 0;
  EXPECT_THROW(reconstruct(set), ProtocolError);
  set = split(v, 3, rng);
  set.shares[2].server_index = 9;
  EXPECT_THROW(reconstruct(set), ProtocolError);
}

TEST(Reconstruct, WorkedExampleModulo101) {
  ShareSet set{3, {{0, {FieldElement(17, kP101)}, 0, 0},
                   {1, {FieldElement(55, kP101)}, 0, 0},
                   {2, {FieldElement(71, kP101)}, 0, 0}}};
  EXPECT_EQ(reconstruct(set)[0].value(), 42u);
}

TEST(AggregateShares, SingleInputUnchangedExceptClient) {
  Rng rng(7);
  const auto v = random_vector(rng, 4);
  const ShareSet set = split(v, 3, rng, 1, 5);
  const ShareVector agg = aggregate_shares(std::span(&set.shares[1], 1));
  EXPECT_EQ(agg.elements, set.shares[1].elements);
  EXPECT_EQ(agg.server_index, 1);
  EXPECT_EQ(agg.client_id, kAggregatedClient);
}

TEST(AggregateShares, MismatchesAreProtocolErrors) {
  Rng rng(8);
  const auto a = split(random_vector(rng, 3), 2, rng);
  const auto b = split(random_vector(rng, 2), 2, rng);
  std::vector<ShareVector> mixed_index{a.shares[0], a.shares[1]};
  EXPECT_THROW(aggregate_shares(mixed_index), ProtocolError);
  std::vector<ShareVector> mixed_dim{a.shares[0], b.shares[0]};
  EXPECT_THROW(aggregate_shares(mixed_dim), ProtocolError);
  EXPECT_THROW(aggregate_shares(std::span<const ShareVector>{}), ProtocolError);
}

TEST(AggregateShares, ZeroSecretsAggregateToZero) {
  Rng rng(9);
  const std::size_t n = 4, m = 3, d = 3;
  const std::vector<FieldElement> zero(d, FieldElement::zero(kP));
  std::vector<std::vector<ShareVector>> per_server(m);
  for (std::size_t i = 0; i < n; ++i) {
    auto set = split(zero, m, rng, 0, static_cast<std::uint32_t>(i));
    for (std::size_t j = 0; j < m; ++j) per_server[j].push_back(set.shares[j]);
  }
  ShareSet totals{m, {}};
  for (auto& s : per_server) totals.shares.push_back(aggregate_shares(s));
  EXPECT_EQ(reconstruct(totals), zero);
}

// Brute-force oracle: summing secrets first, or splitting and summing per
// server, reconstruct to the same vector.
TEST(AggregateShares, CommutesWithReconstruction) {
  Rng rng(10);
  for (std::size_t d = 1; d <= 4; ++d) {
    for (std::size_t n = 1; n <= 5; ++n) {
      for (std::size_t m = 1; m <= 4; ++m) {
        std::vector<u128> expect(d, 0);
        std::vector<std::vector<ShareVector>> per_server(m);
        for (std::size_t i = 0; i < n; ++i) {
          const auto v = random_vector(rng, d);
          for (std::size_t k = 0; k < d; ++k) {
            expect[k] = oracle_sum({expect[k], v[k].value()}, kP.value());
          }
          auto set = split(v, m, rng, 3, static_cast<std::uint32_t>(i));
          for (std::size_t j = 0; j < m; ++j) per_server[j].push_back(set.shares[j]);
        }
        ShareSet totals{m, {}};
        for (auto& s : per_server) totals.shares.push_back(aggregate_shares(s));
        const auto got = reconstruct(totals);
        for (std::size_t k = 0; k < d; ++k) ASSERT_EQ(got[k].value(), expect[k]);
      }
    }
  }
}

// Any single share of a fixed secret looks the same whichever secret it
// came from, and looks uniform.
TEST(Split, StrictSubsetIsIndependentOfSecret) {
  const std::vector<FieldElement> s1{FieldElement(0, kP)};
  const std::vector<FieldElement> s2{FieldElement(kP.value() - 12345, kP)};
  for (std::size_t m : {2u, 3u}) {
    for (std::size_t j = 0; j < m; ++j) {
      std::array<std::uint64_t, 256> h1{}, h2{};
      Rng r1(100 + j), r2(200 + j);
      for (int t = 0; t < 100'000; ++t) {
        ++h1[static_cast<std::size_t>(split(s1, m, r1).shares[j].elements[0].value() & 0xFF)];
        ++h2[static_cast<std::size_t>(split(s2, m, r2).shares[j].elements[0].value() & 0xFF)];
      }
      EXPECT_GT(test::two_sample_chi_square_p(h1, h2), 0.01) << "m=" << m << " j=" << j;
      EXPECT_GT(test::uniform_chi_square_p(h1), 0.01);
      EXPECT_GT(test::uniform_chi_square_p(h2), 0.01);
    }
  }
}

TEST(Wire, ShareVectorLayout) {
  ShareVector s{2, {FieldElement(1, kP), FieldElement(kP.value() - 1, kP)}, 0x0102030405060708ull, 9};
  const Bytes b = serialize(s);
  EXPECT_EQ(to_hex(b),
            "0102030405060708"
            "00000009"
            "0002"
            "00000002"
            "00000000000000000000000000000001"
            "7ffffffffffffffffffffffffffffffe");
  EXPECT_EQ(deserialize_share_vector(b, kP), s);
}

TEST(Wire, RejectsTruncatedAndUnreducedInput) {
  ShareVector s{0, {FieldElement(5, kP)}, 1, 1};
  Bytes b = serialize(s);
  Bytes shorter(b.begin(), b.end() - 1);
  EXPECT_THROW(deserialize_share_vector(shorter, kP), ConnectionFaultError);
  for (std::size_t i = 18; i < b.size(); ++i) b[i] = 0xFF;
  EXPECT_THROW(deserialize_share_vector(b, kP), ConnectionFaultError);
}

}  // namespace
