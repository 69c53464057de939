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
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "ddpsa/errors.hpp"
#include "ddpsa/finite_field.hpp"
#include "ddpsa/secret_sharing.hpp"

namespace ddpsa {

enum class MechanismKind { kNoPrivate, kLdp, kMpc, kDdpSa };

// Shares go through intermediate servers (MPC, DDP-SA).
constexpr bool uses_sharing(MechanismKind k) {
  return k == MechanismKind::kMpc || k == MechanismKind::kDdpSa;
}

// Clipping and Laplace noise on the client (LDP, DDP-SA).
constexpr bool uses_dp(MechanismKind k) {
  return k == MechanismKind::kLdp || k == MechanismKind::kDdpSa;
}

inline std::string_view to_string(MechanismKind k) {
  switch (k) {
    case MechanismKind::kNoPrivate: return "no_private";
    case MechanismKind::kLdp: return "ldp";
    case MechanismKind::kMpc: return "mpc";
    case MechanismKind::kDdpSa: return "ddp_sa";
  }
  return "?";
}

inline MechanismKind parse_mechanism(std::string_view s) {
  for (auto k : {MechanismKind::kNoPrivate, MechanismKind::kLdp,
                 MechanismKind::kMpc, MechanismKind::kDdpSa}) {
    if (s == to_string(k)) return k;
  }
  throw InvalidParameterError("unknown mechanism '" + std::string(s) +
                              "' (expected no_private|ldp|mpc|ddp_sa)");
}

struct ModelBroadcast {
  std::uint64_t round_id = 0;
  std::vector<double> theta;
  friend bool operator==(const ModelBroadcast&, const ModelBroadcast&) = default;
};

struct ShareUpload {
  ShareVector share;
  friend bool operator==(const ShareUpload&, const ShareUpload&) = default;
};

struct PlainGradientUpload {
  std::uint64_t round_id = 0;
  std::uint32_t client_id = 0;
  std::vector<double> gradient;
  friend bool operator==(const PlainGradientUpload&,
                         const PlainGradientUpload&) = default;
};

struct PartialSum {
  std::uint64_t round_id = 0;
  std::uint16_t server_index = 0;
  std::vector<FieldElement> elements;
  friend bool operator==(const PartialSum&, const PartialSum&) = default;
};

// Sent by the parameter server after the last round; receivers stop.
struct RoundAck {
  std::uint64_t round_id = 0;
  friend bool operator==(const RoundAck&, const RoundAck&) = default;
};

using RoundMessage = std::variant<ModelBroadcast, ShareUpload,
                                  PlainGradientUpload, PartialSum, RoundAck>;

inline std::uint64_t round_of(const RoundMessage& msg) {
  return std::visit(
      [](const auto& m) -> std::uint64_t {
        using T = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<T, ShareUpload>) {
          return m.share.round_id;
        } else {
          return m.round_id;
        }
      },
      msg);
}

inline std::string_view message_name(const RoundMessage& msg) {
  static constexpr std::string_view kNames[] = {
      "ModelBroadcast", "ShareUpload", "PlainGradientUpload", "PartialSum",
      "RoundAck"};
  return kNames[msg.index()];
}

}  // namespace ddpsa
