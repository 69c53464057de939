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
#include <array>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <exception>
#include <functional>
#include <limits>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <utility>
#include <vector>

#include "ddpsa/errors.hpp"
#include "ddpsa/finite_field.hpp"
#include "ddpsa/gradient.hpp"
#include "ddpsa/learning.hpp"
#include "ddpsa/messages.hpp"
#include "ddpsa/privacy.hpp"
#include "ddpsa/random.hpp"
#include "ddpsa/secret_sharing.hpp"
#include "ddpsa/transport.hpp"

namespace ddpsa {

enum class TransportKind { kSim, kTcp };

inline std::string_view to_string(TransportKind k) {
  return k == TransportKind::kSim ? "sim" : "tcp";
}

inline TransportKind parse_transport(std::string_view s) {
  if (s == "sim") return TransportKind::kSim;
  if (s == "tcp") return TransportKind::kTcp;
  throw InvalidParameterError("unknown transport '" + std::string(s) +
                              "' (expected sim|tcp)");
}

struct TrainingConfig {
  MechanismKind mechanism = MechanismKind::kDdpSa;
  std::size_t clients = 3;
  std::size_t servers = 3;
  double epsilon = 0.1;  // per round
  unsigned decimal_places = 10;
  std::size_t max_rounds = 3000;
  std::uint64_t seed = 0;
  std::size_t samples = 10'000;
  // Per-client minibatch, cycled over the shard; 0 means the whole shard.
  std::size_t batch_size = 64;
  double rel_tol = 1e-6;
  std::size_t patience = 50;  // 0 disables early stopping
  std::size_t warmup_rounds = 50;
  std::optional<double> clip_norm;  // skips warm-up calibration when set
  AllocationPlan::Strategy allocation = AllocationPlan::Strategy::kUniform;
  double alpha = 0.999;
  double delta_prime = 1e-4;
  TransportKind transport = TransportKind::kSim;
  std::chrono::milliseconds timeout = TcpTransport::kDefaultTimeout;
  Transport::DropFilter drop_filter;
  bool record_aggregates = true;

  void validate() const {
    if (clients == 0) throw InvalidParameterError("clients must be >= 1");
    if (uses_sharing(mechanism) && servers == 0) {
      throw InvalidParameterError("servers must be >= 1");
    }
    if (servers > 0xFFFF) throw InvalidParameterError("servers must be < 65536");
    if (max_rounds == 0) throw InvalidParameterError("max_rounds must be >= 1");
    if (!(epsilon > 0)) throw InvalidParameterError("epsilon must be > 0");
    if (!(rel_tol >= 0)) throw InvalidParameterError("rel_tol must be >= 0");
    if (!(delta_prime > 0 && delta_prime < 1)) {
      throw InvalidParameterError("delta_prime must lie in (0, 1)");
    }
    if (allocation == AllocationPlan::Strategy::kAdaptive &&
        !(alpha > 0 && alpha < 1)) {
      throw InvalidParameterError("alpha must lie in (0, 1)");
    }
    if (clip_norm && !(*clip_norm > 0 && std::isfinite(*clip_norm))) {
      throw InvalidParameterError("clip_norm must be finite and > 0");
    }
    if (uses_dp(mechanism) && !clip_norm && warmup_rounds == 0) {
      throw InvalidParameterError("warmup_rounds must be >= 1 without clip_norm");
    }
  }
};

inline OptimizerState::Kind optimizer_for(MechanismKind k) {
  if (uses_dp(k)) return Adam{};
  return Sgd{};
}

// The slice of `shard` a client uses in round `round_id`.
inline IndexRange batch_range(const IndexRange& shard, std::size_t batch_size,
                              std::uint64_t round_id) {
  if (batch_size == 0 || batch_size >= shard.size()) return shard;
  const std::size_t batches = shard.size() / batch_size;
  const std::size_t j = static_cast<std::size_t>(round_id % batches);
  const std::size_t b = shard.begin + j * batch_size;
  return {b, b + batch_size};
}

// Per-round epsilon values of a training run.
inline std::vector<double> round_budgets(const TrainingConfig& cfg) {
  if (cfg.allocation == AllocationPlan::Strategy::kAdaptive) {
    return allocate_budget(AllocationPlan::adaptive(
        cfg.epsilon * static_cast<double>(cfg.max_rounds), cfg.max_rounds,
        cfg.alpha));
  }
  return std::vector<double>(cfg.max_rounds, cfg.epsilon);
}

inline void check_budgets(const std::vector<double>& budgets) {
  for (double e : budgets) {
    if (!(e > 0) || !std::isfinite(e)) {
      throw InvalidParameterError(
          "per-round budget underflows to zero; raise alpha or lower max_rounds");
    }
  }
}

// A gradient that is allowed to leave a client. Only the DP mechanism and
// the explicit unprotected path can produce one, so every upload is a
// post-processing of one of them.
class ReleasedGradient {
 public:
  const GradientVector& value() const { return value_; }
  bool is_private() const { return private_; }

 private:
  ReleasedGradient(GradientVector v, bool priv)
      : value_(std::move(v)), private_(priv) {}

  friend ReleasedGradient release_private(const GradientVector&, std::size_t,
                                          const DpParams&, Rng&);
  friend ReleasedGradient release_unprotected(GradientVector);

  GradientVector value_;
  bool private_;
};

inline ReleasedGradient release_private(const GradientVector& sum_clipped,
                                        std::size_t n_samples,
                                        const DpParams& params, Rng& rng) {
  return {perturb_gradient(sum_clipped, n_samples, params, rng), true};
}

// No-Private and MPC: the gradient leaves the client as is.
inline ReleasedGradient release_unprotected(GradientVector g) {
  return {std::move(g), false};
}

// ---------------------------------------------------------------------------
// Client
// ---------------------------------------------------------------------------

struct ClientSetup {
  std::uint32_t id = 0;
  std::shared_ptr<const Dataset> data;
  IndexRange shard;
  MechanismKind mechanism = MechanismKind::kDdpSa;
  std::size_t servers = 3;
  std::size_t batch_size = 64;
  double clip_norm = 1.0;
  std::vector<double> budgets;  // epsilon per round, DP mechanisms only
  std::uint64_t seed = 0;
  std::optional<FixedPointCodec> codec;  // sharing mechanisms only
};

class ClientState {
 public:
  explicit ClientState(ClientSetup s)
      : setup_(std::move(s)),
        noise_rng_(make_stream(setup_.seed, {stream::kNoise, setup_.id})) {
    if (!setup_.data) throw InvalidParameterError("client has no dataset");
    if (setup_.shard.empty()) throw InvalidParameterError("client shard is empty");
    if (uses_sharing(setup_.mechanism) && !setup_.codec) {
      throw ConfigurationError("sharing mechanism needs a codec");
    }
    if (uses_dp(setup_.mechanism) && setup_.budgets.empty()) {
      throw ConfigurationError("DP mechanism needs a privacy budget");
    }
  }

  std::uint32_t id() const { return setup_.id; }
  std::uint64_t expected_round() const { return expected_round_; }
  std::uint64_t uplink_values() const { return uplink_values_; }
  const std::optional<ReleasedGradient>& last_release() const { return last_; }

  DpParams round_params(std::uint64_t round_id) const {
    const auto& b = setup_.budgets;
    const double eps = round_id < b.size() ? b[round_id] : b.back();
    return {eps, 0.0, setup_.clip_norm};
  }

  // Local gradient at theta for this round, released through the
  // mechanism. Consumes noise randomness for DP mechanisms.
  ReleasedGradient local_release(const ModelParams& theta, std::uint64_t round_id) {
    const Dataset& ds = *setup_.data;
    const IndexRange batch = batch_range(setup_.shard, setup_.batch_size, round_id);
    const bool dp = uses_dp(setup_.mechanism);
    GradientVector sum(ModelParams::kDimension);
    for (std::size_t i = batch.begin; i < batch.end; ++i) {
      GradientVector g = per_sample_gradient(theta, ds.features[i], ds.labels[i]);
      sum += dp ? clip_l1(g, setup_.clip_norm) : g;
    }
    if (dp) {
      return release_private(sum, batch.size(), round_params(round_id), noise_rng_);
    }
    return release_unprotected(sum / static_cast<double>(batch.size()));
  }

  // Upload messages carrying `g`: m ShareUploads or one plaintext upload.
  std::vector<RoundMessage> uploads_for(const ReleasedGradient& g,
                                        std::uint64_t round_id) const {
    std::vector<RoundMessage> out;
    if (!uses_sharing(setup_.mechanism)) {
      out.emplace_back(PlainGradientUpload{round_id, setup_.id, g.value().vec()});
      return out;
    }
    std::vector<FieldElement> encoded;
    encoded.reserve(g.value().size());
    for (double v : g.value().values()) encoded.push_back(setup_.codec->encode(v));
    ShareSet set =
        split_streamed(encoded, setup_.servers, setup_.seed, round_id, setup_.id);
    for (auto& share : set.shares) out.emplace_back(ShareUpload{std::move(share)});
    return out;
  }

  std::vector<RoundMessage> client_round(const ModelBroadcast& b) {
    if (b.round_id != expected_round_) {
      throw ProtocolDesyncError("client " + std::to_string(setup_.id) +
                                " expected round " +
                                std::to_string(expected_round_) + ", got " +
                                std::to_string(b.round_id));
    }
    const ModelParams theta = ModelParams::from_flat(b.theta);
    last_ = local_release(theta, b.round_id);
    auto out = uploads_for(*last_, b.round_id);
    for (const auto& m : out) {
      if (const auto* s = std::get_if<ShareUpload>(&m)) {
        uplink_values_ += s->share.dimension();
      } else {
        uplink_values_ += std::get<PlainGradientUpload>(m).gradient.size();
      }
    }
    ++expected_round_;
    return out;
  }

 private:
  ClientSetup setup_;
  Rng noise_rng_;
  std::uint64_t expected_round_ = 0;
  std::uint64_t uplink_values_ = 0;
  std::optional<ReleasedGradient> last_;
};

inline std::vector<RoundMessage> client_round(ClientState& state,
                                              const ModelBroadcast& broadcast) {
  return state.client_round(broadcast);
}

// ---------------------------------------------------------------------------
// Intermediate server
// ---------------------------------------------------------------------------

class IntermediateServerState {
 public:
  IntermediateServerState(std::uint16_t index, std::size_t clients)
      : index_(index), clients_(clients), seen_(clients, false) {
    if (clients == 0) throw InvalidParameterError("server expects >= 1 client");
  }

  std::uint16_t index() const { return index_; }
  std::uint64_t expected_round() const { return round_; }
  std::size_t received() const { return pending_.size(); }
  std::size_t expected_clients() const { return clients_; }

  // Accumulates one client's share; returns the partial sum once all n
  // clients of the round have uploaded.
  std::optional<PartialSum> accept(const ShareUpload& upload) {
    const ShareVector& s = upload.share;
    if (s.server_index != index_) {
      throw ProtocolError("server " + std::to_string(index_) +
                          " received a share for server " +
                          std::to_string(s.server_index));
    }
    if (s.round_id != round_) {
      throw ProtocolDesyncError("server " + std::to_string(index_) +
                                " expected round " + std::to_string(round_) +
                                ", got " + std::to_string(s.round_id));
    }
    if (s.client_id >= clients_) {
      throw ProtocolError("unknown client " + std::to_string(s.client_id));
    }
    if (seen_[s.client_id]) {
      throw ProtocolError("duplicate share from client " +
                          std::to_string(s.client_id) + " in round " +
                          std::to_string(round_));
    }
    seen_[s.client_id] = true;
    pending_.push_back(s);
    if (pending_.size() < clients_) return std::nullopt;
    ShareVector agg = aggregate_shares(pending_);
    pending_.clear();
    std::fill(seen_.begin(), seen_.end(), false);
    ++round_;
    return PartialSum{agg.round_id, index_, std::move(agg.elements)};
  }

 private:
  std::uint16_t index_;
  std::size_t clients_;
  std::uint64_t round_ = 0;
  std::vector<ShareVector> pending_;
  std::vector<bool> seen_;
};

inline PartialSum server_round(IntermediateServerState& state,
                               std::span<const ShareUpload> uploads) {
  std::optional<PartialSum> out;
  for (const auto& u : uploads) {
    if (out) throw ProtocolError("uploads beyond the round's client count");
    out = state.accept(u);
  }
  if (!out) {
    throw IncompleteRoundError("server " + std::to_string(state.index()) +
                               " has " + std::to_string(state.received()) +
                               " of " + std::to_string(state.expected_clients()) +
                               " shares");
  }
  return *out;
}

// ---------------------------------------------------------------------------
// Parameter server
// ---------------------------------------------------------------------------

struct ParameterServerSetup {
  MechanismKind mechanism = MechanismKind::kDdpSa;
  std::size_t clients = 3;
  std::size_t servers = 3;
  std::optional<FixedPointCodec> codec;
  ModelParams initial;
  double clip_norm = 1.0;
  std::vector<double> budgets;
  double delta_prime = 1e-4;
};

struct RoundResult {
  std::uint64_t round_id = 0;
  std::vector<double> aggregate_sum;  // decoded sum over clients
  GradientVector direction;           // aggregate_sum / n
  ModelParams params;                 // after the update
};

class ParameterServerState {
 public:
  explicit ParameterServerState(ParameterServerSetup s)
      : setup_(std::move(s)),
        params_(setup_.initial),
        optimizer_(optimizer_for(setup_.mechanism)),
        ledger_(setup_.delta_prime) {
    if (uses_sharing(setup_.mechanism) && !setup_.codec) {
      throw ConfigurationError("sharing mechanism needs a codec");
    }
    expected_ = uses_sharing(setup_.mechanism) ? setup_.servers : setup_.clients;
    slots_.resize(expected_);
  }

  std::uint64_t round() const { return round_; }
  const ModelParams& params() const { return params_; }
  const PrivacyLedger& ledger() const { return ledger_; }
  std::size_t expected_inputs() const { return expected_; }
  std::size_t received() const { return received_; }

  ModelBroadcast broadcast() const { return {round_, params_.flat()}; }

  // Takes one PartialSum (sharing mechanisms) or PlainGradientUpload
  // (plaintext mechanisms). Returns the round result once complete.
  std::optional<RoundResult> accept(const RoundMessage& msg) {
    const bool sharing = uses_sharing(setup_.mechanism);
    std::size_t slot = 0;
    if (const auto* ps = std::get_if<PartialSum>(&msg); ps && sharing) {
      slot = ps->server_index;
    } else if (const auto* pu = std::get_if<PlainGradientUpload>(&msg);
               pu && !sharing) {
      slot = pu->client_id;
    } else {
      throw ProtocolError("parameter server cannot accept " +
                          std::string(message_name(msg)) + " under " +
                          std::string(to_string(setup_.mechanism)));
    }
    if (round_of(msg) != round_) {
      throw ProtocolDesyncError("parameter server expected round " +
                                std::to_string(round_) + ", got " +
                                std::to_string(round_of(msg)));
    }
    if (slot >= expected_) {
      throw ProtocolError("input index " + std::to_string(slot) + " out of range");
    }
    if (slots_[slot]) {
      throw ProtocolError("duplicate input " + std::to_string(slot) +
                          " in round " + std::to_string(round_));
    }
    slots_[slot] = msg;
    if (++received_ < expected_) return std::nullopt;
    return finish_round();
  }

 private:
  std::vector<double> aggregate_plain() const {
    std::vector<double> sum(ModelParams::kDimension, 0.0);
    for (const auto& s : slots_) {
      const auto& g = std::get<PlainGradientUpload>(*s).gradient;
      if (g.size() != sum.size()) throw ProtocolError("gradient dimension mismatch");
      for (std::size_t k = 0; k < sum.size(); ++k) sum[k] += g[k];
    }
    return sum;
  }

  std::vector<double> aggregate_shared() const {
    ShareSet set;
    set.server_count = expected_;
    for (const auto& s : slots_) {
      const auto& p = std::get<PartialSum>(*s);
      set.shares.push_back({p.server_index, p.elements, p.round_id, kAggregatedClient});
    }
    const auto total = reconstruct(set);
    if (total.size() != ModelParams::kDimension) {
      throw ProtocolError("aggregate dimension mismatch");
    }
    const FixedPointCodec& codec = *setup_.codec;
    const double limit = static_cast<double>(setup_.clients) *
                         codec.bounds().max_abs_value;
    std::vector<double> sum;
    for (const auto& e : total) {
      const double v = codec.decode(e);
      if (std::fabs(v) > limit) {
        throw WraparoundFaultError("decoded aggregate " + std::to_string(v) +
                                   " exceeds n * V_max = " +
                                   std::to_string(limit) +
                                   "; the field sum wrapped around p");
      }
      sum.push_back(v);
    }
    return sum;
  }

  RoundResult finish_round() {
    RoundResult r;
    r.round_id = round_;
    r.aggregate_sum =
        uses_sharing(setup_.mechanism) ? aggregate_shared() : aggregate_plain();
    r.direction = GradientVector(r.aggregate_sum) /
                  static_cast<double>(setup_.clients);
    params_ = apply_update(params_, optimizer_, r.direction);
    r.params = params_;
    if (uses_dp(setup_.mechanism)) {
      const auto& b = setup_.budgets;
      ledger_.append({round_ < b.size() ? b[round_] : b.back(), 0.0,
                      setup_.clip_norm});
    }
    for (auto& s : slots_) s.reset();
    received_ = 0;
    ++round_;
    return r;
  }

  ParameterServerSetup setup_;
  ModelParams params_;
  OptimizerState optimizer_;
  PrivacyLedger ledger_;
  std::uint64_t round_ = 0;
  std::size_t expected_ = 0;
  std::size_t received_ = 0;
  std::vector<std::optional<RoundMessage>> slots_;
};

inline ModelBroadcast ps_round(ParameterServerState& state,
                               std::span<const RoundMessage> inputs) {
  std::optional<RoundResult> done;
  for (const auto& m : inputs) {
    if (done) throw ProtocolError("inputs beyond the round's expected count");
    done = state.accept(m);
  }
  if (!done) {
    throw IncompleteRoundError("parameter server has " +
                               std::to_string(state.received()) + " of " +
                               std::to_string(state.expected_inputs()) +
                               " inputs for round " +
                               std::to_string(state.round()));
  }
  return state.broadcast();
}

// ---------------------------------------------------------------------------
// Role nodes: message-driven wrappers that address outgoing messages.
// ---------------------------------------------------------------------------

struct Envelope {
  Endpoint to;
  RoundMessage msg;
};

class RoleNode {
 public:
  virtual ~RoleNode() = default;
  virtual Endpoint endpoint() const = 0;
  virtual std::vector<Envelope> start() { return {}; }
  virtual std::vector<Envelope> handle(const RoundMessage& msg) = 0;
  virtual bool finished() const = 0;
  // True when part of the current round's inputs has arrived.
  virtual bool holds_partial_input() const { return false; }
  virtual std::string status() const = 0;
};

// Sees each client's released gradient before it is uploaded.
using ReleaseAudit = std::function<void(std::uint32_t client, std::uint64_t round,
                                        const GradientVector& released,
                                        std::size_t values_uploaded)>;

class ClientNode final : public RoleNode {
 public:
  ClientNode(ClientState state, ReleaseAudit audit = {})
      : state_(std::move(state)), audit_(std::move(audit)) {}

  Endpoint endpoint() const override { return Endpoint::client(state_.id()); }
  bool finished() const override { return done_; }
  const ClientState& state() const { return state_; }

  std::vector<Envelope> handle(const RoundMessage& msg) override {
    if (std::holds_alternative<RoundAck>(msg)) {
      done_ = true;
      return {};
    }
    const auto* b = std::get_if<ModelBroadcast>(&msg);
    if (!b) {
      throw ProtocolError("client cannot accept " + std::string(message_name(msg)));
    }
    const auto before = state_.uplink_values();
    auto uploads = state_.client_round(*b);
    if (audit_) {
      audit_(state_.id(), b->round_id, state_.last_release()->value(),
             static_cast<std::size_t>(state_.uplink_values() - before));
    }
    std::vector<Envelope> out;
    for (auto& m : uploads) {
      const Endpoint to =
          std::holds_alternative<ShareUpload>(m)
              ? Endpoint::intermediate(std::get<ShareUpload>(m).share.server_index)
              : Endpoint::parameter_server();
      out.push_back({to, std::move(m)});
    }
    return out;
  }

  std::string status() const override {
    return to_string(endpoint()) + " waiting for broadcast of round " +
           std::to_string(state_.expected_round());
  }

 private:
  ClientState state_;
  ReleaseAudit audit_;
  bool done_ = false;
};

class IntermediateServerNode final : public RoleNode {
 public:
  explicit IntermediateServerNode(IntermediateServerState state)
      : state_(std::move(state)) {}

  Endpoint endpoint() const override { return Endpoint::intermediate(state_.index()); }
  bool finished() const override { return done_; }
  bool holds_partial_input() const override { return state_.received() > 0; }

  std::vector<Envelope> handle(const RoundMessage& msg) override {
    if (std::holds_alternative<RoundAck>(msg)) {
      done_ = true;
      return {};
    }
    const auto* u = std::get_if<ShareUpload>(&msg);
    if (!u) {
      throw ProtocolError("intermediate server cannot accept " +
                          std::string(message_name(msg)));
    }
    std::vector<Envelope> out;
    if (auto partial = state_.accept(*u)) {
      out.push_back({Endpoint::parameter_server(), std::move(*partial)});
    }
    return out;
  }

  std::string status() const override {
    return to_string(endpoint()) + " has " + std::to_string(state_.received()) +
           " of " + std::to_string(state_.expected_clients()) +
           " shares for round " + std::to_string(state_.expected_round());
  }

 private:
  IntermediateServerState state_;
  bool done_ = false;
};

// Called by the parameter server after every update; returning true ends
// training after this round.
using RoundObserver = std::function<bool(const RoundResult&)>;

class ParameterServerNode final : public RoleNode {
 public:
  ParameterServerNode(ParameterServerState state, std::size_t clients,
                      std::size_t servers, std::size_t max_rounds,
                      RoundObserver observer)
      : state_(std::move(state)),
        clients_(clients),
        servers_(servers),
        max_rounds_(max_rounds),
        observer_(std::move(observer)) {}

  Endpoint endpoint() const override { return Endpoint::parameter_server(); }
  bool finished() const override { return done_; }
  bool holds_partial_input() const override { return state_.received() > 0; }
  const ParameterServerState& state() const { return state_; }

  // Count of every message type the parameter server has received, indexed
  // by wire type - 1.
  const std::array<std::uint64_t, 5>& observed() const { return observed_; }

  std::vector<Envelope> start() override { return broadcast(); }

  std::vector<Envelope> handle(const RoundMessage& msg) override {
    ++observed_[msg.index()];
    auto result = state_.accept(msg);
    if (!result) return {};
    const bool stop = (observer_ && observer_(*result)) ||
                      state_.round() >= max_rounds_;
    if (!stop) return broadcast();
    done_ = true;
    std::vector<Envelope> out;
    const RoundAck ack{result->round_id};
    for (std::size_t i = 0; i < clients_; ++i) {
      out.push_back({Endpoint::client(static_cast<std::uint32_t>(i)), ack});
    }
    for (std::size_t j = 0; j < servers_; ++j) {
      out.push_back({Endpoint::intermediate(static_cast<std::uint32_t>(j)), ack});
    }
    return out;
  }

  std::string status() const override {
    return "parameter_server has " + std::to_string(state_.received()) + " of " +
           std::to_string(state_.expected_inputs()) + " inputs for round " +
           std::to_string(state_.round());
  }

 private:
  std::vector<Envelope> broadcast() const {
    std::vector<Envelope> out;
    const ModelBroadcast b = state_.broadcast();
    for (std::size_t i = 0; i < clients_; ++i) {
      out.push_back({Endpoint::client(static_cast<std::uint32_t>(i)), b});
    }
    return out;
  }

  ParameterServerState state_;
  std::size_t clients_;
  std::size_t servers_;
  std::size_t max_rounds_;
  RoundObserver observer_;
  std::array<std::uint64_t, 5> observed_{};
  bool done_ = false;
};

// Nodes holding part of a round's inputs, or every unfinished node when
// none does.
inline std::vector<const RoleNode*> stalled_nodes(
    const std::vector<RoleNode*>& nodes) {
  std::vector<const RoleNode*> out;
  for (const RoleNode* n : nodes) {
    if (!n->finished() && n->holds_partial_input()) out.push_back(n);
  }
  if (out.empty()) {
    for (const RoleNode* n : nodes) {
      if (!n->finished()) out.push_back(n);
    }
  }
  return out;
}

inline std::string describe_stall(const std::vector<const RoleNode*>& stalled) {
  std::string s = "round cannot complete:";
  for (const RoleNode* n : stalled) s += " [" + n->status() + "]";
  return s;
}

// Drives nodes over the in-process transport on the calling thread. Inboxes
// are drained in node order until every node has finished; a pass that
// delivers nothing means some input will never arrive.
inline void run_simulated(InProcessTransport& transport,
                          const std::vector<RoleNode*>& nodes) {
  auto dispatch = [&transport](RoleNode& node, std::vector<Envelope> out) {
    for (auto& e : out) transport.send(node.endpoint(), e.to, e.msg);
  };
  for (RoleNode* n : nodes) dispatch(*n, n->start());
  for (;;) {
    if (std::all_of(nodes.begin(), nodes.end(),
                    [](const RoleNode* n) { return n->finished(); })) {
      return;
    }
    bool progress = false;
    for (RoleNode* n : nodes) {
      while (auto msg = transport.try_receive(n->endpoint())) {
        dispatch(*n, n->handle(*msg));
        progress = true;
      }
    }
    if (!progress) throw IncompleteRoundError(describe_stall(stalled_nodes(nodes)));
  }
}

// One thread per node over any blocking transport. The first failure closes
// the transport so the other threads unwind, and is rethrown here. A
// receive timeout is reported as an incomplete round.
inline void run_threaded(Transport& transport, const std::vector<RoleNode*>& nodes,
                         std::chrono::milliseconds timeout) {
  std::mutex mu;
  std::exception_ptr first;
  auto fail = [&](std::exception_ptr e) {
    {
      std::lock_guard lock(mu);
      if (first) return;
      first = std::move(e);
    }
    transport.close();
  };
  std::vector<std::thread> threads;
  threads.reserve(nodes.size());
  for (RoleNode* node : nodes) {
    threads.emplace_back([&, node] {
      try {
        auto dispatch = [&](std::vector<Envelope> out) {
          for (auto& e : out) transport.send(node->endpoint(), e.to, e.msg);
        };
        dispatch(node->start());
        while (!node->finished()) {
          RoundMessage msg;
          try {
            msg = transport.receive(node->endpoint(), timeout);
          } catch (const TimeoutError& e) {
            throw IncompleteRoundError(node->status() + " (" + e.what() + ")");
          }
          dispatch(node->handle(msg));
        }
      } catch (...) {
        fail(std::current_exception());
      }
    });
  }
  for (auto& t : threads) t.join();
  if (first) std::rethrow_exception(first);
}

// ---------------------------------------------------------------------------
// Training runs
// ---------------------------------------------------------------------------

struct MetricsRow {
  std::size_t round = 0;  // completed rounds, from 1
  double train_loss = 0.0;
  double val_loss = 0.0;
  double test_loss = 0.0;
  double test_r2 = 0.0;
  std::size_t uplink_values_per_client = 0;
  double wall_ms = 0.0;
};

struct TrainingReport {
  MechanismKind mechanism = MechanismKind::kDdpSa;
  std::size_t clients = 0;
  std::size_t servers = 0;  // 0 for plaintext mechanisms
  std::uint64_t seed = 0;
  std::uint64_t scale_factor = 0;

  std::vector<MetricsRow> rows;
  // Per round: the sum the parameter server decoded, and the plaintext sum
  // of the gradients the clients released (client-side audit).
  std::vector<std::vector<double>> aggregate_sums;
  std::vector<std::vector<double>> released_sums;
  // Per round, per client: the released gradient.
  std::vector<std::vector<GradientVector>> client_releases;

  ModelParams final_params;
  double final_test_loss = std::numeric_limits<double>::quiet_NaN();
  double final_test_r2 = std::numeric_limits<double>::quiet_NaN();
  std::size_t rounds_run = 0;
  std::size_t rounds_to_convergence = 0;
  bool converged = false;

  std::vector<std::uint64_t> uplink_values;  // total per client
  std::size_t uplink_values_per_client = 0;  // per client per round
  double wall_ms = 0.0;

  double clip_norm = 0.0;  // 0 when no clipping is applied
  bool is_private = false;
  PrivacyTotals basic{std::numeric_limits<double>::infinity(), 0.0};
  PrivacyTotals advanced{std::numeric_limits<double>::infinity(), 0.0};

  std::array<std::uint64_t, 5> ps_observed{};
  std::vector<Endpoint> stalled;
};

// Transport or protocol failure during training. Carries everything
// recorded up to the failure and the original exception.
class RunAbortedError : public Error {
 public:
  RunAbortedError(const std::string& what, TrainingReport partial,
                  std::exception_ptr cause)
      : Error("training aborted: " + what),
        partial_(std::make_shared<TrainingReport>(std::move(partial))),
        cause_(std::move(cause)) {}

  const TrainingReport& partial_report() const { return *partial_; }
  std::exception_ptr cause() const { return cause_; }
  [[noreturn]] void rethrow_cause() const { std::rethrow_exception(cause_); }

 private:
  std::shared_ptr<TrainingReport> partial_;
  std::exception_ptr cause_;
};

// Sensitivity bound from W non-private warm-up rounds on a throwaway model:
// the median per-sample L1 norm of the unclipped gradients seen.
inline double calibrate_clip_norm(const Dataset& ds,
                                  const std::vector<IndexRange>& shards,
                                  const TrainingConfig& cfg) {
  OptimizerState opt(optimizer_for(cfg.mechanism));
  ModelParams theta;
  std::vector<double> norms;
  for (std::size_t t = 0; t < cfg.warmup_rounds; ++t) {
    GradientVector direction(ModelParams::kDimension);
    for (const auto& shard : shards) {
      const IndexRange batch = batch_range(shard, cfg.batch_size, t);
      GradientVector sum(ModelParams::kDimension);
      for (std::size_t i = batch.begin; i < batch.end; ++i) {
        GradientVector g = per_sample_gradient(theta, ds.features[i], ds.labels[i]);
        norms.push_back(g.l1_norm());
        sum += g;
      }
      direction += sum / static_cast<double>(batch.size());
    }
    direction /= static_cast<double>(shards.size());
    theta = apply_update(theta, opt, direction);
  }
  return calibrate_sensitivity(std::move(norms));
}

namespace detail {

// Evaluates each round, applies the stopping rule and keeps the audit
// record. The parameter server's observer and the clients' audit hook
// feed it; it never hands anything back to the roles.
class RunRecorder {
 public:
  RunRecorder(const TrainingConfig& cfg, std::shared_ptr<const Dataset> data,
              TrainingReport& report)
      : cfg_(cfg), data_(std::move(data)), report_(report),
        start_(std::chrono::steady_clock::now()) {}

  void on_release(std::uint32_t client, std::uint64_t round,
                  const GradientVector& g, std::size_t values) {
    std::lock_guard lock(mu_);
    auto& slot = releases_[round];
    if (slot.empty()) slot.resize(cfg_.clients, GradientVector(0));
    slot[client] = g;
    auto& v = uplink_[round];
    v = std::max(v, values);
  }

  bool on_round(const RoundResult& r) {
    const Dataset& ds = *data_;
    MetricsRow row;
    row.round = static_cast<std::size_t>(r.round_id) + 1;
    row.train_loss = mse(r.params, ds, ds.train);
    row.val_loss = mse(r.params, ds, ds.validation);
    const EvalResult test = evaluate(r.params, ds, ds.test);
    row.test_loss = test.mse;
    row.test_r2 = test.r_squared;
    {
      std::lock_guard lock(mu_);
      row.uplink_values_per_client = uplink_[r.round_id];
    }
    row.wall_ms = elapsed_ms();
    report_.rows.push_back(row);
    if (cfg_.record_aggregates) report_.aggregate_sums.push_back(r.aggregate_sum);
    report_.final_params = r.params;

    if (row.val_loss < best_ * (1.0 - cfg_.rel_tol)) {
      best_ = row.val_loss;
      last_improved_ = row.round;
      since_ = 0;
      return false;
    }
    ++since_;
    if (cfg_.patience > 0 && since_ >= cfg_.patience) {
      converged_ = true;
      return true;
    }
    return false;
  }

  double elapsed_ms() const {
    return std::chrono::duration<double, std::milli>(
               std::chrono::steady_clock::now() - start_)
        .count();
  }

  // Fills the derived report fields from what has been recorded.
  void finish() {
    TrainingReport& rep = report_;
    rep.rounds_run = rep.rows.size();
    rep.converged = converged_;
    rep.rounds_to_convergence = converged_ ? last_improved_ + 1 : rep.rounds_run;
    if (!rep.rows.empty()) {
      rep.final_test_loss = rep.rows.back().test_loss;
      rep.final_test_r2 = rep.rows.back().test_r2;
    }
    rep.wall_ms = elapsed_ms();
    std::lock_guard lock(mu_);
    if (!cfg_.record_aggregates) return;
    for (std::size_t t = 0; t < rep.rounds_run; ++t) {
      auto it = releases_.find(t);
      if (it == releases_.end()) break;
      std::vector<double> sum(ModelParams::kDimension, 0.0);
      for (const auto& g : it->second) {
        for (std::size_t k = 0; k < g.size(); ++k) sum[k] += g[k];
      }
      rep.released_sums.push_back(std::move(sum));
      rep.client_releases.push_back(it->second);
    }
  }

 private:
  const TrainingConfig& cfg_;
  std::shared_ptr<const Dataset> data_;
  TrainingReport& report_;
  std::chrono::steady_clock::time_point start_;
  std::mutex mu_;
  std::map<std::uint64_t, std::vector<GradientVector>> releases_;
  std::map<std::uint64_t, std::size_t> uplink_;
  double best_ = std::numeric_limits<double>::infinity();
  std::size_t last_improved_ = 0;
  std::size_t since_ = 0;
  bool converged_ = false;
};

// Builds the role topology for one run and executes it on `transport`.
inline TrainingReport run_on(const TrainingConfig& cfg, Transport& transport,
                             bool simulated) {
  cfg.validate();
  const bool sharing = uses_sharing(cfg.mechanism);
  const bool dp = uses_dp(cfg.mechanism);
  const PrimeModulus modulus = PrimeModulus::mersenne127();
  std::optional<FixedPointCodec> codec;
  if (sharing) codec.emplace(modulus, cfg.decimal_places);
  if (cfg.clients > CodecBounds{}.max_clients) {
    throw ConfigurationError("client count exceeds the codec's n_max");
  }

  auto data = std::make_shared<const Dataset>(generate_dataset(cfg.samples, cfg.seed));
  const auto shards = partition_iid(data->train, cfg.clients);
  double clip = 0.0;
  if (dp) clip = cfg.clip_norm ? *cfg.clip_norm : calibrate_clip_norm(*data, shards, cfg);
  const std::vector<double> budgets = dp ? round_budgets(cfg) : std::vector<double>{};
  check_budgets(budgets);
  const std::size_t servers = sharing ? cfg.servers : 0;

  TrainingReport report;
  report.mechanism = cfg.mechanism;
  report.clients = cfg.clients;
  report.servers = servers;
  report.seed = cfg.seed;
  report.scale_factor = codec ? codec->scale_factor() : 0;
  report.clip_norm = clip;
  report.is_private = dp;
  RunRecorder recorder(cfg, data, report);

  std::vector<std::unique_ptr<ClientNode>> clients;
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    ClientSetup s;
    s.id = static_cast<std::uint32_t>(i);
    s.data = data;
    s.shard = shards[i];
    s.mechanism = cfg.mechanism;
    s.servers = servers;
    s.batch_size = cfg.batch_size;
    s.clip_norm = dp ? clip : 1.0;
    s.budgets = budgets;
    s.seed = cfg.seed;
    s.codec = codec;
    clients.push_back(std::make_unique<ClientNode>(
        ClientState(std::move(s)),
        [&recorder](std::uint32_t c, std::uint64_t r, const GradientVector& g,
                    std::size_t v) { recorder.on_release(c, r, g, v); }));
  }
  std::vector<std::unique_ptr<IntermediateServerNode>> intermediates;
  for (std::size_t j = 0; j < servers; ++j) {
    intermediates.push_back(std::make_unique<IntermediateServerNode>(
        IntermediateServerState(static_cast<std::uint16_t>(j), cfg.clients)));
  }
  ParameterServerSetup ps;
  ps.mechanism = cfg.mechanism;
  ps.clients = cfg.clients;
  ps.servers = servers;
  ps.codec = codec;
  ps.clip_norm = dp ? clip : 1.0;
  ps.budgets = budgets;
  ps.delta_prime = cfg.delta_prime;
  ParameterServerNode server(ParameterServerState(std::move(ps)), cfg.clients,
                             servers, cfg.max_rounds,
                             [&recorder](const RoundResult& r) {
                               return recorder.on_round(r);
                             });

  std::vector<RoleNode*> nodes{&server};
  for (auto& n : intermediates) nodes.push_back(n.get());
  for (auto& n : clients) nodes.push_back(n.get());

  auto finalize = [&] {
    recorder.finish();
    report.ps_observed = server.observed();
    report.uplink_values.clear();
    for (auto& c : clients) report.uplink_values.push_back(c->state().uplink_values());
    if (report.rounds_run > 0) {
      report.uplink_values_per_client = static_cast<std::size_t>(
          report.uplink_values.front() / report.rounds_run);
    }
    const PrivacyLedger& ledger = server.state().ledger();
    if (dp && !ledger.empty()) {
      report.basic = compose_basic(ledger);
      report.advanced = compose_advanced(ledger);
    }
  };

  try {
    if (simulated) {
      run_simulated(static_cast<InProcessTransport&>(transport), nodes);
    } else {
      run_threaded(transport, nodes, cfg.timeout);
    }
  } catch (const Error& e) {
    const auto cause = std::current_exception();
    transport.close();
    finalize();
    for (const RoleNode* n : stalled_nodes(nodes)) {
      report.stalled.push_back(n->endpoint());
    }
    throw RunAbortedError(e.what(), std::move(report), cause);
  }
  finalize();
  return report;
}

}  // namespace detail

// Runs over a caller-owned in-process transport (lets tests install taps
// or filters before training starts).
inline TrainingReport run_training(const TrainingConfig& cfg,
                                   InProcessTransport& transport) {
  if (cfg.drop_filter) transport.set_drop_filter(cfg.drop_filter);
  return detail::run_on(cfg, transport, true);
}

inline TrainingReport run_training(const TrainingConfig& cfg) {
  cfg.validate();
  const PrimeModulus modulus = PrimeModulus::mersenne127();
  if (cfg.transport == TransportKind::kSim) {
    InProcessTransport transport(modulus);
    return run_training(cfg, transport);
  }
  TcpTransport transport(modulus, cfg.timeout);
  if (cfg.drop_filter) transport.set_drop_filter(cfg.drop_filter);
  transport.listen(Endpoint::parameter_server());
  if (uses_sharing(cfg.mechanism)) {
    for (std::size_t j = 0; j < cfg.servers; ++j) {
      transport.listen(Endpoint::intermediate(static_cast<std::uint32_t>(j)));
    }
  }
  for (std::size_t i = 0; i < cfg.clients; ++i) {
    transport.listen(Endpoint::client(static_cast<std::uint32_t>(i)));
  }
  return detail::run_on(cfg, transport, false);
}

}  // namespace ddpsa
