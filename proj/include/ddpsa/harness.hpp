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
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <limits>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "json.hpp"

#include "ddpsa/errors.hpp"
#include "ddpsa/learning.hpp"
#include "ddpsa/messages.hpp"
#include "ddpsa/privacy.hpp"
#include "ddpsa/protocol.hpp"
#include "ddpsa/transport.hpp"

namespace ddpsa {

inline constexpr std::size_t kDefaultServers = 3;
inline constexpr std::size_t kDefaultSweepRepeats = 5;

struct ExperimentConfig {
  MechanismKind mechanism = MechanismKind::kDdpSa;
  std::size_t clients = 3;
  // Only meaningful for sharing mechanisms; unset means kDefaultServers.
  std::optional<std::size_t> servers;
  double epsilon = 0.1;
  unsigned decimal_places = 10;
  std::size_t max_rounds = 3000;
  std::uint64_t seed = 0;
  std::size_t repeats = 1;
  TransportKind transport = TransportKind::kSim;
  double rel_tol = 1e-6;
  std::size_t patience = 50;
  std::size_t warmup_rounds = 50;
  std::size_t batch_size = 64;
  std::size_t samples = 10'000;
  AllocationPlan::Strategy allocation = AllocationPlan::Strategy::kUniform;
  double alpha = 0.999;
  double delta_prime = 1e-4;
  std::chrono::milliseconds timeout = TcpTransport::kDefaultTimeout;
  std::filesystem::path out;  // empty: write nothing
  bool timing = false;        // adds wall_ms to rounds.csv

  void validate() const {
    if (servers && !uses_sharing(mechanism)) {
      throw UsageError("--servers only applies to mpc and ddp_sa, not " +
                       std::string(to_string(mechanism)));
    }
    if (repeats == 0) throw UsageError("--repeats must be >= 1");
  }

  std::size_t effective_servers() const {
    return uses_sharing(mechanism) ? servers.value_or(kDefaultServers) : 0;
  }

  TrainingConfig training(std::uint64_t run_seed) const {
    TrainingConfig t;
    t.mechanism = mechanism;
    t.clients = clients;
    t.servers = effective_servers();
    t.epsilon = epsilon;
    t.decimal_places = decimal_places;
    t.max_rounds = max_rounds;
    t.seed = run_seed;
    t.samples = samples;
    t.batch_size = batch_size;
    t.rel_tol = rel_tol;
    t.patience = patience;
    t.warmup_rounds = warmup_rounds;
    t.allocation = allocation;
    t.alpha = alpha;
    t.delta_prime = delta_prime;
    t.transport = transport;
    t.timeout = timeout;
    return t;
  }
};

// Shortest decimal text that reads back to the same double.
inline std::string format_double(double v) {
  if (std::isnan(v)) return "nan";
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  char buf[32];
  for (int precision = 15; precision <= 17; ++precision) {
    std::snprintf(buf, sizeof buf, "%.*g", precision, v);
    if (std::strtod(buf, nullptr) == v) break;
  }
  return buf;
}

inline void write_rounds_csv(std::ostream& os, const TrainingReport& r,
                             bool timing) {
  os << "round,train_loss,val_loss,test_loss,test_r2,uplink_values_per_client";
  if (timing) os << ",wall_ms";
  os << '\n';
  for (const auto& row : r.rows) {
    os << row.round << ',' << format_double(row.train_loss) << ','
       << format_double(row.val_loss) << ',' << format_double(row.test_loss) << ','
       << format_double(row.test_r2) << ',' << row.uplink_values_per_client;
    if (timing) os << ',' << format_double(row.wall_ms);
    os << '\n';
  }
}

struct RunOutcome {
  std::vector<TrainingReport> reports;  // one per seed
  double mean_test_loss = 0.0;
  double mean_test_r2 = 0.0;
  double mean_rounds_to_convergence = 0.0;
  std::size_t uplink_values_per_client = 0;
  nlohmann::json summary;
};

namespace detail {

inline nlohmann::json number_or_null(double v) {
  if (!std::isfinite(v)) return nullptr;
  return v;
}

inline nlohmann::json summarize(const ExperimentConfig& cfg, const RunOutcome& o) {
  using nlohmann::json;
  json runs = json::array();
  for (const auto& r : o.reports) {
    runs.push_back({{"seed", r.seed},
                    {"test_loss", number_or_null(r.final_test_loss)},
                    {"test_r2", number_or_null(r.final_test_r2)},
                    {"rounds_run", r.rounds_run},
                    {"rounds_to_convergence", r.rounds_to_convergence},
                    {"converged", r.converged},
                    {"clip_norm", r.is_private ? json(r.clip_norm) : json(nullptr)},
                    {"wall_ms", r.wall_ms}});
  }
  const TrainingReport& first = o.reports.front();
  json privacy = {{"private", first.is_private},
                  {"delta_prime", cfg.delta_prime},
                  {"per_round_epsilon", first.is_private ? json(cfg.epsilon) : json(nullptr)},
                  {"basic", {{"epsilon", number_or_null(first.basic.epsilon)},
                             {"delta", first.basic.delta}}},
                  {"advanced", {{"epsilon", number_or_null(first.advanced.epsilon)},
                                {"delta", first.advanced.delta}}}};
  return {{"mechanism", to_string(cfg.mechanism)},
          {"clients", cfg.clients},
          {"servers", uses_sharing(cfg.mechanism) ? json(cfg.effective_servers())
                                                  : json(nullptr)},
          {"epsilon", cfg.epsilon},
          {"decimal_places", cfg.decimal_places},
          {"max_rounds", cfg.max_rounds},
          {"batch_size", cfg.batch_size},
          {"seed", cfg.seed},
          {"repeats", cfg.repeats},
          {"transport", to_string(cfg.transport)},
          {"uplink_values_per_client", o.uplink_values_per_client},
          {"mean_test_loss", number_or_null(o.mean_test_loss)},
          {"mean_test_r2", number_or_null(o.mean_test_r2)},
          {"mean_rounds_to_convergence", o.mean_rounds_to_convergence},
          {"privacy", privacy},
          {"runs", runs}};
}

inline std::ofstream open_output(const std::filesystem::path& p) {
  if (p.has_parent_path()) std::filesystem::create_directories(p.parent_path());
  std::ofstream f(p, std::ios::binary);
  if (!f) throw Error("cannot write " + p.string());
  return f;
}

}  // namespace detail

// Runs seeds seed .. seed+repeats-1 and averages the final metrics.
// Writes <out>/rounds.csv (first seed) and <out>/summary.json.
inline RunOutcome cmd_run(const ExperimentConfig& cfg) {
  cfg.validate();
  RunOutcome o;
  for (std::size_t k = 0; k < cfg.repeats; ++k) {
    o.reports.push_back(run_training(cfg.training(cfg.seed + k)));
  }
  const double r = static_cast<double>(o.reports.size());
  for (const auto& rep : o.reports) {
    o.mean_test_loss += rep.final_test_loss / r;
    o.mean_test_r2 += rep.final_test_r2 / r;
    o.mean_rounds_to_convergence += static_cast<double>(rep.rounds_to_convergence) / r;
  }
  o.uplink_values_per_client = o.reports.front().uplink_values_per_client;
  o.summary = detail::summarize(cfg, o);
  if (!cfg.out.empty()) {
    auto csv = detail::open_output(cfg.out / "rounds.csv");
    write_rounds_csv(csv, o.reports.front(), cfg.timing);
    auto js = detail::open_output(cfg.out / "summary.json");
    js << o.summary.dump(2) << '\n';
  }
  return o;
}

enum class SweepAxis { kEpsilon, kClients };

inline SweepAxis parse_axis(std::string_view s) {
  if (s == "epsilon") return SweepAxis::kEpsilon;
  if (s == "clients") return SweepAxis::kClients;
  throw UsageError("unknown sweep axis '" + std::string(s) +
                   "' (expected epsilon|clients)");
}

inline std::vector<double> default_axis_values(SweepAxis axis) {
  if (axis == SweepAxis::kEpsilon) return {0.1, 0.2, 0.3, 0.4, 0.5, 0.6};
  return {2, 3, 4, 5, 6};
}

struct SweepConfig {
  ExperimentConfig base;
  SweepAxis axis = SweepAxis::kEpsilon;
  std::vector<double> values;  // empty: the axis defaults
  std::vector<MechanismKind> mechanisms{MechanismKind::kNoPrivate,
                                        MechanismKind::kLdp, MechanismKind::kMpc,
                                        MechanismKind::kDdpSa};
};

struct SweepRow {
  SweepAxis axis = SweepAxis::kEpsilon;
  double value = 0.0;
  MechanismKind mechanism = MechanismKind::kDdpSa;
  std::size_t repeats = 0;
  double mean_test_loss = 0.0;
  double mean_test_r2 = 0.0;
  double mean_rounds_to_convergence = 0.0;
  std::size_t uplink_values_per_client = 0;
};

inline void write_sweep_csv(std::ostream& os, const std::vector<SweepRow>& rows) {
  os << "axis,value,mechanism,repeats,mean_test_loss,mean_test_r2,"
        "mean_rounds_to_convergence,uplink_values_per_client\n";
  for (const auto& r : rows) {
    os << (r.axis == SweepAxis::kEpsilon ? "epsilon" : "clients") << ','
       << format_double(r.value) << ',' << to_string(r.mechanism) << ','
       << r.repeats << ',' << format_double(r.mean_test_loss) << ','
       << format_double(r.mean_test_r2) << ','
       << format_double(r.mean_rounds_to_convergence) << ','
       << r.uplink_values_per_client << '\n';
  }
}

// One row per axis value per mechanism, each averaged over the same seeds.
// Writes <out>/sweep.csv.
inline std::vector<SweepRow> cmd_sweep(const SweepConfig& sc) {
  const auto values = sc.values.empty() ? default_axis_values(sc.axis) : sc.values;
  std::vector<SweepRow> rows;
  for (double v : values) {
    for (MechanismKind mech : sc.mechanisms) {
      ExperimentConfig cfg = sc.base;
      cfg.mechanism = mech;
      cfg.out.clear();
      if (!uses_sharing(mech)) cfg.servers.reset();
      if (sc.axis == SweepAxis::kEpsilon) {
        if (!(v > 0)) throw UsageError("epsilon axis values must be > 0");
        cfg.epsilon = v;
      } else {
        if (!(v >= 1) || v != std::floor(v)) {
          throw UsageError("clients axis values must be positive integers");
        }
        cfg.clients = static_cast<std::size_t>(v);
      }
      const RunOutcome o = cmd_run(cfg);
      rows.push_back({sc.axis, v, mech, cfg.repeats, o.mean_test_loss,
                      o.mean_test_r2, o.mean_rounds_to_convergence,
                      o.uplink_values_per_client});
    }
  }
  if (!sc.base.out.empty()) {
    auto csv = detail::open_output(sc.base.out / "sweep.csv");
    write_sweep_csv(csv, rows);
  }
  return rows;
}

struct AccountantQuery {
  double epsilon = 0.1;
  double delta = 0.0;
  std::size_t rounds = 1000;
  double delta_prime = 1e-4;
  std::optional<double> alpha;         // adds an adaptive schedule
  std::optional<double> total_budget;  // schedule total, default eps * T
};

struct AccountantResult {
  PrivacyTotals per_round;
  PrivacyTotals basic;
  PrivacyTotals advanced;
  std::vector<double> schedule;  // empty unless alpha was given
  PrivacyTotals schedule_basic;
  PrivacyTotals schedule_advanced;
};

inline AccountantResult cmd_accountant(const AccountantQuery& q) {
  DpParams per{q.epsilon, q.delta, 1.0};
  per.validate();
  if (q.rounds == 0) throw InvalidParameterError("T must be >= 1");
  if (!(q.delta_prime > 0 && q.delta_prime < 1)) {
    throw InvalidParameterError("delta' must lie in (0, 1)");
  }
  AccountantResult r;
  r.per_round = {q.epsilon, q.delta};
  PrivacyLedger ledger(q.delta_prime);
  for (std::size_t t = 0; t < q.rounds; ++t) ledger.append(per);
  r.basic = compose_basic(ledger);
  r.advanced = compose_advanced(q.epsilon, q.delta, q.rounds, q.delta_prime);
  if (q.alpha) {
    const double total =
        q.total_budget.value_or(q.epsilon * static_cast<double>(q.rounds));
    r.schedule = allocate_budget(AllocationPlan::adaptive(total, q.rounds, *q.alpha));
    PrivacyLedger sched(q.delta_prime);
    for (double e : r.schedule) {
      if (!(e > 0)) break;  // underflowed tail contributes nothing
      sched.append({e, q.delta, 1.0});
    }
    r.schedule_basic = compose_basic(sched);
    r.schedule_advanced = compose_advanced(sched);
  }
  return r;
}

inline void write_accountant_csv(std::ostream& os, const AccountantResult& r) {
  os << "quantity,epsilon,delta\n";
  auto row = [&os](const char* name, const PrivacyTotals& t) {
    os << name << ',' << format_double(t.epsilon) << ',' << format_double(t.delta)
       << '\n';
  };
  row("per_round", r.per_round);
  row("basic", r.basic);
  row("advanced", r.advanced);
  if (r.schedule.empty()) return;
  row("schedule_basic", r.schedule_basic);
  row("schedule_advanced", r.schedule_advanced);
  os << "\nround,epsilon\n";
  for (std::size_t t = 0; t < r.schedule.size(); ++t) {
    os << t + 1 << ',' << format_double(r.schedule[t]) << '\n';
  }
}

struct CostRow {
  std::string link;
  std::uint64_t nominal_bytes = 0;
  std::uint64_t wire_actual_bytes = 0;
  bool counted = true;  // false: reported but outside the standard accounting
};

// Per-round byte counts. The nominal column counts 4 bytes per
// value; the wire-actual column counts whole frames as this library sends
// them (8-byte doubles, 16-byte field elements, headers).
inline std::vector<CostRow> cmd_cost_model(std::uint64_t d, std::uint64_t m,
                                           std::uint64_t n) {
  if (d == 0 || m == 0 || n == 0) {
    throw InvalidParameterError("cost model needs positive d, m, n");
  }
  const std::uint64_t h = kFrameHeaderSize;
  const std::uint64_t broadcast = h + 8 + 8 * d;
  const std::uint64_t share = h + 18 + 16 * d;
  const std::uint64_t partial = h + 14 + 16 * d;
  const std::uint64_t plain = h + 12 + 8 * d;
  return {
      {"ps_to_client_per_client", 4 * d, broadcast, true},
      {"ps_broadcast_total", 4 * d * n, broadcast * n, true},
      {"client_to_intermediates_per_client", 4 * d * m, share * m, false},
      {"intermediates_to_ps", 4 * d * m, partial * m, true},
      {"plaintext_client_to_ps_per_client", 4 * d, plain, true},
      {"plaintext_ps_ingress", 4 * d * n, plain * n, true},
  };
}

inline void write_cost_csv(std::ostream& os, const std::vector<CostRow>& rows) {
  os << "link,nominal_bytes,wire_actual_bytes,accounting\n";
  for (const auto& r : rows) {
    os << r.link << ',' << r.nominal_bytes << ',' << r.wire_actual_bytes
       << ',' << (r.counted ? "counted" : "excluded") << '\n';
  }
}

inline Dataset cmd_gen_data(std::size_t samples, std::uint64_t seed,
                            const std::filesystem::path& out) {
  Dataset ds = generate_dataset(samples, seed);
  if (!out.empty()) {
    auto f = detail::open_output(out);
    write_dataset_csv(f, ds);
  }
  return ds;
}

}  // namespace ddpsa
