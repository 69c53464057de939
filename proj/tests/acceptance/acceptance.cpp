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


// Acceptance checks. Prints one PASS/FAIL line per criterion and exits
// non-zero if any criterion fails.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <string>
#include <vector>

#include <boost/multiprecision/cpp_int.hpp>

#include "ddpsa.hpp"
#include "support/stats.hpp"

namespace {

using namespace ddpsa;
using namespace std::chrono_literals;
using Clock = std::chrono::steady_clock;

constexpr std::size_t kAccuracySeeds = 10;
constexpr std::size_t kSweepRepeats = 100;
constexpr double kSignificance = 0.01;

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* format, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, format, args...);
  return buf;
}

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

Verdict within_budget(Verdict v, Clock::time_point t0, double budget_s) {
  const double s = seconds_since(t0);
  v.detail += fmt("; %.1fs (budget %.0fs)", s, budget_s);
  v.pass = v.pass && s < budget_s;
  return v;
}

const PrimeModulus kP = PrimeModulus::mersenne127();

// 1 -----------------------------------------------------------------------
Verdict accountant_exactness() {
  const auto t0 = Clock::now();
  PrivacyLedger ledger(1e-4);
  for (int t = 0; t < 1000; ++t) ledger.append({0.1, 0.0, 1.0});
  const PrivacyTotals basic = compose_basic(ledger);
  const PrivacyTotals adv = compose_advanced(0.1, 0.0, 1000, 1e-4);
  const PrivacyTotals adv_ledger = compose_advanced(ledger);
  Verdict v;
  v.pass = basic.epsilon == 100.0 && basic.delta == 0.0 && adv.epsilon >= 24.08 &&
           adv.epsilon <= 24.10 && adv_ledger.epsilon >= 24.08 &&
           adv_ledger.epsilon <= 24.10;
  v.detail = fmt("basic=%.17g advanced=%.6f ledger-advanced=%.6f", basic.epsilon,
                 adv.epsilon, adv_ledger.epsilon);
  return within_budget(v, t0, 1);
}

// 2 -----------------------------------------------------------------------
Verdict share_roundtrip() {
  const auto t0 = Clock::now();
  Rng rng(2);
  std::size_t trials = 0, failures = 0;
  for (std::size_t m : {1u, 2u, 3u, 5u, 8u}) {
    for (std::size_t d : {1u, 3u, 64u}) {
      for (int i = 0; i < 10'000; ++i) {
        std::vector<FieldElement> v;
        v.reserve(d);
        for (std::size_t k = 0; k < d; ++k) v.push_back(uniform_element(rng, kP));
        if (reconstruct(split(v, m, rng)) != v) ++failures;
        ++trials;
      }
    }
  }
  return within_budget({failures == 0, fmt("%zu vectors, %zu mismatches", trials, failures)},
                       t0, 30);
}

// 3 -----------------------------------------------------------------------
constexpr std::size_t kSplits = 100'000;

using Histogram = std::vector<std::uint64_t>;

struct SubsetTest {
  double min_two_sample = 1;
  double min_uniform = 1;
  void add(const Histogram& a, const Histogram& b) {
    min_two_sample = std::min(min_two_sample, test::two_sample_chi_square_p(a, b));
    min_uniform = std::min(min_uniform, test::uniform_chi_square_p(a));
    min_uniform = std::min(min_uniform, test::uniform_chi_square_p(b));
  }
  bool pass() const { return min_two_sample > kSignificance && min_uniform > kSignificance; }
};

unsigned low8(const FieldElement& e) { return static_cast<unsigned>(e.value() & 0xFF); }

// Joint histogram of two shares, low nibble of each.
unsigned low4_pair(const FieldElement& a, const FieldElement& b) {
  return static_cast<unsigned>(((a.value() & 0xF) << 4) | (b.value() & 0xF));
}

Verdict strict_subset_indistinguishability() {
  const auto t0 = Clock::now();
  constexpr std::size_t m = 3;
  const std::vector<FieldElement> secrets[2] = {
      {FieldElement(0, kP)}, {FieldElement(kP.value() - 12345, kP)}};
  Histogram single[2][m], pair[2];
  for (int s = 0; s < 2; ++s) {
    for (auto& h : single[s]) h.assign(256, 0);
    pair[s].assign(256, 0);
    Rng rng(300 + s);
    for (std::size_t i = 0; i < kSplits; ++i) {
      const ShareSet set = split(secrets[s], m, rng);
      for (std::size_t j = 0; j < m; ++j) ++single[s][j][low8(set.shares[j].elements[0])];
      ++pair[s][low4_pair(set.shares[0].elements[0], set.shares[2].elements[0])];
    }
  }
  SubsetTest t;
  for (std::size_t j = 0; j < m; ++j) t.add(single[0][j], single[1][j]);
  t.add(pair[0], pair[1]);
  return within_budget(
      {t.pass(), fmt("m=3, %zu splits per secret, every single share and one pair: "
                     "min two-sample p=%.3f, min uniform p=%.3f",
                     kSplits, t.min_two_sample, t.min_uniform)},
      t0, 60);
}

// 4 -----------------------------------------------------------------------
// The returned binary64 value is checked over the codec's whole value range.
// The exact rational error of the integer quantization is checked alongside.
Verdict quantization_bound() {
  using boost::multiprecision::cpp_rational;
  Rng rng(4);
  const double v_max = CodecBounds{}.max_abs_value;
  std::size_t violations = 0, exact_violations = 0, unit_violations = 0;
  double smallest_violating = INFINITY;
  std::string per_dn;
  for (unsigned dn : {2u, 6u, 10u}) {
    const FixedPointCodec codec(kP, dn);
    const double bound = 0.5 / static_cast<double>(codec.scale_factor());
    const cpp_rational sf(codec.scale_factor());
    std::size_t here = 0;
    for (int i = 0; i < 100'000; ++i) {
      // Alternate between the full value range and the unit interval.
      const bool unit = i % 2 == 0;
      const double x = (2 * uniform_unit(rng) - 1) * (unit ? 1.0 : v_max);
      const FieldElement e = codec.encode(x);
      if (std::fabs(codec.decode(e) - x) > bound) {
        ++here;
        unit_violations += unit;
        smallest_violating = std::min(smallest_violating, std::fabs(x));
      }
      const cpp_rational k(boost::multiprecision::cpp_int(
          std::to_string(static_cast<long long>(codec.centered(e)))));
      if (2 * abs(k - cpp_rational(x) * sf) > 1) ++exact_violations;
    }
    violations += here;
    per_dn += fmt(" d_n=%u:%zu", dn, here);
  }
  return {violations == 0,
          fmt("3 x 100000 values in [-%.0g, %.0g], binary64 decode violations%s "
              "(%zu with |x| <= 1, smallest violating |x| %.4g); exact quantization "
              "violations %zu",
              v_max, v_max, per_dn.c_str(), unit_violations, smallest_violating,
              exact_violations)};
}

// Shared configuration for the end-to-end criteria.
TrainingConfig training(MechanismKind mech, std::uint64_t seed) {
  TrainingConfig c;
  c.mechanism = mech;
  c.seed = seed;
  return c;
}

double max_abs_diff(const std::vector<std::vector<double>>& a,
                    const std::vector<std::vector<double>>& b) {
  double worst = 0;
  for (std::size_t t = 0; t < std::min(a.size(), b.size()); ++t) {
    for (std::size_t k = 0; k < a[t].size(); ++k) {
      worst = std::max(worst, std::fabs(a[t][k] - b[t][k]));
    }
  }
  return worst;
}

double quantization_allowance(const TrainingReport& r) {
  return static_cast<double>(r.clients) / (2.0 * static_cast<double>(r.scale_factor));
}

// 5 -----------------------------------------------------------------------
Verdict mpc_matches_plaintext() {
  const auto t0 = Clock::now();
  const TrainingReport mpc = run_training(training(MechanismKind::kMpc, 0));
  const TrainingReport plain = run_training(training(MechanismKind::kNoPrivate, 0));
  const double bound = quantization_allowance(mpc);
  // Decoded aggregate against the plaintext sum of the same round's gradients.
  const double in_run = max_abs_diff(mpc.aggregate_sums, mpc.released_sums);
  const double cross_run = max_abs_diff(mpc.aggregate_sums, plain.aggregate_sums);
  const double dr2 = std::fabs(mpc.final_test_r2 - plain.final_test_r2);
  Verdict v;
  v.pass = mpc.aggregate_sums.size() == mpc.rounds_run &&
           mpc.released_sums.size() == mpc.rounds_run && in_run <= bound && dr2 <= 1e-6;
  v.detail = fmt("%zu rounds, max per-round gap %.3g (bound %.3g), "
                 "R2 mpc=%.12f no_private=%.12f diff=%.2g; "
                 "separate no_private run drifts by %.3g",
                 mpc.rounds_run, in_run, bound, mpc.final_test_r2, plain.final_test_r2, dr2,
                 cross_run);
  return within_budget(v, t0, 120);
}

// 6 -----------------------------------------------------------------------
Verdict ddp_sa_matches_ldp() {
  const auto t0 = Clock::now();
  const TrainingReport dsa = run_training(training(MechanismKind::kDdpSa, 0));
  const TrainingReport ldp = run_training(training(MechanismKind::kLdp, 0));
  const double bound = quantization_allowance(dsa);
  const double gap = max_abs_diff(dsa.aggregate_sums, ldp.aggregate_sums);
  const bool same_releases = dsa.client_releases == ldp.client_releases;
  Verdict v;
  v.pass = dsa.rounds_run == ldp.rounds_run && gap <= bound &&
           dsa.rounds_to_convergence == ldp.rounds_to_convergence;
  v.detail = fmt("rounds %zu/%zu, convergence %zu/%zu, max per-round gap %.3g "
                 "(bound %.3g), identical noisy gradients: %s",
                 dsa.rounds_run, ldp.rounds_run, dsa.rounds_to_convergence,
                 ldp.rounds_to_convergence, gap, bound,
                 same_releases ? "yes" : "no (diverged after a quantized step)");
  return within_budget(v, t0, 180);
}

// 7 -----------------------------------------------------------------------
Verdict accuracy() {
  const auto t0 = Clock::now();
  double dsa_r2 = 0, worst_exact_r2 = 1, worst_exact_loss = 0;
  for (std::uint64_t seed = 0; seed < kAccuracySeeds; ++seed) {
    dsa_r2 += run_training(training(MechanismKind::kDdpSa, seed)).final_test_r2 /
              kAccuracySeeds;
    for (auto mech : {MechanismKind::kNoPrivate, MechanismKind::kMpc}) {
      const TrainingReport r = run_training(training(mech, seed));
      worst_exact_r2 = std::min(worst_exact_r2, r.final_test_r2);
      worst_exact_loss = std::max(worst_exact_loss, r.final_test_loss);
    }
  }
  Verdict v;
  v.pass = dsa_r2 >= 0.90 && worst_exact_r2 >= 0.9999 && worst_exact_loss <= 1e-8;
  v.detail = fmt("%zu seeds: ddp_sa mean R2=%.4f; no_private/mpc worst R2=%.10f, "
                 "worst test loss=%.3g",
                 kAccuracySeeds, dsa_r2, worst_exact_r2, worst_exact_loss);
  return within_budget(v, t0, 20 * 60);
}

// 8 -----------------------------------------------------------------------
Verdict trends() {
  const auto t0 = Clock::now();
  SweepConfig eps;
  eps.base.repeats = kSweepRepeats;
  eps.axis = SweepAxis::kEpsilon;
  eps.mechanisms = {MechanismKind::kLdp, MechanismKind::kDdpSa};
  const auto eps_rows = cmd_sweep(eps);
  SweepConfig cl = eps;
  cl.axis = SweepAxis::kClients;
  const auto cl_rows = cmd_sweep(cl);

  bool ok = true;
  std::string detail = fmt("%zu repeats", kSweepRepeats);
  for (auto mech : eps.mechanisms) {
    std::vector<double> r2, loss;
    for (const auto& r : eps_rows) {
      if (r.mechanism == mech) r2.push_back(r.mean_test_r2);
    }
    for (const auto& r : cl_rows) {
      if (r.mechanism == mech) loss.push_back(r.mean_test_loss);
    }
    const bool r2_up = std::is_sorted(r2.begin(), r2.end());
    const bool loss_down = std::is_sorted(loss.rbegin(), loss.rend());
    ok = ok && r2_up && loss_down && r2.back() >= 0.995;
    detail += fmt("; %s R2(eps) %.4f..%.4f %s, loss(n) %.3g..%.3g %s",
                  std::string(to_string(mech)).c_str(), r2.front(), r2.back(),
                  r2_up ? "non-decreasing" : "NOT monotone", loss.front(), loss.back(),
                  loss_down ? "non-increasing" : "NOT monotone");
  }
  return within_budget({ok, detail}, t0, 45 * 60);
}

// 9 -----------------------------------------------------------------------
Verdict upload_accounting() {
  bool ok = true;
  std::string detail;
  for (auto mech : {MechanismKind::kNoPrivate, MechanismKind::kLdp, MechanismKind::kMpc,
                    MechanismKind::kDdpSa}) {
    TrainingConfig c = training(mech, 0);
    c.max_rounds = 20;
    const TrainingReport r = run_training(c);
    const std::size_t expect = uses_sharing(mech) ? 9 : 3;
    ok = ok && r.uplink_values_per_client == expect;
    detail += fmt("%s=%zu ", std::string(to_string(mech)).c_str(),
                  r.uplink_values_per_client);
  }
  return {ok, detail};
}

// 10 ----------------------------------------------------------------------
Verdict noise_averaging() {
  constexpr int kTrials = 100'000;
  constexpr double b = 1.7;
  Rng rng(10);
  bool ok = true;
  std::string detail;
  for (int n : {2, 4, 8, 16}) {
    std::vector<double> means(kTrials);
    for (double& mean : means) {
      double s = 0;
      for (int i = 0; i < n; ++i) s += laplace_sample(b, rng);
      mean = s / n;
    }
    const double sd = std::sqrt(test::variance(means));
    const double expect = b * std::sqrt(2.0) / std::sqrt(static_cast<double>(n));
    const double rel = std::fabs(sd / expect - 1);
    ok = ok && rel <= 0.10;
    detail += fmt("n=%d sd/expected=%.4f ", n, sd / expect);
  }
  return {ok, detail};
}

// 11 ----------------------------------------------------------------------
struct Abort {
  bool incomplete = false;
  TrainingReport partial;
  double seconds = 0;
};

Abort run_expecting_abort(const TrainingConfig& c) {
  Abort a;
  const auto t0 = Clock::now();
  try {
    run_training(c);
  } catch (const RunAbortedError& e) {
    a.partial = e.partial_report();
    try {
      e.rethrow_cause();
    } catch (const IncompleteRoundError&) {
      a.incomplete = true;
    } catch (...) {
    }
  }
  a.seconds = seconds_since(t0);
  return a;
}

bool has(const std::vector<Endpoint>& v, const Endpoint& e) {
  return std::find(v.begin(), v.end(), e) != v.end();
}

Verdict full_threshold() {
  TrainingConfig c = training(MechanismKind::kDdpSa, 0);
  c.max_rounds = 50;
  c.drop_filter = [](const Link& l, const RoundMessage& m) {
    return l.from == Endpoint::intermediate(1) && l.to == Endpoint::parameter_server() &&
           round_of(m) == 5;
  };
  const Abort partial = run_expecting_abort(c);
  const bool partial_ok = partial.incomplete && partial.partial.rounds_run == 5 &&
                          partial.partial.stalled ==
                              std::vector<Endpoint>{Endpoint::parameter_server()};

  c.drop_filter = [](const Link& l, const RoundMessage& m) {
    return l.from == Endpoint::client(2) && l.to == Endpoint::intermediate(0) &&
           round_of(m) == 5;
  };
  const Abort share = run_expecting_abort(c);
  const auto& st = share.partial.stalled;
  const bool share_ok = share.incomplete && share.partial.rounds_run == 5 &&
                        has(st, Endpoint::intermediate(0)) &&
                        !has(st, Endpoint::intermediate(1)) &&
                        !has(st, Endpoint::intermediate(2));

  // Same PartialSum fault over TCP: the stall must surface as an incomplete
  // round once the receive timeout expires.
  c.drop_filter = [](const Link& l, const RoundMessage& m) {
    return l.from == Endpoint::intermediate(1) && round_of(m) == 5;
  };
  c.transport = TransportKind::kTcp;
  c.timeout = 1s;
  const Abort tcp = run_expecting_abort(c);
  const bool tcp_ok = tcp.incomplete && tcp.seconds < 15;

  std::string stalled;
  for (const auto& e : st) stalled += to_string(e) + " ";
  return {partial_ok && share_ok && tcp_ok,
          fmt("withheld PartialSum: %s at round %zu; withheld ShareUpload: %s, stalled [%s]; "
              "tcp with 1s timeout: %s after %.1fs",
              partial_ok ? "incomplete round" : "UNEXPECTED", partial.partial.rounds_run,
              share_ok ? "incomplete round" : "UNEXPECTED", stalled.c_str(),
              tcp_ok ? "incomplete round" : "UNEXPECTED", tcp.seconds)};
}

// 12 ----------------------------------------------------------------------
ClientSetup eavesdrop_client(std::uint32_t id, std::shared_ptr<const Dataset> ds,
                             std::size_t servers) {
  ClientSetup s;
  s.id = id;
  s.data = ds;
  s.shard = partition_iid(ds->train, 2)[id];
  s.mechanism = MechanismKind::kMpc;
  s.servers = servers;
  s.seed = 12;
  s.codec.emplace(kP, 10);
  return s;
}

Verdict eavesdropper() {
  const auto t0 = Clock::now();
  constexpr std::size_t m = 3;
  auto ds = std::make_shared<const Dataset>(generate_dataset(200, 12));
  // Two clients hold fixed, different secrets and upload through the
  // transport every round; the adversary taps links to servers 0 .. m-2.
  const ClientState clients[2] = {ClientState(eavesdrop_client(0, ds, m)),
                                  ClientState(eavesdrop_client(1, ds, m))};
  const ReleasedGradient secrets[2] = {
      release_unprotected(GradientVector(std::vector<double>{0.0, 0.0, 0.0})),
      release_unprotected(GradientVector(std::vector<double>{123.456, -7.0, 1e5}))};
  InProcessTransport net(kP);
  for (std::uint32_t c = 0; c < 2; ++c) {
    for (std::uint32_t j = 0; j + 1 < m; ++j) {
      net.tap({Endpoint::client(c), Endpoint::intermediate(j)});
    }
  }
  Histogram single[2][m - 1], pair[2];
  for (int c = 0; c < 2; ++c) {
    for (auto& h : single[c]) h.assign(256, 0);
    pair[c].assign(256, 0);
  }
  for (std::uint64_t round = 0; round < kSplits; ++round) {
    for (std::uint32_t c = 0; c < 2; ++c) {
      for (const auto& msg : clients[c].uploads_for(secrets[c], round)) {
        const auto& share = std::get<ShareUpload>(msg).share;
        net.send(Endpoint::client(c), Endpoint::intermediate(share.server_index), msg);
      }
    }
    for (std::uint32_t j = 0; j < m; ++j) {
      while (net.try_receive(Endpoint::intermediate(j))) {
      }
    }
  }
  for (std::uint32_t c = 0; c < 2; ++c) {
    std::vector<std::vector<RoundMessage>> seen;
    for (std::uint32_t j = 0; j + 1 < m; ++j) {
      seen.push_back(net.eavesdrop_tap({Endpoint::client(c), Endpoint::intermediate(j)}));
    }
    for (std::size_t round = 0; round < kSplits; ++round) {
      const auto& s0 = std::get<ShareUpload>(seen[0][round]).share.elements[0];
      const auto& s1 = std::get<ShareUpload>(seen[1][round]).share.elements[0];
      ++single[c][0][low8(s0)];
      ++single[c][1][low8(s1)];
      ++pair[c][low4_pair(s0, s1)];
    }
  }
  SubsetTest t;
  for (std::size_t j = 0; j + 1 < m; ++j) t.add(single[0][j], single[1][j]);
  t.add(pair[0], pair[1]);

  // All m links of one client during real training.
  TrainingConfig cfg = training(MechanismKind::kDdpSa, 12);
  cfg.max_rounds = 200;
  InProcessTransport full(kP);
  for (std::uint32_t j = 0; j < m; ++j) full.tap({Endpoint::client(0), Endpoint::intermediate(j)});
  const TrainingReport r = run_training(cfg, full);
  const FixedPointCodec codec(kP, cfg.decimal_places);
  std::vector<std::vector<RoundMessage>> links;
  for (std::uint32_t j = 0; j < m; ++j) {
    links.push_back(full.eavesdrop_tap({Endpoint::client(0), Endpoint::intermediate(j)}));
  }
  std::size_t exact = 0;
  for (std::size_t round = 0; round < r.rounds_run; ++round) {
    ShareSet set{m, {}};
    for (const auto& link : links) set.shares.push_back(std::get<ShareUpload>(link[round]).share);
    const auto secret = reconstruct(set);
    bool match = true;
    for (std::size_t k = 0; k < secret.size(); ++k) {
      match = match && secret[k] == codec.encode(r.client_releases[round][0][k]);
    }
    exact += match;
  }

  // Contrast: a single plaintext link in LDP mode.
  cfg.mechanism = MechanismKind::kLdp;
  InProcessTransport plain(kP);
  plain.tap({Endpoint::client(0), Endpoint::parameter_server()});
  const TrainingReport lr = run_training(cfg, plain);
  const auto ldp_seen = plain.eavesdrop_tap({Endpoint::client(0), Endpoint::parameter_server()});
  std::size_t verbatim = 0;
  for (std::size_t round = 0; round < ldp_seen.size(); ++round) {
    verbatim += std::get<PlainGradientUpload>(ldp_seen[round]).gradient ==
                lr.client_releases[round][0].vec();
  }

  Verdict v;
  v.pass = t.pass() && exact == r.rounds_run && r.rounds_run > 0 &&
           verbatim == lr.rounds_run && ldp_seen.size() == lr.rounds_run;
  v.detail = fmt("%zu of %zu links tapped over %zu rounds: min two-sample p=%.3f, min "
                 "uniform p=%.3f; all %zu links: %zu/%zu rounds reconstructed exactly; "
                 "ldp link: %zu/%zu gradients verbatim",
                 m - 1, m, kSplits, t.min_two_sample, t.min_uniform, m, exact,
                 r.rounds_run, verbatim, lr.rounds_run);
  return within_budget(v, t0, 120);
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Verdict()>>> criteria = {
      {"accountant exactness", accountant_exactness},
      {"share roundtrip", share_roundtrip},
      {"strict-subset indistinguishability", strict_subset_indistinguishability},
      {"quantization bound", quantization_bound},
      {"mpc matches no_private", mpc_matches_plaintext},
      {"ddp_sa matches ldp", ddp_sa_matches_ldp},
      {"accuracy", accuracy},
      {"epsilon and client trends", trends},
      {"upload accounting", upload_accounting},
      {"noise averaging", noise_averaging},
      {"full-threshold behavior", full_threshold},
      {"eavesdropper", eavesdropper},
  };
  int failed = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("exception: ") + e.what()};
    }
    failed += !v.pass;
    std::printf("criterion %2zu %s: %s (%s)\n", i + 1, v.pass ? "PASS" : "FAIL",
                criteria[i].first, v.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%d of %zu criteria failed\n", failed, criteria.size());
  return failed == 0 ? 0 : 1;
}
