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


// ddpsa: run, sweep and account for federated training with distributed
// differential privacy and additive secret sharing.

#include <cstdlib>
#include <iostream>
#include <optional>
#include <string>

#include <spdlog/spdlog.h>

#include "CLI11.hpp"
#include "ddpsa.hpp"

namespace {

using namespace ddpsa;

void configure_logging() {
  const char* env = std::getenv("DDPSA_LOG");
  const std::string level = env ? env : "warn";
  if (level == "error") {
    spdlog::set_level(spdlog::level::err);
  } else if (level == "info") {
    spdlog::set_level(spdlog::level::info);
  } else if (level == "debug") {
    spdlog::set_level(spdlog::level::debug);
  } else {
    spdlog::set_level(spdlog::level::warn);
  }
  spdlog::set_pattern("[%l] %v");
}

struct ExperimentFlags {
  std::string mechanism = "ddp_sa";
  std::string transport = "sim";
  std::string allocation = "uniform";
  std::size_t servers = kDefaultServers;
  std::int64_t timeout_ms = TcpTransport::kDefaultTimeout.count();
  std::string out;
  CLI::Option* servers_opt = nullptr;
};

void add_experiment_flags(CLI::App& app, ExperimentConfig& cfg, ExperimentFlags& f,
                          bool with_mechanism) {
  if (with_mechanism) {
    app.add_option("--mechanism", f.mechanism, "no_private | ldp | mpc | ddp_sa")
        ->capture_default_str();
  }
  app.add_option("--clients,-n", cfg.clients, "Number of clients")->capture_default_str();
  f.servers_opt = app.add_option("--servers,-m", f.servers,
                                 "Intermediate servers (mpc, ddp_sa only)")
                      ->capture_default_str();
  app.add_option("--epsilon", cfg.epsilon, "Per-round privacy budget")
      ->capture_default_str();
  app.add_option("--decimal-places", cfg.decimal_places, "Fixed-point digits d_n")
      ->capture_default_str();
  app.add_option("--max-rounds", cfg.max_rounds, "Round limit T_max")
      ->capture_default_str();
  app.add_option("--seed", cfg.seed, "First seed")->capture_default_str();
  app.add_option("--repeats", cfg.repeats, "Seeds averaged per result")
      ->capture_default_str();
  app.add_option("--transport", f.transport, "sim | tcp")->capture_default_str();
  app.add_option("--timeout-ms", f.timeout_ms, "TCP receive timeout")
      ->capture_default_str();
  app.add_option("--rel-tol", cfg.rel_tol, "Relative validation improvement")
      ->capture_default_str();
  app.add_option("--patience", cfg.patience, "Rounds without improvement (0: off)")
      ->capture_default_str();
  app.add_option("--warmup", cfg.warmup_rounds, "Clip-norm calibration rounds")
      ->capture_default_str();
  app.add_option("--batch-size", cfg.batch_size, "Per-client minibatch (0: shard)")
      ->capture_default_str();
  app.add_option("--samples", cfg.samples, "Dataset size")->capture_default_str();
  app.add_option("--allocation", f.allocation, "uniform | adaptive")
      ->capture_default_str();
  app.add_option("--alpha", cfg.alpha, "Adaptive decay factor")->capture_default_str();
  app.add_option("--delta-prime", cfg.delta_prime, "Advanced composition slack")
      ->capture_default_str();
  app.add_option("--out,-o", f.out, "Output directory");
  app.add_flag("--timing", cfg.timing, "Add wall_ms to rounds.csv");
}

void resolve(ExperimentConfig& cfg, const ExperimentFlags& f, bool with_mechanism) {
  if (with_mechanism) cfg.mechanism = parse_mechanism(f.mechanism);
  if (f.servers_opt->count() > 0) cfg.servers = f.servers;
  cfg.transport = parse_transport(f.transport);
  if (f.allocation == "uniform") {
    cfg.allocation = AllocationPlan::Strategy::kUniform;
  } else if (f.allocation == "adaptive") {
    cfg.allocation = AllocationPlan::Strategy::kAdaptive;
  } else {
    throw UsageError("--allocation must be uniform or adaptive");
  }
  if (f.timeout_ms <= 0) throw UsageError("--timeout-ms must be positive");
  cfg.timeout = std::chrono::milliseconds(f.timeout_ms);
  cfg.out = f.out;
}

int run_command(const ExperimentConfig& cfg) {
  const RunOutcome o = cmd_run(cfg);
  for (const auto& r : o.reports) {
    spdlog::info("seed {}: {} rounds (converged at {}), test loss {:.6g}, R2 {:.6f}",
                 r.seed, r.rounds_run, r.rounds_to_convergence, r.final_test_loss,
                 r.final_test_r2);
  }
  std::cout << o.summary.dump(2) << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  configure_logging();
  CLI::App app{"Federated training with Laplace LDP and additive secret sharing"};
  app.require_subcommand(1);

  ExperimentConfig run_cfg;
  ExperimentFlags run_flags;
  auto* run = app.add_subcommand("run", "Train one configuration over --repeats seeds");
  add_experiment_flags(*run, run_cfg, run_flags, true);

  SweepConfig sweep_cfg;
  sweep_cfg.base.repeats = kDefaultSweepRepeats;
  ExperimentFlags sweep_flags;
  std::string axis = "epsilon";
  std::vector<std::string> mechanisms;
  auto* sweep = app.add_subcommand("sweep", "Average final metrics across an axis");
  add_experiment_flags(*sweep, sweep_cfg.base, sweep_flags, false);
  sweep->add_option("--axis", axis, "epsilon | clients")->capture_default_str();
  sweep->add_option("--values", sweep_cfg.values, "Axis values (default per axis)")
      ->delimiter(',');
  sweep->add_option("--mechanisms", mechanisms, "Subset of mechanisms (default all)")
      ->delimiter(',');

  AccountantQuery acc;
  std::string acc_out;
  auto* accountant = app.add_subcommand("accountant", "Compose per-round privacy budgets");
  accountant->add_option("--epsilon", acc.epsilon, "Per-round epsilon")->capture_default_str();
  accountant->add_option("--delta", acc.delta, "Per-round delta")->capture_default_str();
  accountant->add_option("--rounds,-T", acc.rounds, "Rounds T")->capture_default_str();
  accountant->add_option("--delta-prime", acc.delta_prime, "Advanced composition slack")
      ->capture_default_str();
  auto* alpha_opt = accountant->add_option("--alpha", "Adaptive decay factor");
  auto* total_opt = accountant->add_option("--total-budget", "Schedule total (default eps*T)");
  accountant->add_option("--out,-o", acc_out, "CSV file (default stdout)");

  std::uint64_t d = 3, m = 3, n = 3;
  auto* cost = app.add_subcommand("cost-model", "Per-round communication bytes");
  cost->add_option("-d,--dimension", d, "Model dimension")->capture_default_str();
  cost->add_option("-m,--servers", m, "Intermediate servers")->capture_default_str();
  cost->add_option("-n,--clients", n, "Clients")->capture_default_str();

  std::size_t samples = 10'000;
  std::uint64_t data_seed = 0;
  std::string data_out = "dataset.csv";
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic regression dataset");
  gen->add_option("--samples", samples, "Rows")->capture_default_str();
  gen->add_option("--seed", data_seed, "Seed")->capture_default_str();
  gen->add_option("--out,-o", data_out, "CSV path")->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e);
  }

  try {
    if (*run) {
      resolve(run_cfg, run_flags, true);
      return run_command(run_cfg);
    }
    if (*sweep) {
      resolve(sweep_cfg.base, sweep_flags, false);
      sweep_cfg.axis = parse_axis(axis);
      if (!mechanisms.empty()) {
        sweep_cfg.mechanisms.clear();
        for (const auto& s : mechanisms) sweep_cfg.mechanisms.push_back(parse_mechanism(s));
      }
      const auto rows = cmd_sweep(sweep_cfg);
      write_sweep_csv(std::cout, rows);
      return 0;
    }
    if (*accountant) {
      if (alpha_opt->count() > 0) acc.alpha = alpha_opt->as<double>();
      if (total_opt->count() > 0) acc.total_budget = total_opt->as<double>();
      const auto result = cmd_accountant(acc);
      if (acc_out.empty()) {
        write_accountant_csv(std::cout, result);
      } else {
        std::ofstream f(acc_out);
        if (!f) throw Error("cannot write " + acc_out);
        write_accountant_csv(f, result);
      }
      return 0;
    }
    if (*cost) {
      write_cost_csv(std::cout, cmd_cost_model(d, m, n));
      return 0;
    }
    if (*gen) {
      const Dataset ds = cmd_gen_data(samples, data_seed, data_out);
      spdlog::info("wrote {} rows to {}", ds.size(), data_out);
      return 0;
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << '\n';
    return 2;
  } catch (const InvalidParameterError& e) {
    std::cerr << "invalid parameter: " << e.what() << '\n';
    return 2;
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
