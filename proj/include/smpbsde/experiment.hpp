#ifndef SMPBSDE_EXPERIMENT_HPP
#define SMPBSDE_EXPERIMENT_HPP

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <numeric>
#include <sstream>
#include <string>
#include <vector>

#include "smpbsde/config.hpp"
#include "smpbsde/dp_baseline.hpp"
#include "smpbsde/errors.hpp"
#include "smpbsde/lq_problem.hpp"
#include "smpbsde/metrics.hpp"
#include "smpbsde/paths.hpp"
#include "smpbsde/riccati.hpp"
#include "smpbsde/rng.hpp"
#include "smpbsde/trainer.hpp"

namespace smpbsde {

struct ExperimentConfig {
  std::string problem = "example1";
  std::string method = "smp";  // smp | dp
  std::vector<int> N_list = {2, 5, 10, 20};
  int repetitions = 1;
  int desk_scale = 1;  // 1, 2, 4, 8: divides batch, validation and iterations
  std::uint64_t seed = 1;
  std::int64_t N_ode = 100000;  // value-table grid for printed references
  std::int64_t N_fine = 240;    // fine simulation grid; every N must divide it
  std::int64_t batch_size = 4096;
  std::int64_t iterations = 0;   // 0: per-N default
  double initial_rate = 0.0;     // 0: per-N default
  std::vector<int> hidden = {100, 100};
  std::int64_t validation_size = 16384;
  std::int64_t validation_every = 0;  // 0: score only the final state
  double lambda = 1.0;                // dp variance weight
  std::string out = "runs";
};

inline void validate_experiment(const ExperimentConfig& cfg) {
  require(cfg.method == "smp" || cfg.method == "dp", ErrorCategory::config,
          "method must be smp or dp");
  require(!cfg.N_list.empty(), ErrorCategory::config, "N_list is empty");
  for (int N : cfg.N_list) {
    require(N >= 1, ErrorCategory::config, "coarse step counts must be >= 1");
    require(cfg.N_fine % N == 0, ErrorCategory::config,
            "N_fine must be divisible by every entry of N_list");
  }
  require(cfg.repetitions >= 1, ErrorCategory::config, "repetitions >= 1");
  require(cfg.desk_scale == 1 || cfg.desk_scale == 2 || cfg.desk_scale == 4 ||
              cfg.desk_scale == 8,
          ErrorCategory::config, "desk_scale must be 1, 2, 4 or 8");
  require(cfg.N_ode >= 1 && cfg.N_fine >= 1, ErrorCategory::config,
          "grid sizes must be positive");
  require(cfg.batch_size >= 1 && cfg.validation_size >= 1,
          ErrorCategory::config, "batch sizes must be positive");
  require(cfg.lambda >= 0.0, ErrorCategory::config,
          "variance weight must be nonnegative");
  require(!cfg.out.empty(), ErrorCategory::config, "output directory is empty");
}

inline ExperimentConfig experiment_from_config(const ConfigMap& cm) {
  ExperimentConfig cfg;
  cfg.problem = config_string_or(cm, "experiment", "problem", cfg.problem);
  cfg.method = config_string_or(cm, "experiment", "method", cfg.method);
  if (config_has(cm, "experiment", "N_list"))
    cfg.N_list = config_ints(cm, "experiment", "N_list");
  cfg.repetitions = static_cast<int>(
      config_int_or(cm, "experiment", "repetitions", cfg.repetitions));
  cfg.desk_scale = static_cast<int>(
      config_int_or(cm, "experiment", "desk_scale", cfg.desk_scale));
  cfg.seed = static_cast<std::uint64_t>(
      config_int_or(cm, "experiment", "seed", static_cast<std::int64_t>(cfg.seed)));
  cfg.N_ode = config_int_or(cm, "experiment", "N_ode", cfg.N_ode);
  cfg.N_fine = config_int_or(cm, "experiment", "N_fine", cfg.N_fine);
  cfg.validation_size =
      config_int_or(cm, "experiment", "validation_size", cfg.validation_size);
  cfg.validation_every =
      config_int_or(cm, "experiment", "validation_every", cfg.validation_every);
  cfg.lambda = config_double_or(cm, "experiment", "lambda", cfg.lambda);
  cfg.out = config_string_or(cm, "experiment", "out", cfg.out);
  cfg.batch_size = config_int_or(cm, "train", "batch_size", cfg.batch_size);
  cfg.iterations = config_int_or(cm, "train", "iterations", cfg.iterations);
  cfg.initial_rate =
      config_double_or(cm, "train", "initial_rate", cfg.initial_rate);
  if (config_has(cm, "train", "hidden"))
    cfg.hidden = config_ints(cm, "train", "hidden");
  validate_experiment(cfg);
  return cfg;
}

// Per-run training setup after desk scaling and per-N defaults.
inline TrainingConfig resolve_training(const ExperimentConfig& cfg, int N,
                                       int rep) {
  const RateTableEntry def = default_rate_for(N);
  TrainingConfig tc;
  tc.N = N;
  tc.batch_size = std::max<std::int64_t>(1, cfg.batch_size / cfg.desk_scale);
  tc.iterations = std::max<std::int64_t>(
      1, (cfg.iterations > 0 ? cfg.iterations : def.iterations) / cfg.desk_scale);
  tc.initial_rate = cfg.initial_rate > 0 ? cfg.initial_rate : def.eta0;
  tc.seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(N),
                     0x72657000u + static_cast<std::uint64_t>(rep));
  tc.validation_every = cfg.validation_every;
  tc.hidden = cfg.hidden;
  return tc;
}

// Everything shared across the runs of one experiment: the problem, the value
// table on the fine grid, and a coupled validation batch with its fine-grid
// reference recorded at every coarse node that any N in N_list uses.
struct ExperimentData {
  LqCoefficients c;
  FbsdeCoefficients fb;
  RiccatiSolution sol_fine;
  TrajectoryBatch reference;
  std::map<int, CoarseIncrements> coarse;
};

inline ExperimentData build_experiment_data(const ExperimentConfig& cfg) {
  ExperimentData data;
  data.c = preset_problem(cfg.problem);
  data.fb = composed_coefficients(data.c);
  data.sol_fine = integrate_riccati(data.c, cfg.N_fine);

  const std::int64_t val_size =
      std::max<std::int64_t>(1, cfg.validation_size / cfg.desk_scale);
  const BrownianBatch bb =
      sample_brownian(mix_seed(cfg.seed, 0x76616cu), val_size, cfg.N_fine,
                      data.c.m, data.c.T);

  std::vector<std::int64_t> nodes;
  for (int N : cfg.N_list) {
    const std::int64_t per = cfg.N_fine / N;
    for (int i = 0; i <= N; ++i) nodes.push_back(per * i);
  }
  data.reference = reference_rollout(data.c, data.sol_fine, bb, nodes);
  for (int N : cfg.N_list)
    if (!data.coarse.count(N)) data.coarse.emplace(N, coarsen<double>(bb, N));
  return data;
}

inline ValidationContext validation_for(const ExperimentData& data, int N) {
  return ValidationContext{data.coarse.at(N), data.reference, &data.sol_fine};
}

struct RunResult {
  int N = 0;
  int rep = 0;
  std::string status = "ok";  // or failed: <category>
  std::int64_t iterations = 0;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  double wall_s = 0.0;
  ErrorReport report;                  // smp runs
  std::vector<DpSnapshot> dp_history;  // dp runs
};

namespace detail {

inline void write_text(const std::string& path, const std::string& text) {
  std::ofstream os(path);
  require(os.good(), ErrorCategory::io, "cannot open '" + path + "' for write");
  os << text;
  require(os.good(), ErrorCategory::io, "write to '" + path + "' failed");
}

inline std::string run_tag(const std::string& method, int N, int rep) {
  return method + "_N" + std::to_string(N) + "_rep" + std::to_string(rep);
}

inline std::string relative_series_csv(const std::vector<RelativeSeriesRow>& rows) {
  std::string text = "n,t,x,p,q,u,x_abs,p_abs,q_abs,u_abs\n";
  for (const auto& r : rows) {
    text += std::to_string(r.n) + "," + format_sci(r.t);
    text += "," + format_sci(r.x) + "," + format_sci(r.p);
    if (r.has_qu) {
      text += "," + format_sci(r.q) + "," + format_sci(r.u);
    } else {
      text += ",,";
    }
    text += std::string(",") + (r.x_abs ? "1" : "0") + "," + (r.p_abs ? "1" : "0");
    text += std::string(",") + (r.has_qu && r.q_abs ? "1" : "0") + "," +
            (r.has_qu && r.u_abs ? "1" : "0");
    text += "\n";
  }
  return text;
}

inline std::string loss_history_csv(const std::vector<double>& hist) {
  std::string text = "step,loss\n";
  for (std::size_t i = 0; i < hist.size(); ++i)
    text += std::to_string(i) + "," + format_sci(hist[i]) + "\n";
  return text;
}

inline std::string dp_history_csv(const std::vector<DpSnapshot>& snaps) {
  std::string text = "step,robust_loss,mean_y0,max_x_err,avg_u_err\n";
  for (const auto& s : snaps)
    text += std::to_string(s.step) + "," + format_sci(s.robust_loss) + "," +
            format_sci(s.mean_y0) + "," + format_sci(s.max_x_err) + "," +
            format_sci(s.avg_u_err) + "\n";
  return text;
}

}  // namespace detail

// One training run with files written under cfg.out. Errors propagate.
inline RunResult run_single(const ExperimentConfig& cfg,
                            const ExperimentData& data, int N, int rep,
                            std::ostream& log) {
  namespace fs = std::filesystem;
  RunResult res;
  res.N = N;
  res.rep = rep;
  const TrainingConfig tc = resolve_training(cfg, N, rep);
  res.iterations = tc.iterations;
  const ValidationContext val = validation_for(data, N);
  const std::string tag = detail::run_tag(cfg.method, N, rep);
  const auto t0 = std::chrono::steady_clock::now();

  if (cfg.method == "smp") {
    auto st = make_training_state<float>(tc, data.c);
    train(st, tc, data.fb, &val);
    res.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                     .count();
    res.final_loss = st.loss_history.empty() ? 0.0 : st.loss_history.back();
    res.report = st.snapshots.back().report;
    res.report.iter_time_s = res.wall_s / static_cast<double>(tc.iterations);

    const auto ci = cast_increments<float>(val.ci);
    const auto traj = smp_rollout(data.fb, st.mu0, st.phi, ci);
    detail::write_text((fs::path(cfg.out) / ("relative_" + tag + ".csv")).string(),
                       detail::relative_series_csv(
                           relative_l2_in_time(traj, data.reference)));
    detail::write_text((fs::path(cfg.out) / ("loss_" + tag + ".csv")).string(),
                       detail::loss_history_csv(st.loss_history));
    save_checkpoint(st, (fs::path(cfg.out) / (tag + ".ckpt")).string(), 0);
  } else {
    DpConfig dc{tc, cfg.lambda};
    auto st = make_dp_state<float>(dc, data.c);
    dp_train(st, dc, data.c, &val);
    res.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0)
                     .count();
    res.final_loss = st.loss_history.empty() ? 0.0 : st.loss_history.back();
    res.dp_history = st.snapshots;
    detail::write_text((fs::path(cfg.out) / ("loss_" + tag + ".csv")).string(),
                       detail::loss_history_csv(st.loss_history));
    detail::write_text((fs::path(cfg.out) / ("history_" + tag + ".csv")).string(),
                       detail::dp_history_csv(st.snapshots));
  }
  log << "run " << tag << ": " << res.status << ", final loss "
      << format_sci(res.final_loss) << ", " << format_sci(res.wall_s) << " s\n";
  return res;
}

// The full study: every N and repetition, each run isolated so one failure
// flags its row and the rest still complete.
inline std::vector<RunResult> run_training_suite(const ExperimentConfig& cfg,
                                                 const ExperimentData& data,
                                                 std::ostream& log) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out);
  std::vector<RunResult> results;
  for (int N : cfg.N_list) {
    for (int rep = 0; rep < cfg.repetitions; ++rep) {
      try {
        results.push_back(run_single(cfg, data, N, rep, log));
      } catch (const Error& e) {
        RunResult res;
        res.N = N;
        res.rep = rep;
        res.status = std::string("failed: ") + to_string(e.category());
        results.push_back(res);
        log << "run " << detail::run_tag(cfg.method, N, rep) << ": "
            << res.status << " (" << e.what() << ")\n";
      }
    }
  }
  return results;
}

inline void write_runs_csv(const ExperimentConfig& cfg,
                           const std::vector<RunResult>& results) {
  std::string text = "method,problem,N,rep,status,iterations,final_loss,wall_s\n";
  for (const auto& r : results) {
    text += cfg.method + "," + cfg.problem + "," + std::to_string(r.N) + "," +
            std::to_string(r.rep) + "," + r.status + "," +
            std::to_string(r.iterations) + "," + format_sci(r.final_loss) +
            "," + format_sci(r.wall_s) + "\n";
  }
  detail::write_text(
      (std::filesystem::path(cfg.out) / "runs.csv").string(), text);
}

inline void write_errors_csv(const ExperimentConfig& cfg,
                             const std::vector<RunResult>& results) {
  std::string text = std::string(kAvgConventionNote) + "\n" + kErrorCsvHeader + "\n";
  for (const auto& r : results)
    if (r.status == "ok") text += format_error_row(r.report) + "\n";
  detail::write_text(
      (std::filesystem::path(cfg.out) / "errors.csv").string(), text);
}

inline void write_summary_csv(const ExperimentConfig& cfg,
                              const std::vector<RunResult>& results) {
  static const char* names[] = {"max_x_err",     "max_p_err", "avg_q_err",
                                "avg_u_err",     "terminal_loss", "y0_err",
                                "a_posteriori",  "iter_time_s"};
  auto field = [](const ErrorReport& r, int k) {
    const double vals[] = {r.max_x_err,     r.max_p_err, r.avg_q_err,
                           r.avg_u_err,     r.terminal_loss, r.y0_err,
                           r.a_posteriori,  r.iter_time_s};
    return vals[k];
  };
  std::string text = "N,metric,mean,std,reps_ok\n";
  for (int N : cfg.N_list) {
    std::vector<const ErrorReport*> ok;
    for (const auto& r : results)
      if (r.N == N && r.status == "ok") ok.push_back(&r.report);
    if (ok.empty()) continue;
    const double n = static_cast<double>(ok.size());
    for (int k = 0; k < 8; ++k) {
      double mean = 0.0;
      for (const auto* r : ok) mean += field(*r, k);
      mean /= n;
      double var = 0.0;
      for (const auto* r : ok) var += (field(*r, k) - mean) * (field(*r, k) - mean);
      const double sd = ok.size() > 1 ? std::sqrt(var / (n - 1.0)) : 0.0;
      text += std::to_string(N) + "," + names[k] + "," + format_sci(mean) +
              "," + format_sci(sd) + "," + std::to_string(ok.size()) + "\n";
    }
  }
  detail::write_text(
      (std::filesystem::path(cfg.out) / "summary.csv").string(), text);
}

struct RateRow {
  std::string metric;
  RateFit fit;
  int points = 0;
};

// Observed convergence rates in the step size, fitted on per-N means of the
// successful runs. Metrics with non-positive means are skipped.
inline std::vector<RateRow> fit_convergence(const ExperimentConfig& cfg,
                                            const std::vector<RunResult>& results,
                                            double T) {
  static const char* names[] = {"a_posteriori", "max_x_err", "max_p_err",
                                "avg_q_err",    "avg_u_err", "terminal_loss",
                                "y0_err"};
  auto field = [](const ErrorReport& r, int k) {
    const double vals[] = {r.a_posteriori, r.max_x_err, r.max_p_err,
                           r.avg_q_err,    r.avg_u_err, r.terminal_loss,
                           r.y0_err};
    return vals[k];
  };
  std::vector<RateRow> rows;
  for (int k = 0; k < 7; ++k) {
    std::vector<double> h, e;
    for (int N : cfg.N_list) {
      double mean = 0.0;
      int cnt = 0;
      for (const auto& r : results)
        if (r.N == N && r.status == "ok") {
          mean += field(r.report, k);
          ++cnt;
        }
      if (cnt == 0) continue;
      mean /= static_cast<double>(cnt);
      if (mean > 0.0) {
        h.push_back(T / static_cast<double>(N));
        e.push_back(mean);
      }
    }
    if (h.size() < 2) continue;
    rows.push_back({names[k], fit_rate(h, e), static_cast<int>(h.size())});
  }
  return rows;
}

inline void write_rates_csv(const ExperimentConfig& cfg,
                            const std::vector<RateRow>& rows) {
  std::string text = "metric,slope,intercept,points\n";
  for (const auto& r : rows)
    text += r.metric + "," + format_sci(r.fit.slope) + "," +
            format_sci(r.fit.intercept) + "," + std::to_string(r.points) + "\n";
  detail::write_text(
      (std::filesystem::path(cfg.out) / "rates.csv").string(), text);
}

// reference: solve the value ODE on the reporting grid, cache it, and print
// the quantities a run is judged against.
inline int cmd_reference(const ExperimentConfig& cfg, std::ostream& out) {
  namespace fs = std::filesystem;
  fs::create_directories(cfg.out);
  const LqCoefficients c = preset_problem(cfg.problem);
  const RiccatiSolution sol = integrate_riccati(c, cfg.N_ode);
  save_riccati(sol, (fs::path(cfg.out) / "riccati.bin").string());
  detail::write_text((fs::path(cfg.out) / "problem.cfg").string(),
                     echo_problem(c));

  const auto u0 = dp_optimal_control(c, sol, 0.0, c.x0);
  const auto [P0, Q0] = reference_pq(c, sol, 0.0, c.x0, u0);
  out << "problem " << cfg.problem << ", horizon " << c.T << ", d " << c.d
      << ", ell " << c.ell << ", m " << c.m << "\n";
  out << "value V(0, x0) = " << format_sci(value_at(sol, 0.0, c.x0)) << "\n";
  out << "P(0) =";
  for (int i = 0; i < c.d; ++i) out << " " << format_sci(P0(i));
  out << "\nu*(0, x0) =";
  for (int i = 0; i < c.ell; ++i) out << " " << format_sci(u0(i));
  out << "\n";
  (void)Q0;
  return 0;
}

inline int cmd_train(const ExperimentConfig& cfg, std::ostream& out) {
  const ExperimentData data = build_experiment_data(cfg);
  const auto results = run_training_suite(cfg, data, out);
  write_runs_csv(cfg, results);
  if (cfg.method == "smp") {
    write_errors_csv(cfg, results);
    write_summary_csv(cfg, results);
  }
  int failed = 0;
  for (const auto& r : results)
    if (r.status != "ok") ++failed;
  out << results.size() - failed << "/" << results.size() << " runs ok\n";
  return failed == 0 ? 0 : 1;
}

inline int cmd_convergence(const ExperimentConfig& cfg, std::ostream& out) {
  require(cfg.method == "smp", ErrorCategory::config,
          "convergence studies use the smp method");
  const ExperimentData data = build_experiment_data(cfg);
  const auto results = run_training_suite(cfg, data, out);
  write_runs_csv(cfg, results);
  write_errors_csv(cfg, results);
  write_summary_csv(cfg, results);
  const auto rates = fit_convergence(cfg, results, data.c.T);
  write_rates_csv(cfg, rates);
  for (const auto& r : rates)
    out << r.metric << ": rate " << format_sci(r.fit.slope) << " over "
        << r.points << " grids\n";
  require(!rates.empty(), ErrorCategory::domain,
          "no metric had enough successful runs to fit a rate");
  return 0;
}

// report: digest the files an earlier train/convergence pass wrote.
inline int cmd_report(const ExperimentConfig& cfg, std::ostream& out) {
  namespace fs = std::filesystem;
  const fs::path dir(cfg.out);
  bool any = false;
  for (const char* name : {"runs.csv", "summary.csv", "rates.csv"}) {
    const fs::path p = dir / name;
    if (!fs::exists(p)) continue;
    any = true;
    std::ifstream is(p);
    out << "== " << name << " ==\n" << is.rdbuf() << "\n";
  }
  require(any, ErrorCategory::io,
          "no experiment outputs under '" + cfg.out + "'");
  return 0;
}

}  // namespace smpbsde

#endif  // SMPBSDE_EXPERIMENT_HPP
