#include <gtest/gtest.h>

#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "smpbsde/config.hpp"
#include "smpbsde/experiment.hpp"
#include "smpbsde/lq_problem.hpp"
#include "smpbsde/riccati.hpp"

namespace {

namespace fs = std::filesystem;
using smpbsde::ConfigMap;
using smpbsde::Error;
using smpbsde::ErrorCategory;
using smpbsde::ExperimentConfig;
using smpbsde::LqCoefficients;

void expect_config_error(const std::string& text, const std::string& needle) {
  try {
    smpbsde::parse_config_text(text);
    FAIL() << "expected config error for: " << text;
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::config);
    EXPECT_NE(std::string(e.what()).find(needle), std::string::npos)
        << e.what();
  }
}

TEST(ConfigParser, SectionsKeysAndComments) {
  const std::string text =
      "# leading comment\n"
      "[experiment]\n"
      "method = smp\n"
      "  N_list = 2, 5 , 10\n"
      "; another comment style\n"
      "\n"
      "[train]\n"
      "batch_size=64\n"
      "initial_rate =   2e-3\n";
  const ConfigMap cm = smpbsde::parse_config_text(text);
  EXPECT_EQ(smpbsde::config_string(cm, "experiment", "method"), "smp");
  EXPECT_EQ(smpbsde::config_string(cm, "train", "batch_size"), "64");
  EXPECT_TRUE(smpbsde::config_has(cm, "train", "initial_rate"));
  EXPECT_FALSE(smpbsde::config_has(cm, "train", "seed"));
  EXPECT_FALSE(smpbsde::config_has(cm, "nowhere", "seed"));

  const auto ns = smpbsde::config_ints(cm, "experiment", "N_list");
  EXPECT_EQ(ns, (std::vector<int>{2, 5, 10}));
  EXPECT_DOUBLE_EQ(smpbsde::config_double(cm, "train", "initial_rate"), 2e-3);

  // the echo of a map parses back to itself
  EXPECT_EQ(smpbsde::parse_config_text(smpbsde::format_config(cm)), cm);
}

TEST(ConfigParser, ErrorsCarryLineNumbers) {
  expect_config_error("[experiment]\nmethod = smp\njust words\n", "line 3");
  expect_config_error("key = 1\n", "line 1");         // outside any section
  expect_config_error("[experiment\nx = 1\n", "line 1");
  expect_config_error("[]\n", "line 1");
  expect_config_error("[s]\n = 2\n", "line 2");       // empty key
}

TEST(ConfigParser, TypedAccessorsValidate) {
  const ConfigMap cm = smpbsde::parse_config_text(
      "[a]\nx = 2.5\nn = 7\nlist = 1 2 3.5\nword = abc\nfrac = 1.5 2\n");
  EXPECT_DOUBLE_EQ(smpbsde::config_double(cm, "a", "x"), 2.5);
  EXPECT_EQ(smpbsde::config_int(cm, "a", "n"), 7);
  EXPECT_EQ(smpbsde::config_double_or(cm, "a", "missing", 9.0), 9.0);
  EXPECT_EQ(smpbsde::config_int_or(cm, "a", "n", 1), 7);
  EXPECT_EQ(smpbsde::config_string_or(cm, "a", "word", "z"), "abc");

  auto expect_cat = [](auto&& fn) {
    try {
      fn();
      FAIL() << "expected config error";
    } catch (const Error& e) {
      EXPECT_EQ(e.category(), ErrorCategory::config);
    }
  };
  expect_cat([&] { smpbsde::config_double(cm, "a", "word"); });
  expect_cat([&] { smpbsde::config_double(cm, "a", "list"); });  // not scalar
  expect_cat([&] { smpbsde::config_int(cm, "a", "x"); });        // not integral
  expect_cat([&] { smpbsde::config_ints(cm, "a", "frac"); });
  expect_cat([&] { smpbsde::config_string(cm, "a", "absent"); });
  expect_cat([&] { smpbsde::config_string(cm, "b", "x"); });
  expect_cat([&] { smpbsde::config_matrix(cm, "a", "list", 2, 2); });

  const Eigen::MatrixXd m = smpbsde::config_matrix(cm, "a", "list", 1, 3);
  EXPECT_DOUBLE_EQ(m(0, 2), 3.5);
}

TEST(ProblemConfig, PresetAndExplicitCoefficients) {
  const ConfigMap preset =
      smpbsde::parse_config_text("[problem]\npreset = example2\n");
  const LqCoefficients c = smpbsde::problem_from_config(preset);
  const LqCoefficients want = smpbsde::example2();
  EXPECT_EQ(c.d, want.d);
  EXPECT_TRUE(c.A == want.A);
  EXPECT_TRUE(c.D[3] == want.D[3]);

  const ConfigMap full = smpbsde::parse_config_text(
      "[problem]\n"
      "d = 2\nell = 1\nm = 2\nT = 0.4\n"
      "x0 = 0.2 -0.1\n"
      "A = -0.5 0.2 0.1 -0.8\n"
      "B = 0.5 -0.3\n"
      "beta = 0.1 -0.2\n"
      "R_x = 1.0 0.2 0.2 0.8\n"
      "R_xu = 0.3 -0.4\n"
      "R_u = 0.9\n"
      "G = 1.1 -0.1 -0.1 0.9\n"
      "Sigma = 0.3 0.05 0.0 0.4\n"
      "C_2 = 0.01 0 0 0.02\n");
  const LqCoefficients e = smpbsde::problem_from_config(full);
  EXPECT_EQ(e.d, 2);
  EXPECT_EQ(e.ell, 1);
  EXPECT_DOUBLE_EQ(e.A(0, 1), 0.2);        // row-major layout
  EXPECT_DOUBLE_EQ(e.Sigma[1](0), 0.05);   // Sigma columns are noise loads
  EXPECT_DOUBLE_EQ(e.Sigma[1](1), 0.4);
  EXPECT_TRUE(e.C[0].isZero(0.0));         // omitted blocks default to zero
  EXPECT_DOUBLE_EQ(e.C[1](1, 1), 0.02);
  EXPECT_TRUE(e.D[0].isZero(0.0));
  EXPECT_DOUBLE_EQ(e.R_u_inv(0, 0), 1.0 / 0.9);

  // omitted optional keys default to zero
  const ConfigMap minimal = smpbsde::parse_config_text(
      "[problem]\nd = 1\nell = 1\nm = 1\nT = 1\nx0 = 0.5\nA = 0\nB = 1\n"
      "R_x = 0\nR_u = 1\nG = 2\n");
  const LqCoefficients s = smpbsde::problem_from_config(minimal);
  EXPECT_TRUE(s.beta.isZero(0.0));
  EXPECT_TRUE(s.R_xu.isZero(0.0));
  EXPECT_TRUE(s.Sigma[0].isZero(0.0));

  // bad shapes surface as config errors before validation
  const ConfigMap short_a = smpbsde::parse_config_text(
      "[problem]\nd = 2\nell = 1\nm = 1\nT = 1\nx0 = 0 0\nA = 1 2 3\nB = 1 0\n"
      "R_x = 1 0 0 1\nR_u = 1\nG = 1 0 0 1\n");
  EXPECT_THROW(smpbsde::problem_from_config(short_a), Error);
}

TEST(ProblemConfig, EchoRoundTripsExactly) {
  for (const char* name : {"example1", "example2"}) {
    const LqCoefficients c = smpbsde::preset_problem(name);
    const std::string echoed = smpbsde::echo_problem(c);
    const LqCoefficients back =
        smpbsde::problem_from_config(smpbsde::parse_config_text(echoed));
    EXPECT_EQ(back.d, c.d);
    EXPECT_EQ(back.ell, c.ell);
    EXPECT_EQ(back.m, c.m);
    EXPECT_EQ(back.T, c.T);
    EXPECT_TRUE(back.x0 == c.x0);
    EXPECT_TRUE(back.A == c.A);
    EXPECT_TRUE(back.B == c.B);
    EXPECT_TRUE(back.beta == c.beta);
    EXPECT_TRUE(back.R_x == c.R_x);
    EXPECT_TRUE(back.R_xu == c.R_xu);
    EXPECT_TRUE(back.R_u == c.R_u);
    EXPECT_TRUE(back.G == c.G);
    for (int j = 0; j < c.m; ++j) {
      EXPECT_TRUE(back.C[j] == c.C[j]);
      EXPECT_TRUE(back.D[j] == c.D[j]);
      EXPECT_TRUE(back.Sigma[j] == c.Sigma[j]);
    }
  }
}

TEST(ExperimentConfig, DefaultsOverridesAndRejections) {
  const ExperimentConfig def = smpbsde::experiment_from_config({});
  EXPECT_EQ(def.method, "smp");
  EXPECT_EQ(def.N_list, (std::vector<int>{2, 5, 10, 20}));
  EXPECT_EQ(def.N_fine, 240);
  EXPECT_EQ(def.batch_size, 4096);

  const ConfigMap cm = smpbsde::parse_config_text(
      "[experiment]\n"
      "problem = example2\nmethod = dp\nN_list = 3 6\nrepetitions = 2\n"
      "desk_scale = 4\nseed = 9\nN_fine = 12\nvalidation_size = 64\n"
      "validation_every = 10\nlambda = 0.5\nout = alt\n"
      "[train]\n"
      "batch_size = 128\niterations = 50\ninitial_rate = 3e-3\nhidden = 20 20\n");
  const ExperimentConfig cfg = smpbsde::experiment_from_config(cm);
  EXPECT_EQ(cfg.problem, "example2");
  EXPECT_EQ(cfg.method, "dp");
  EXPECT_EQ(cfg.N_list, (std::vector<int>{3, 6}));
  EXPECT_EQ(cfg.repetitions, 2);
  EXPECT_EQ(cfg.desk_scale, 4);
  EXPECT_EQ(cfg.seed, 9u);
  EXPECT_EQ(cfg.validation_every, 10);
  EXPECT_DOUBLE_EQ(cfg.lambda, 0.5);
  EXPECT_EQ(cfg.out, "alt");
  EXPECT_EQ(cfg.batch_size, 128);
  EXPECT_EQ(cfg.iterations, 50);
  EXPECT_DOUBLE_EQ(cfg.initial_rate, 3e-3);
  EXPECT_EQ(cfg.hidden, (std::vector<int>{20, 20}));

  auto reject = [](const std::string& text) {
    try {
      smpbsde::experiment_from_config(smpbsde::parse_config_text(text));
      FAIL() << "expected config error for: " << text;
    } catch (const Error& e) {
      EXPECT_EQ(e.category(), ErrorCategory::config);
    }
  };
  reject("[experiment]\nmethod = magic\n");
  reject("[experiment]\ndesk_scale = 3\n");
  reject("[experiment]\nN_list = 7\n");  // 240 not divisible by 7
  reject("[experiment]\nN_list = 0 2\n");
  reject("[experiment]\nrepetitions = 0\n");
  reject("[experiment]\nlambda = -1\n");
  reject("[experiment]\nout =\n");
}

TEST(ExperimentConfig, ResolvesPerRunTraining) {
  ExperimentConfig cfg;
  cfg.desk_scale = 4;
  smpbsde::validate_experiment(cfg);
  const auto tc = smpbsde::resolve_training(cfg, 10, 0);
  EXPECT_EQ(tc.N, 10);
  EXPECT_EQ(tc.batch_size, 1024);        // 4096 / 4
  EXPECT_EQ(tc.iterations, (1 << 13) / 4);
  EXPECT_DOUBLE_EQ(tc.initial_rate, 1e-3);
  EXPECT_EQ(tc.hidden, cfg.hidden);

  const auto t5 = smpbsde::resolve_training(cfg, 5, 0);
  EXPECT_DOUBLE_EQ(t5.initial_rate, 5e-4);
  EXPECT_EQ(t5.iterations, (1 << 12) / 4);
  EXPECT_NE(t5.seed, tc.seed);
  EXPECT_NE(smpbsde::resolve_training(cfg, 5, 1).seed, t5.seed);

  cfg.iterations = 100;
  cfg.initial_rate = 7e-3;
  cfg.desk_scale = 8;
  const auto to = smpbsde::resolve_training(cfg, 10, 0);
  EXPECT_EQ(to.iterations, 12);  // floor(100 / 8)
  EXPECT_DOUBLE_EQ(to.initial_rate, 7e-3);
}

TEST(ExperimentData, SharedReferenceCoversEveryGrid) {
  ExperimentConfig cfg;
  cfg.problem = "example1";
  cfg.N_list = {2, 4};
  cfg.N_fine = 40;
  cfg.validation_size = 16;
  cfg.desk_scale = 2;
  smpbsde::validate_experiment(cfg);
  const auto data = smpbsde::build_experiment_data(cfg);
  EXPECT_EQ(data.reference.M, 8);  // validation_size / desk_scale
  EXPECT_EQ(data.reference.num_nodes(), 5);  // union {0,10,20,30,40}
  EXPECT_EQ(data.sol_fine.n_steps, 40);
  ASSERT_TRUE(data.coarse.count(2) == 1 && data.coarse.count(4) == 1);

  const auto val = smpbsde::validation_for(data, 4);
  EXPECT_EQ(val.ci.N, 4);
  EXPECT_EQ(val.ci.M, 8);
  EXPECT_EQ(val.reference.brownian_seed, val.ci.seed);
  EXPECT_EQ(val.sol, &data.sol_fine);
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& name)
      : path(fs::temp_directory_path() / name) {
    fs::remove_all(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

TEST(Commands, ReferenceWritesTheValueTable) {
  TempDir dir("smpbsde_cmd_reference");
  ExperimentConfig cfg;
  cfg.problem = "example1";
  cfg.N_ode = 400;
  cfg.out = dir.path.string();
  smpbsde::validate_experiment(cfg);
  std::ostringstream out;
  EXPECT_EQ(smpbsde::cmd_reference(cfg, out), 0);
  EXPECT_NE(out.str().find("value V(0, x0) ="), std::string::npos);
  EXPECT_NE(out.str().find("u*(0, x0) ="), std::string::npos);

  const auto sol = smpbsde::load_riccati((dir.path / "riccati.bin").string());
  EXPECT_EQ(sol.n_steps, 400);
  const auto echoed = smpbsde::load_config((dir.path / "problem.cfg").string());
  const LqCoefficients back = smpbsde::problem_from_config(echoed);
  EXPECT_TRUE(back.G == smpbsde::example1().G);
}

TEST(Commands, TrainWritesRunArtifacts) {
  TempDir dir("smpbsde_cmd_train");
  ExperimentConfig cfg;
  cfg.problem = "example1";
  cfg.method = "smp";
  cfg.N_list = {2};
  cfg.N_fine = 40;
  cfg.batch_size = 8;
  cfg.iterations = 30;
  cfg.initial_rate = 1e-3;
  cfg.hidden = {8};
  cfg.validation_size = 8;
  cfg.out = dir.path.string();
  smpbsde::validate_experiment(cfg);
  std::ostringstream log;
  EXPECT_EQ(smpbsde::cmd_train(cfg, log), 0);
  for (const char* name :
       {"runs.csv", "errors.csv", "summary.csv", "relative_smp_N2_rep0.csv",
        "loss_smp_N2_rep0.csv", "smp_N2_rep0.ckpt"})
    EXPECT_TRUE(fs::exists(dir.path / name)) << name;

  std::ifstream runs(dir.path / "runs.csv");
  std::string header, row;
  std::getline(runs, header);
  std::getline(runs, row);
  EXPECT_EQ(header, "method,problem,N,rep,status,iterations,final_loss,wall_s");
  EXPECT_NE(row.find("smp,example1,2,0,ok,30"), std::string::npos);

  // the checkpoint a run leaves behind restores to a usable state
  const auto st = smpbsde::load_checkpoint<float>(
      (dir.path / "smp_N2_rep0.ckpt").string());
  EXPECT_EQ(st.step, 30);
  EXPECT_EQ(st.phi.size(), 2u);

  std::ostringstream report;
  EXPECT_EQ(smpbsde::cmd_report(cfg, report), 0);
  EXPECT_NE(report.str().find("== runs.csv =="), std::string::npos);
  EXPECT_NE(report.str().find("== summary.csv =="), std::string::npos);

  TempDir empty("smpbsde_cmd_report_empty");
  ExperimentConfig none = cfg;
  none.out = empty.path.string();
  try {
    smpbsde::cmd_report(none, report);
    FAIL() << "expected io error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::io);
  }
}

TEST(Commands, DpTrainWritesHistories) {
  TempDir dir("smpbsde_cmd_dp");
  ExperimentConfig cfg;
  cfg.problem = "example1";
  cfg.method = "dp";
  cfg.N_list = {2};
  cfg.N_fine = 40;
  cfg.batch_size = 8;
  cfg.iterations = 20;
  cfg.initial_rate = 1e-3;
  cfg.hidden = {8};
  cfg.validation_size = 8;
  cfg.validation_every = 10;
  cfg.out = dir.path.string();
  smpbsde::validate_experiment(cfg);
  std::ostringstream log;
  EXPECT_EQ(smpbsde::cmd_train(cfg, log), 0);
  EXPECT_TRUE(fs::exists(dir.path / "runs.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "loss_dp_N2_rep0.csv"));
  EXPECT_TRUE(fs::exists(dir.path / "history_dp_N2_rep0.csv"));
  EXPECT_FALSE(fs::exists(dir.path / "errors.csv"));  // smp-only panel

  std::ifstream hist(dir.path / "history_dp_N2_rep0.csv");
  std::string header;
  std::getline(hist, header);
  EXPECT_EQ(header, "step,robust_loss,mean_y0,max_x_err,avg_u_err");
  int rows = 0;
  std::string line;
  while (std::getline(hist, line)) ++rows;
  EXPECT_EQ(rows, 3);  // steps 0, 10 and 20
}

TEST(Commands, ConvergenceFitsRates) {
  TempDir dir("smpbsde_cmd_conv");
  ExperimentConfig cfg;
  cfg.problem = "example1";
  cfg.method = "smp";
  cfg.N_list = {2, 4};
  cfg.N_fine = 40;
  cfg.batch_size = 8;
  cfg.iterations = 15;
  cfg.initial_rate = 1e-3;
  cfg.hidden = {8};
  cfg.validation_size = 8;
  cfg.out = dir.path.string();
  smpbsde::validate_experiment(cfg);
  std::ostringstream log;
  EXPECT_EQ(smpbsde::cmd_convergence(cfg, log), 0);
  EXPECT_TRUE(fs::exists(dir.path / "rates.csv"));
  std::ifstream rates(dir.path / "rates.csv");
  std::string header;
  std::getline(rates, header);
  EXPECT_EQ(header, "metric,slope,intercept,points");
  std::string all((std::istreambuf_iterator<char>(rates)),
                  std::istreambuf_iterator<char>());
  EXPECT_NE(all.find("a_posteriori,"), std::string::npos);
  EXPECT_NE(log.str().find("a_posteriori: rate"), std::string::npos);

  ExperimentConfig dp = cfg;
  dp.method = "dp";
  try {
    smpbsde::cmd_convergence(dp, log);
    FAIL() << "expected config error";
  } catch (const Error& e) {
    EXPECT_EQ(e.category(), ErrorCategory::config);
  }
}

}  // namespace
