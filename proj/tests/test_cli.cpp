// Subprocess tests for the command-line tool: pipeline wiring, output
// artifacts, determinism across runs, and the exit-code contract
// (0 ok, 2 input, 3 numeric, 4 format).

#include <gtest/gtest.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <string>

#ifndef T2DIFF_CLI_PATH
#error "T2DIFF_CLI_PATH must point at the built binary"
#endif

namespace fs = std::filesystem;

namespace {

struct CliResult {
  int code = -1;
  std::string out;  // stdout and stderr merged
};

CliResult run_cli(const std::string& args) {
  const std::string cmd = std::string(T2DIFF_CLI_PATH) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  CliResult res;
  char buf[512];
  while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) res.out.append(buf, n);
  const int status = pclose(pipe);
  res.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  return res;
}

std::string slurp(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(is), std::istreambuf_iterator<char>()};
}

class CliPipeline : public ::testing::Test {
 protected:
  void SetUp() override {
    dir = fs::temp_directory_path() / "t2diff_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);

    std::ofstream log(dir / "toy.dat");
    for (int u = 1; u <= 12; ++u) {
      for (int i = 0; i < 5; ++i) {
        const int item = 1 + (u + i) % 9;
        log << u << "::" << item << "::5::" << 1000 + 60 * i << "\n";
      }
    }
    log.close();

    std::ofstream cfg(dir / "toy.cfg");
    cfg << "d = 4\nmax_len = 6\nk_max = 2\nenc_heads = 2\nact_hidden = 4\n"
           "out_hidden = 8\nbatch = 16\nepochs = 1\nlr = 0.003\n"
           "sched_a = 0.01\nsched_b = 0.2\nsched_steps = 5\nseed = 4\n";
    cfg.close();

    auto prep = run_cli("prepare-data --dataset ml1m --input " + (dir / "toy.dat").string() +
                        " --out " + (dir / "toy.t2df").string() + " --max-len 6 --k-max 2");
    ASSERT_EQ(prep.code, 0) << prep.out;
    ASSERT_NE(prep.out.find("12 users / 9 items"), std::string::npos) << prep.out;
  }

  void TearDown() override { fs::remove_all(dir); }

  std::string data() const { return (dir / "toy.t2df").string(); }
  std::string config() const { return (dir / "toy.cfg").string(); }

  fs::path dir;
};

}  // namespace

TEST(Cli, HelpIsSuccessAndMissingSubcommandIsInputError) {
  EXPECT_EQ(run_cli("--help").code, 0);
  EXPECT_EQ(run_cli("").code, 2);
  EXPECT_EQ(run_cli("launch-rockets").code, 2);
}

TEST(Cli, DumpScheduleEmitsOneRowPerStep) {
  CliResult r = run_cli("dump-schedule --a 0.01 --b 0.2 --steps 5");
  EXPECT_EQ(r.code, 0);
  EXPECT_EQ(std::count(r.out.begin(), r.out.end(), '\n'), 6);  // header + 5 rows
  EXPECT_NE(r.out.find("t,beta,alpha_bar,beta_tilde"), std::string::npos);
  // beta >= 1 at t=steps is an input error, not a crash
  EXPECT_EQ(run_cli("dump-schedule --a 0.5 --b 1.0 --steps 10").code, 2);
}

TEST(Cli, GradcheckReportsPass) {
  CliResult r = run_cli("gradcheck --d 4 --coords 3");
  EXPECT_EQ(r.code, 0) << r.out;
  EXPECT_EQ(r.out.rfind("PASS", 0), 0u) << r.out;
}

TEST_F(CliPipeline, TrainEvalRoundTripWithArtifacts) {
  const std::string out = (dir / "run").string();
  CliResult tr = run_cli("train --data " + data() + " --config " + config() + " --out " + out);
  ASSERT_EQ(tr.code, 0) << tr.out;
  EXPECT_TRUE(fs::exists(dir / "run" / "model.t2pw"));
  EXPECT_TRUE(fs::exists(dir / "run" / "config.txt"));
  EXPECT_TRUE(fs::exists(dir / "run" / "trace.csv"));
  EXPECT_TRUE(fs::exists(dir / "run" / "manifest.json"));
  EXPECT_NE(slurp(dir / "run" / "trace.csv").find("step,l_total"), std::string::npos);

  // config.txt sits next to the checkpoint, so eval needs no --config flag
  CliResult ev = run_cli("eval --checkpoint " + out + "/model.t2pw --data " + data() +
                         " --k 2,5 --out-json " + out + "/report.json");
  ASSERT_EQ(ev.code, 0) << ev.out;
  EXPECT_NE(ev.out.find("recall@2 = "), std::string::npos);
  EXPECT_NE(ev.out.find("mrr@5 = "), std::string::npos);
  EXPECT_TRUE(fs::exists(dir / "run" / "report.json"));

  // K order on the command line does not matter
  CliResult ev2 = run_cli("eval --checkpoint " + out + "/model.t2pw --data " + data() +
                          " --k 5,2");
  EXPECT_EQ(ev2.out.substr(0, ev2.out.find("test users")),
            ev.out.substr(0, ev.out.find("test users")));
}

TEST_F(CliPipeline, SameSeedGivesByteIdenticalCheckpoints) {
  const std::string a = (dir / "a").string(), b = (dir / "b").string();
  ASSERT_EQ(run_cli("train --data " + data() + " --config " + config() + " --out " + a).code, 0);
  ASSERT_EQ(run_cli("train --data " + data() + " --config " + config() + " --out " + b).code, 0);
  EXPECT_EQ(slurp(dir / "a" / "model.t2pw"), slurp(dir / "b" / "model.t2pw"));
  EXPECT_FALSE(slurp(dir / "a" / "model.t2pw").empty());
  // a different seed changes the weights
  const std::string c = (dir / "c").string();
  ASSERT_EQ(run_cli("train --data " + data() + " --config " + config() + " --out " + c +
                    " --seed 99")
                .code,
            0);
  EXPECT_NE(slurp(dir / "a" / "model.t2pw"), slurp(dir / "c" / "model.t2pw"));
}

TEST_F(CliPipeline, ExitCodesFollowTheContract) {
  // missing input file
  EXPECT_EQ(run_cli("prepare-data --dataset ml1m --input " + (dir / "nope.dat").string() +
                    " --out " + (dir / "x.t2df").string())
                .code,
            2);
  // unknown config key, named in the message
  std::ofstream bad(dir / "bad.cfg");
  bad << "learning_rate = 0.1\n";
  bad.close();
  CliResult r = run_cli("train --data " + data() + " --config " + (dir / "bad.cfg").string() +
                        " --out " + (dir / "x").string());
  EXPECT_EQ(r.code, 2);
  EXPECT_NE(r.out.find("learning_rate"), std::string::npos) << r.out;
  // corrupt checkpoint magic
  std::ofstream fake(dir / "fake.t2pw", std::ios::binary);
  fake << "JUNKJUNKJUNK";
  fake.close();
  EXPECT_EQ(run_cli("eval --checkpoint " + (dir / "fake.t2pw").string() + " --data " + data() +
                    " --config " + config())
                .code,
            4);
  // invalid K list
  const std::string run = (dir / "r").string();
  ASSERT_EQ(run_cli("train --data " + data() + " --config " + config() + " --out " + run).code,
            0);
  EXPECT_EQ(run_cli("eval --checkpoint " + run + "/model.t2pw --data " + data() + " --k 2,zero")
                .code,
            2);
}

TEST_F(CliPipeline, DivergenceSurfacesAsNumericFailure) {
  std::ofstream cfg(dir / "nan.cfg");
  cfg << "d = 4\nmax_len = 6\nk_max = 2\nenc_heads = 2\nact_hidden = 4\nout_hidden = 8\n"
         "batch = 16\nepochs = 2\nlr = nan\nsched_a = 0.01\nsched_b = 0.2\nsched_steps = 5\n"
         "seed = 4\n";
  cfg.close();
  CliResult r = run_cli("train --data " + data() + " --config " + (dir / "nan.cfg").string() +
                        " --out " + (dir / "x").string());
  EXPECT_EQ(r.code, 3) << r.out;
  EXPECT_NE(r.out.find("diverged at step"), std::string::npos) << r.out;
}

TEST_F(CliPipeline, AblateWritesTheGridTable) {
  CliResult r = run_cli("ablate --data " + data() + " --config " + config() +
                        " --axis schedule --k 2 --out " + (dir / "grid").string());
  ASSERT_EQ(r.code, 0) << r.out;
  const std::string csv = slurp(dir / "grid" / "ablation_schedule.csv");
  EXPECT_NE(csv.find("linear,recall,2,"), std::string::npos);
  EXPECT_NE(csv.find("log,recall,2,"), std::string::npos);
  EXPECT_NE(csv.find("exp,recall,2,"), std::string::npos);
  EXPECT_EQ(run_cli("ablate --data " + data() + " --config " + config() + " --axis sideways")
                .code,
            2);
}
