// End-to-end tests driving the actual CLI binary (path injected by CMake).
#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

namespace fs = std::filesystem;

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(CMML_BIN) + " " + args + " >> cli_stdout.log 2>&1";
  return std::system(cmd.c_str());
}

std::string slurp(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

const char* kSmallModel =
    " --loss mse --encoder pooling-mean"
    " --model.hidden=[16,16] --model.encoder_mlp=[24] --model.hyper_hidden=[16]"
    " --model.embeddings=frozen --synthetic.task_count=24 --synthetic.support_size=8"
    " --synthetic.query_size=6 --train.epochs=3 --train.batch_size=8 --train.lr=0.002";

}  // namespace

TEST_CASE("gen-synthetic, train, eval produce the expected artifacts") {
  fs::remove_all("cli_run1");
  REQUIRE(run(std::string("gen-synthetic --out cli_run1 --seed 5") + kSmallModel) == 0);
  CHECK(fs::exists("cli_run1/tasks.csv"));
  CHECK(fs::exists("cli_run1/item_embeddings.csv"));
  CHECK(fs::exists("cli_run1/user_embeddings.csv"));
  CHECK(fs::exists("cli_run1/oracle.csv"));

  REQUIRE(run(std::string("train --out cli_run1 --seed 5") + kSmallModel) == 0);
  CHECK(fs::exists("cli_run1/train_log.csv"));
  CHECK(fs::exists("cli_run1/checkpoint_best.ckpt"));
  CHECK(fs::exists("cli_run1/checkpoint_final.ckpt"));
  {
    std::string log = slurp("cli_run1/train_log.csv");
    CHECK(log.rfind("epoch,mean_loss,tasks,seconds", 0) == 0);
  }

  REQUIRE(run(std::string("eval --out cli_run1 --seed 5") + kSmallModel) == 0);
  CHECK(fs::exists("cli_run1/eval_report.csv"));
}

TEST_CASE("same seed twice gives identical eval csvs") {
  fs::remove_all("cli_run2");
  fs::remove_all("cli_run3");
  for (const char* dir : {"cli_run2", "cli_run3"}) {
    std::string base = std::string(" --out ") + dir + " --seed 11" + kSmallModel;
    REQUIRE(run("gen-synthetic" + base) == 0);
    REQUIRE(run("train" + base) == 0);
    REQUIRE(run("eval" + base) == 0);
  }
  CHECK(slurp("cli_run2/eval_report.csv") == slurp("cli_run3/eval_report.csv"));

  // training losses agree epoch by epoch (wall time may differ)
  auto loss_column = [](const fs::path& p) {
    std::ifstream in(p);
    std::string line, out;
    while (std::getline(in, line)) {
      auto second_comma = line.find(',', line.find(',') + 1);
      out += line.substr(0, second_comma) + "\n";
    }
    return out;
  };
  CHECK(loss_column("cli_run2/train_log.csv") == loss_column("cli_run3/train_log.csv"));
}

TEST_CASE("eval on an untrained bundle completes with finite metrics") {
  fs::remove_all("cli_run4");
  REQUIRE(run(std::string("gen-synthetic --out cli_run4 --seed 2") + kSmallModel) == 0);
  REQUIRE(run(std::string("eval --out cli_run4 --seed 2") + kSmallModel) == 0);
  std::string report = slurp("cli_run4/eval_report.csv");
  CHECK(report.find("AGGREGATE,mae") != std::string::npos);
  CHECK(report.find("nan") == std::string::npos);
  CHECK(report.find("inf") == std::string::npos);
}

TEST_CASE("failure modes exit nonzero with a diagnostic") {
  CHECK(run("eval --out cli_none --seed 1 --checkpoint does_not_exist.ckpt") != 0);
  CHECK(run("train --out cli_none2") != 0);  // no tasks file
  CHECK(run("train --out cli_none3 --train.epochs=notanumber") != 0);
  CHECK(run("train --out cli_none4 --no.such.key=1") != 0);
  {
    std::ofstream bad("cli_bad_config.json");
    bad << "{ this is not json";
  }
  CHECK(run("train --config cli_bad_config.json") != 0);
  fs::remove("cli_bad_config.json");
}

TEST_CASE("context export writes one row per task") {
  fs::remove_all("cli_run5");
  REQUIRE(run(std::string("gen-synthetic --out cli_run5 --seed 7") + kSmallModel) == 0);
  REQUIRE(run(std::string("export-context --out cli_run5 --seed 7") + kSmallModel) == 0);
  std::ifstream in("cli_run5/context.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line.rfind("task_id,c0,", 0) == 0);
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 24);
}

TEST_CASE("route export covers every layer and module pair") {
  fs::remove_all("cli_run6");
  // parity: m * d^2 = 4 * 64 = 256 = 16^2 with the 16-wide backbone
  std::string soft =
      " --loss mse --encoder pooling-mean --modulation soft"
      " --model.hidden=[16,16] --model.encoder_mlp=[24] --model.soft_layers=2"
      " --model.soft_modules=4 --model.soft_width=8 --model.route_width=8"
      " --model.embeddings=frozen --synthetic.task_count=6 --synthetic.support_size=5"
      " --synthetic.query_size=4";
  REQUIRE(run("gen-synthetic --out cli_run6 --seed 9" + soft) == 0);
  REQUIRE(run("export-routes --out cli_run6 --seed 9" + soft) == 0);
  std::ifstream in("cli_run6/routes.csv");
  std::string line;
  std::getline(in, line);
  CHECK(line == "task_id,layer,from_module,to_module,probability");
  int rows = 0;
  while (std::getline(in, line)) ++rows;
  CHECK(rows == 6 * 2 * 4 * 4);  // tasks x layers x m x m
}
