#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include "rcrank/domain.hpp"
#include "rcrank/runconfig.hpp"

using namespace rcrank;
namespace fs = std::filesystem;

#ifndef RCRANK_BIN
#define RCRANK_BIN "rcrank"
#endif

namespace {

int run(const std::string& args) {
  std::string cmd = std::string(RCRANK_BIN) + " " + args + " > cli_stdout.txt 2> cli_stderr.txt";
  int status = std::system(cmd.c_str());
  return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  return std::string(std::istreambuf_iterator<char>(f), {});
}

struct TmpDir {
  fs::path dir;
  TmpDir() {
    dir = fs::temp_directory_path() / "rcrank_cli_test";
    fs::remove_all(dir);
    fs::create_directories(dir);
    fs::current_path(dir);
  }
};

}  // namespace

TEST_CASE("cli pipeline, exit codes, determinism") {
  TmpDir tmp;

  // unknown config key -> validation exit code 3
  CHECK(run("gen-data --out x.jsonl --set nope=1") == 3);
  // missing input -> exit code 2
  CHECK(run("train --data missing.jsonl --out m.ckpt") == 2);

  // deterministic generation: same seed -> checksum-identical files
  CHECK(run("gen-data --out a.jsonl --seed 42 --set gen.total=80 --set gen.labeled=24") == 0);
  CHECK(run("gen-data --out b.jsonl --seed 42 --set gen.total=80 --set gen.labeled=24") == 0);
  CHECK(slurp("a.jsonl") == slurp("b.jsonl"));
  CHECK(fs::exists("a.jsonl.resolved.cfg"));
  CHECK(fs::exists("a.jsonl.specs.jsonl"));

  // resolved config echo is a loadable config that reproduces the run
  RunConfig echoed = RunConfig::from_file("a.jsonl.resolved.cfg");
  CHECK(echoed.get_int("gen.total") == 80);

  // oracle stub: estimates = labels -> perfect accuracies, zero MSE
  CHECK(run("eval --model oracle --data a.jsonl --report oracle.json") == 0);
  json rep = json::parse(slurp("oracle.json"));
  CHECK(rep["v_acc"].get<double>() == 1.0);
  CHECK(rep["top1_acc"].get<double>() == 1.0);
  CHECK(rep["mc_acc"].get<double>() == 1.0);
  CHECK(rep["mse_mean"].get<double>() == 0.0);
  CHECK(rep["tau"].get<double>() == 1.0);

  // pretrain + train + eval + diagnose round trip at toy scale
  CHECK(run("pretrain --data a.jsonl --out enc.ckpt --epochs 1 --set pretrain.batch=32 --threads 2") == 0);
  CHECK(fs::exists("enc.ckpt.log.csv"));  // per-epoch pretraining loss curve
  CHECK(run("train --data a.jsonl --pretrained enc.ckpt --out model.ckpt --set train.epochs=2 "
            "--set train.batch=16 --threads 2") == 0);
  CHECK(fs::exists("model.ckpt.log.csv"));
  CHECK(run("eval --model model.ckpt --data a.jsonl --report rep.json --specs a.jsonl.specs.jsonl") == 0);
  json trained = json::parse(slurp("rep.json"));
  CHECK(trained.contains("end_to_end"));

  // single-record diagnose: take the first record line
  {
    std::ifstream in("a.jsonl");
    std::string header, record;
    std::getline(in, header);
    std::getline(in, record);
    std::ofstream out("one.json");
    out << record << '\n';
  }
  CHECK(run("diagnose --model model.ckpt --query one.json --out diag.json") == 0);
  json diag = json::parse(slurp("diag.json"));
  CHECK(diag.contains("diagnosis"));
  CHECK(diag["raw_estimates"].size() == 5);

  // identical seeds give identical checkpoints (determinism across runs)
  CHECK(run("train --data a.jsonl --out m1.ckpt --set train.epochs=1 --set train.batch=16 --threads 1") == 0);
  CHECK(run("train --data a.jsonl --out m2.ckpt --set train.epochs=1 --set train.batch=16 --threads 2") == 0);
  CHECK(slurp("m1.ckpt") == slurp("m2.ckpt"));

  // ablate and sweep-lambda at toy scale
  CHECK(run("ablate --data a.jsonl --variants full,only_log --seeds 1 --out abl --set train.epochs=1 "
            "--set train.batch=16 --set pretrain.epochs=1 --threads 2") == 0);
  CHECK(fs::exists("abl.json"));
  CHECK(fs::exists("abl.csv"));
  CHECK(fs::exists("abl.top1_acc.svg"));
  json abl = json::parse(slurp("abl.json"));
  CHECK(abl["rows"].size() == 2);

  CHECK(run("sweep-lambda --data a.jsonl --values 1,7 --out sweep.json --set train.epochs=1 "
            "--set train.batch=16 --set pretrain.epochs=1 --threads 2") == 0);
  json sweep = json::parse(slurp("sweep.json"));
  REQUIRE(sweep.size() == 2);
  CHECK(sweep[0]["lambda"].get<double>() == 1.0);
  CHECK(sweep[1]["lambda"].get<double>() == 7.0);
}
