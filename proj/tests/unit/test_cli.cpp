#include <doctest.h>
#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "../../tools/cli.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace zodiac::cli;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run(args, out, err);
  return {code, out.str(), err.str()};
}

fs::path scratch(const std::string& name) {
  auto p = fs::temp_directory_path() / ("zodiac_cli_" + name);
  fs::remove_all(p);
  return p;
}

json read_json(const fs::path& p) {
  std::ifstream f(p);
  return json::parse(f);
}

// A training invocation small enough for unit tests.
std::vector<std::string> quick_train(const std::string& out) {
  return {"train", "--config", "toy_copy", "--max-steps", "3", "--batch-size", "8", "--out", out};
}

}  // namespace

TEST_CASE("params reports the per-instance increase") {
  const auto r = invoke({"params", "--d-model", "64", "--heads", "4", "--layers", "2x2"});
  CHECK(r.code == kOk);
  CHECK(r.out.find("per-instance extra: 4,160") != std::string::npos);
  CHECK(r.out.find("zmha instances: 6") != std::string::npos);
  CHECK(r.out.find("measured difference: 24,960 (matches)") != std::string::npos);
  const auto big = invoke({"params", "--d-model", "512", "--heads", "8", "--layers", "6x6"});
  CHECK(big.out.find("per-instance extra: 262,656") != std::string::npos);
  CHECK(big.out.find("stack total: 4,727,808") != std::string::npos);
  const auto nb = invoke({"params", "--d-model", "8", "--heads", "2", "--layers", "1x1", "--no-bias"});
  CHECK(nb.out.find("per-instance extra: 64") != std::string::npos);
}

TEST_CASE("exit codes") {
  CHECK(invoke({}).code == kConfigError);
  CHECK(invoke({"train", "--gate", "relu"}).code == kConfigError);
  CHECK(invoke({"train", "--config", "no-such-preset"}).code == kConfigError);
  CHECK(invoke({"params", "--layers", "six"}).code == kConfigError);
  CHECK(invoke({"params", "--d-model", "10", "--heads", "4"}).code == kConfigError);
  CHECK(invoke({"ablate", "--preset", "table4-r99"}).code == kConfigError);

  const auto dir = scratch("bad_ckpt");
  fs::create_directories(dir);
  {
    std::ofstream f(dir / "junk.zdck", std::ios::binary);
    f << "not a checkpoint";
  }
  const auto r = invoke({"eval", "--checkpoint", (dir / "junk.zdck").string()});
  CHECK(r.code == kContractViolation);
  CHECK(r.err.find("contract violation") != std::string::npos);

  const auto bad = dir / "bad.json";
  {
    std::ofstream f(bad);
    f << R"({"train": {"warmup": 4000}})";
  }
  const auto c = invoke({"train", "--config", bad.string()});
  CHECK(c.code == kConfigError);
  CHECK(c.err.find("train.warmup") != std::string::npos);
  fs::remove_all(dir);
}

TEST_CASE("gradcheck subcommand passes and catches a corrupted block") {
  CHECK(invoke({"gradcheck", "--seed", "3"}).code == kOk);
  const auto r = invoke({"gradcheck", "--corrupt", "rca/q1"});
  CHECK(r.code == kFailed);
  CHECK(r.out.find("rca/q1") != std::string::npos);
}

TEST_CASE("overrides land in the recorded config") {
  const auto dir = scratch("overrides");
  auto args = quick_train(dir.string());
  for (const char* a : {"--seed", "77", "--model-seed", "5", "--task-seed", "9", "--gate", "tanh", "--zeta", "0.5",
                        "--zodiac-dropout", "0.15", "--system-dropout", "0.05", "--gelu-on-v", "false", "--gelu-form",
                        "approx", "--ffn", "relu", "--lr", "0.001", "--task", "reverse", "--beam", "2"})
    args.emplace_back(a);
  const auto r = invoke(args);
  REQUIRE_MESSAGE(r.code == kOk, r.err);
  const auto s = read_json(dir / "summary.json");
  const auto& c = s["config"];
  CHECK(c["train"]["seed"] == 77);
  CHECK(c["model"]["seed"] == 5);
  CHECK(c["task"]["seed"] == 9);
  CHECK(c["model"]["attention"]["gate"] == "tanh");
  CHECK(c["model"]["attention"]["zoneout"] == 0.5);
  CHECK(c["model"]["attention"]["zodiac_dropout"] == 0.15);
  CHECK(c["model"]["attention"]["system_dropout"] == 0.05);
  CHECK(c["model"]["attention"]["gelu"]["on_v"] == false);
  CHECK(c["model"]["attention"]["gelu"]["on_qk"] == true);
  CHECK(c["model"]["attention"]["gelu_form"] == "approx");
  CHECK(c["model"]["ffn_activation"] == "relu");
  CHECK(c["train"]["base_lr"] == 0.001);
  CHECK(c["train"]["eval_beam_size"] == 2);
  CHECK(c["task"]["kind"] == "reverse");
  CHECK(s["result"]["steps"] == 3);
  CHECK(fs::exists(dir / "metrics.tsv"));
  CHECK(fs::exists(dir / "final.zdck"));

  const auto e = invoke({"eval", "--checkpoint", (dir / "final.zdck").string(), "--out", (dir / "eval").string()});
  CHECK(e.code == kOk);
  CHECK(e.out.find("token_accuracy") != std::string::npos);
  CHECK(read_json(dir / "eval" / "summary.json")["task"]["kind"] == "reverse");
  fs::remove_all(dir);
}

TEST_CASE("output directory falls back to the environment") {
  const auto dir = scratch("env");
  ::setenv(kOutDirEnv, dir.string().c_str(), 1);
  const auto r = invoke({"train", "--config", "baseline", "--max-steps", "2", "--batch-size", "8"});
  ::unsetenv(kOutDirEnv);
  CHECK(r.code == kOk);
  CHECK(fs::exists(dir / "baseline" / "summary.json"));
  fs::remove_all(dir);
}
