#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "json.hpp"
#include "lingo/checkpoint.hpp"
#include "lingo/commands.hpp"
#include "lingo/config.hpp"
#include "lingo/eval.hpp"

using namespace lingo;
namespace fs = std::filesystem;

namespace {

#ifndef LINGO_BIN
#define LINGO_BIN "lingo"
#endif

int run_cli(const std::string& args, std::string* output = nullptr) {
  const std::string out_file =
      (fs::temp_directory_path() / "lingo_cli_out.txt").string();
  const std::string cmd =
      std::string(LINGO_BIN) + " " + args + " > " + out_file + " 2>&1";
  const int rc = std::system(cmd.c_str());
  if (output) {
    std::ifstream f(out_file);
    std::stringstream ss;
    ss << f.rdbuf();
    *output = ss.str();
  }
  return WEXITSTATUS(rc);
}

// a configuration small enough that training commands finish in seconds
std::string tiny_flags(std::uint64_t seed, const std::string& out) {
  std::ostringstream os;
  os << "--seed " << seed
     << " --set iterations=3 --set batch_size=3 --set replay_sample=1"
     << " --set probe_every=2 --set probe_sessions=4 --set threads=2"
     << " --set checkpoint_every=0"
     << " --set dims.state=16 --set dims.embed=8 --set dims.key=12"
     << " --set dims.extract_state=10 --set dims.extract_out=10"
     << " --set dims.fmlp_hidden=10 --set dims.conv_channels=[4,6]"
     << " --set dims.enc_fc=[12] --set dims.controller_hidden=[8,8]"
     << " --set dims.value_hidden=[8,6]"
     << " --out " << out;
  return os.str();
}

std::string strip_wallclock(const std::string& metrics_path) {
  std::ifstream f(metrics_path);
  REQUIRE(f.good());
  std::string line, out;
  while (std::getline(f, line)) {
    auto j = nlohmann::json::parse(line);
    j.erase("wallclock");
    out += j.dump() + "\n";
  }
  return out;
}

}  // namespace

TEST_CASE("profile defaults and override precedence") {
  RunConfig desk = RunConfig::from_profile("desk");
  CHECK(desk.dims.state == 64);
  CHECK(desk.train.learning_rate == doctest::Approx(0.01));
  RunConfig paper = RunConfig::from_profile("paper");
  CHECK(paper.dims.state == 1024);
  CHECK(paper.dims.value_hidden == std::vector<int>{512, 204});
  CHECK(paper.train.learning_rate == doctest::Approx(1e-5));
  CHECK(paper.train.weight_decay == doctest::Approx(1.6e-3));
  CHECK_THROWS_AS(RunConfig::from_profile("huge"), ConfigError);

  RunConfig c = RunConfig::load("", {"learning_rate=0.5", "dims.state=32"},
                                "desk");
  CHECK(c.train.learning_rate == doctest::Approx(0.5));
  CHECK(c.dims.state == 32);
  CHECK_THROWS_AS(RunConfig::load("", {"no_such_key=1"}, "desk"),
                  ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"gamma=1.5"}, "desk"), ConfigError);
  CHECK_THROWS_AS(RunConfig::load("", {"broken"}, "desk"), ConfigError);
}

TEST_CASE("config file parsing and hashing") {
  const std::string path = "cfg_test.json";
  {
    std::ofstream f(path);
    f << R"({"profile":"desk","mode":"imitation","iterations":7,)"
      << R"("dims":{"state":24}})";
  }
  RunConfig c = RunConfig::load(path, {}, "");
  CHECK(c.train.mode == Mode::imitation);
  CHECK(c.train.iterations == 7);
  CHECK(c.dims.state == 24);

  RunConfig c2 = RunConfig::load(path, {}, "");
  CHECK(c.hash() == c2.hash());
  RunConfig c3 = RunConfig::load(path, {"iterations=8"}, "");
  CHECK(c.hash() != c3.hash());
  std::remove(path.c_str());

  CHECK_THROWS_AS(RunConfig::load("missing_config.json", {}, ""),
                  ConfigError);
}

TEST_CASE("checkpoint round trip and verification") {
  ParamStore a;
  Rng rng(3);
  a.add("w", Tensor({4, 3}));
  a.add("b", Tensor({5}), false);
  for (auto& x : a.get("w").value.v) x = rng.normal();
  for (auto& x : a.get("b").value.v) x = rng.normal();

  const std::string path = "ckpt_test.bin";
  save_checkpoint(a, path, 0xABCDull);
  CHECK(checkpoint_config_hash(path) == 0xABCDull);

  ParamStore b;
  b.add("w", Tensor({4, 3}));
  b.add("b", Tensor({5}), false);
  load_checkpoint(b, path, 0xABCDull);
  CHECK(b.get("w").value.v == a.get("w").value.v);
  CHECK(b.get("b").value.v == a.get("b").value.v);

  CHECK_THROWS_AS(load_checkpoint(b, path, 0x1234ull), CheckpointError);

  ParamStore wrong;
  wrong.add("w", Tensor({3, 3}));
  wrong.add("b", Tensor({5}), false);
  CHECK_THROWS_AS(load_checkpoint(wrong, path, 0xABCDull), CheckpointError);

  ParamStore renamed;
  renamed.add("w2", Tensor({4, 3}));
  renamed.add("b", Tensor({5}), false);
  CHECK_THROWS_AS(load_checkpoint(renamed, path, 0xABCDull), CheckpointError);

  CHECK_THROWS_AS(load_checkpoint(b, "no_such.ckpt", 0xABCDull),
                  CheckpointError);
  std::remove(path.c_str());
}

TEST_CASE("workbench wires vocabulary from both splits") {
  RunConfig c = RunConfig::from_profile("desk");
  Workbench w(c);
  CHECK(w.train_data.num_classes() == 8);
  CHECK(w.test_data.num_classes() == 4);
  CHECK(w.vocab.contains("bear"));
  CHECK(w.vocab.contains("apple"));
  CHECK(w.grammar.word_level());  // word task by default
  RunConfig s = RunConfig::load("", {"task=sentence"}, "desk");
  Workbench ws(s);
  CHECK(!ws.grammar.word_level());
}

TEST_CASE("cli: train writes artifacts and reruns reproduce metrics") {
  const std::string dir1 = (fs::temp_directory_path() / "lh_run1").string();
  const std::string dir2 = (fs::temp_directory_path() / "lh_run2").string();
  fs::remove_all(dir1);
  fs::remove_all(dir2);

  std::string out;
  CHECK(run_cli("train " + tiny_flags(7, dir1), &out) == 0);
  CHECK(fs::exists(dir1 + "/metrics.jsonl"));
  CHECK(fs::exists(dir1 + "/resolved_config.json"));
  CHECK(fs::exists(dir1 + "/vocab.txt"));
  CHECK(fs::exists(dir1 + "/checkpoint_final.ckpt"));

  int lines = 0;
  std::ifstream mf(dir1 + "/metrics.jsonl");
  std::string line;
  while (std::getline(mf, line)) {
    auto j = nlohmann::json::parse(line);
    CHECK(j.contains("iter"));
    CHECK(j.contains("mean_reward"));
    CHECK(j.contains("L_I"));
    CHECK(j.contains("L_R"));
    CHECK(j.contains("L_V"));
    CHECK(j.contains("probe_success_rate"));
    CHECK(j.contains("wallclock"));
    ++lines;
  }
  CHECK(lines == 3);

  CHECK(run_cli("train " + tiny_flags(7, dir2)) == 0);
  CHECK(strip_wallclock(dir1 + "/metrics.jsonl") ==
        strip_wallclock(dir2 + "/metrics.jsonl"));
}

TEST_CASE("cli: config and checkpoint failures use the documented codes") {
  std::string out;
  CHECK(run_cli("train --set train_manifest=missing.json", &out) == 2);
  CHECK(out.find("manifest") != std::string::npos);
  CHECK(run_cli("train --set no_such=1") == 2);
  CHECK(run_cli("eval --checkpoint nowhere.ckpt --sessions 2") == 3);
  // overlapping splits refuse to run
  CHECK(run_cli("train --set test_manifest=preset:desk_train") == 2);
  CHECK(run_cli("nonsense") == 2);
}

TEST_CASE("cli: eval, transcript, trace and features on a tiny checkpoint") {
  const std::string dir = (fs::temp_directory_path() / "lh_run3").string();
  fs::remove_all(dir);
  REQUIRE(run_cli("train " + tiny_flags(11, dir)) == 0);
  const std::string ckpt = " --checkpoint " + dir + "/checkpoint_final.ckpt";
  const std::string flags = tiny_flags(11, dir);

  std::string out;
  CHECK(run_cli("eval " + flags + ckpt + " --sessions 20", &out) == 0);
  auto j = nlohmann::json::parse(out);
  CHECK(j["sessions"] == 20);
  CHECK(j["success_rate"].is_number());
  CHECK(j["avg_reward"].is_number());
  CHECK(j["success_ci95"].size() == 2);

  // config mismatch between training and eval is a checkpoint error
  CHECK(run_cli("eval " + tiny_flags(12, dir) + ckpt) == 3);

  CHECK(run_cli("transcript " + flags + ckpt + " --sessions 4", &out) == 0);
  int outcomes = 0;
  {
    std::istringstream is(out);
    std::string ln;
    while (std::getline(is, ln))
      if (ln.rfind("outcome: ", 0) == 0) {
        CHECK((ln == "outcome: SUCCESS" || ln == "outcome: FAILURE"));
        ++outcomes;
      }
  }
  CHECK(outcomes == 4);

  // transcript lines round-trip through the judge
  {
    RunConfig cfg = RunConfig::load(
        "", {"iterations=3", "batch_size=3", "replay_sample=1",
             "probe_every=2", "probe_sessions=4", "threads=2",
             "checkpoint_every=0", "dims.state=16", "dims.embed=8",
             "dims.key=12", "dims.extract_state=10", "dims.extract_out=10",
             "dims.fmlp_hidden=10", "dims.conv_channels=[4,6]",
             "dims.enc_fc=[12]", "dims.controller_hidden=[8,8]",
             "dims.value_hidden=[8,6]", "seed=11"},
        "desk");
    Workbench w(cfg);
    std::istringstream is(out);
    std::string ln, target;
    int checked = 0;
    while (std::getline(is, ln)) {
      auto op = ln.find("] (");
      if (op != std::string::npos) {
        target = ln.substr(op + 3, ln.find(')', op) - op - 3);
        continue;
      }
      auto lp = ln.find("    L: ");
      if (lp == std::string::npos) continue;
      auto br = ln.rfind("   [");
      std::string text = ln.substr(7, br - 7);
      std::string printed =
          ln.substr(br + 4, ln.find(',', br) - br - 4);
      auto judged = w.grammar.judge(w.vocab.encode(text),
                                    w.vocab.id(target));
      CHECK(std::string(utterance_class_name(judged)) == printed);
      ++checked;
    }
    CHECK(checked > 0);
  }

  CHECK(run_cli("trace " + flags + ckpt + " --session-seed 5", &out) == 0);
  {
    std::istringstream is(out);
    std::string header;
    std::getline(is, header);
    CHECK(header == "turn\trole\tword\teta\tg_mem\tg");
    std::map<int, double> eta_sum;
    std::map<int, std::set<std::string>> gmem_per_turn;
    std::string ln;
    while (std::getline(is, ln)) {
      std::vector<std::string> cols;
      std::stringstream ss(ln);
      std::string c;
      while (std::getline(ss, c, '\t')) cols.push_back(c);
      REQUIRE(cols.size() >= 5);
      if (cols[1] == "teacher" && !cols[3].empty()) {
        eta_sum[std::stoi(cols[0])] += std::stod(cols[3]);
        gmem_per_turn[std::stoi(cols[0])].insert(cols[4]);
      }
    }
    CHECK(!eta_sum.empty());
    for (auto& [turn, s] : eta_sum) {
      CHECK(std::abs(s - 1.0) <= 1e-9);
      CHECK(gmem_per_turn[turn].size() == 1);  // one gate per sentence
    }
  }

  CHECK(run_cli("features " + flags + ckpt + " --split test", &out) == 0);
  {
    std::istringstream is(out);
    std::string header;
    std::getline(is, header);
    int rows = 0;
    std::string ln;
    while (std::getline(is, ln))
      if (!ln.empty()) ++rows;
    ConceptDataset test(DatasetManifest::preset("desk_test"));
    CHECK(rows == test.total_images());
    // feature dim = key dim
    std::stringstream hs(header);
    int cols = 0;
    std::string c;
    while (std::getline(hs, c, '\t')) ++cols;
    CHECK(cols == 2 + 12);
  }
}
