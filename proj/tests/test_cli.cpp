#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <unistd.h>

#include "castel/cli.hpp"

using namespace castel;
namespace fs = std::filesystem;

namespace {

const std::string kScenarios = CASTEL_SCENARIOS;

struct Result {
  int code = -1;
  std::string out, err;
};

class Workspace {
 public:
  Workspace() {
    static int counter = 0;
    dir_ = fs::temp_directory_path() / ("castel_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
  }
  ~Workspace() { fs::remove_all(dir_); }

  std::string file(const std::string& name, const std::string& content) const {
    std::ofstream(dir_ / name) << content;
    return (dir_ / name).string();
  }

  std::string read(const std::string& name) const {
    std::ifstream in(dir_ / name, std::ios::binary);
    std::ostringstream s;
    s << in.rdbuf();
    return s.str();
  }

  bool exists(const std::string& name) const { return fs::exists(dir_ / name); }

  Result run(std::vector<std::string> args, const std::string& sub = "out") const {
    args.insert(args.begin(), "castel");
    args.push_back("--out");
    args.push_back((dir_ / sub).string());
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    Result r;
    r.code = cli::run(static_cast<int>(argv.size()), argv.data(), out, err);
    r.out = out.str();
    r.err = err.str();
    return r;
  }

 private:
  fs::path dir_;
};

}  // namespace

TEST_CASE("simulate writes a reproducible summary") {
  Workspace w;
  REQUIRE(w.run({"simulate", "--seed", "42", "--horizon", "30", "--runs", "3"}, "a").code == 0);
  REQUIRE(w.run({"simulate", "--seed", "42", "--horizon", "30", "--runs", "3", "--jobs", "2"}, "b").code == 0);
  for (const char* f : {"summary.json", "trace.csv", "trace.bin", "messages.csv", "runs.csv"}) {
    INFO(f);
    CHECK(w.read(std::string("a/") + f) == w.read(std::string("b/") + f));
    CHECK_FALSE(w.read(std::string("a/") + f).empty());
  }
  CHECK(w.exists("a/summary.meta.json"));
  const auto j = Json::parse(w.read("a/summary.json"));
  CHECK(j["seed"] == 42);
  CHECK(j["runs"] == 3);
  CHECK(w.read("a/trace.csv").rfind("# seed=42 ", 0) == 0);

  // Traces in the binary file read back one after another.
  std::istringstream in(w.read("a/trace.bin"));
  std::size_t events = 0;
  for (int k = 0; k < 3; ++k) events += read_trace_binary(in).events.size();
  CHECK(events == j["events"].get<std::size_t>());
}

TEST_CASE("simulate argument errors exit with 2") {
  Workspace w;
  CHECK(w.run({"simulate", "--horizon", "0"}).code == 2);
  CHECK(w.run({"simulate", "--runs", "0"}).code == 2);
  CHECK(w.run({"simulate", "--scenario", "/nonexistent.json"}).code == 2);
  CHECK(w.run({"simulate", "--scenario", w.file("bad.json", "{\"params\": {\"N\": -1}}")}).code == 2);
  CHECK(w.run({"simulate", "--scenario", w.file("broken.json", "{")}).code == 2);
  CHECK(w.run({"frobnicate"}).code == 2);
  CHECK(w.run({"simulate", "--no-jmp", "--scenario", kScenarios + "/toy_bounded.json"}).code == 2);
}

TEST_CASE("--no-jmp removes the jump transition") {
  Workspace w;
  REQUIRE(w.run({"simulate", "--no-jmp", "--horizon", "50", "--runs", "2"}).code == 0);
  const auto j = Json::parse(w.read("out/summary.json"));
  CHECK(j["delivery"]["jumps"] == 0);
  CHECK_FALSE(j["firings"].contains("jmp"));
  CHECK(j["params"]["jmp"] == false);
}

TEST_CASE("check reports estimates and verdicts") {
  Workspace w;
  const auto f = w.file("f.txt", "# comment\n\ntrue\nP>=0.5 [ F[t<=5] count(dst) = 1 ]\n");
  const auto sc = w.file("two.json", R"({"model": "net", "net": {
      "places": [{"name": "src"}, {"name": "dst"}],
      "transitions": [{"name": "go", "inputs": [{"place": "src"}], "outputs": [{"place": "dst"}]}],
      "initial": {"src": 1}}, "samples": 500})");
  const auto r = w.run({"check", "--scenario", sc, "--formula", f, "--exact"});
  REQUIRE(r.code == 0);
  const auto j = Json::parse(w.read("out/report.json"));
  REQUIRE(j["results"].size() == 2);
  CHECK(j["results"][0]["verdict"] == "holds");
  CHECK(j["results"][1]["verdict"] == "holds");
  CHECK(j["results"][1]["samples"] == 500);
  CHECK(j["results"][1]["exact"]["probability"].get<double>() == Catch::Approx(1 - std::exp(-5.0)).margin(1e-6));
  CHECK(w.exists("out/report.meta.json"));
  CHECK(j.dump().find("wall") == std::string::npos);
}

TEST_CASE("check on the tiny instance reports exact and statistical numbers") {
  Workspace w;
  const auto r = w.run({"check", "--scenario", kScenarios + "/tiny.json", "--formula", kScenarios + "/tiny.formula",
                        "--exact", "--unfold", "--runs", "2000"});
  REQUIRE(r.code == 0);
  const auto j = Json::parse(w.read("out/report.json"));
  for (const auto& res : j["results"]) {
    CHECK(res.contains("estimate"));
    CHECK(res.contains("exact"));
  }
}

TEST_CASE("check error paths") {
  Workspace w;
  const auto nested = w.file("n.txt", "P>=0.5 [ F[t<=1] P>=0.5 [ F[t<=1] true ] ]\n");
  CHECK(w.run({"check", "--formula", nested}).code == 2);
  CHECK(w.run({"check", "--formula", w.file("e.txt", "# nothing\n")}).code == 2);
  CHECK(w.run({"check", "--formula", w.file("s.txt", "P>=0.5 [ F[t<=1 true ]\n")}).code == 2);
  CHECK(w.run({"check"}).code == 2);

  const auto ok = w.file("ok.txt", "P>=0.5 [ F[t<=1] count(Z) >= 1 ]\n");
  ::setenv("CASTEL_STATE_LIMIT", "500", 1);
  const auto r = w.run({"check", "--formula", ok, "--exact", "--runs", "10"});
  ::unsetenv("CASTEL_STATE_LIMIT");
  CHECK(r.code == 1);
  CHECK(r.err.find("frontier") != std::string::npos);
}

TEST_CASE("sweep commands") {
  Workspace w;
  const auto grid = w.file("g.json", R"({"grid": {"N": [2, 2]}, "runs": 3, "metrics": ["events", "mean_cars"]})");
  const auto r = w.run({"sweep", "--grid", grid, "--horizon", "20"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("warning: duplicate value 2") != std::string::npos);
  const std::string csv = w.read("out/sweep.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 4);  // stamp, header, two metrics of one cell
  CHECK(csv.rfind("# castel sweep seed=1 runs=3 horizon=20\n", 0) == 0);
  const std::string lng = w.read("out/sweep_long.csv");
  CHECK(std::count(lng.begin(), lng.end(), '\n') == 7);

  const auto sat = w.file("s.json", R"({"mode": "satellite", "n": [1, 5], "runs": 30})");
  REQUIRE(w.run({"sweep", "--grid", sat, "--horizon", "40"}, "sat").code == 0);
  CHECK(w.read("sat/satellite.csv").find("# fit factor = A*n + B: A=") != std::string::npos);

  CHECK(w.run({"sweep", "--grid", w.file("b.json", R"({"grid": {"Q": [1]}})")}).code == 0);
  CHECK(w.read("out/sweep.csv").find(",1,unknown deadspot parameter") != std::string::npos);
  CHECK(w.run({"sweep", "--grid", w.file("m.json", R"({"mode": "spiral"})")}).code == 2);
  CHECK(w.run({"sweep", "--grid", w.file("one.json", R"({"mode": "satellite", "n": [3], "runs": 30})")}).code == 2);
}

TEST_CASE("reach exports the chain") {
  Workspace w;
  auto r = w.run({"reach", "--scenario", kScenarios + "/toy_bounded.json"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("states: 4\n") != std::string::npos);
  CHECK(w.read("out/reach.tra").rfind("4 3\n", 0) == 0);
  CHECK(w.read("out/reach.dot").rfind("digraph", 0) == 0);

  r = w.run({"reach", "--scenario", kScenarios + "/tiny.json", "--unfold"});
  REQUIRE(r.code == 0);
  CHECK(r.out.find("isomorphic: true") != std::string::npos);
  CHECK(net_from_json(Json::parse(w.read("out/unfolded.json"))).places().size() > 3);

  ::setenv("CASTEL_STATE_LIMIT", "1000", 1);
  r = w.run({"reach"});
  ::unsetenv("CASTEL_STATE_LIMIT");
  CHECK(r.code == 1);
  CHECK(r.err.find("frontier size") != std::string::npos);
}
