#include <doctest.h>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include "gtrans/metrics.hpp"

namespace fs = std::filesystem;

namespace {

class Workdir {
 public:
  Workdir() : path_(fs::temp_directory_path() / ("gtrans_cli_" + std::to_string(::getpid()))) {
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~Workdir() { fs::remove_all(path_); }
  const fs::path& path() const { return path_; }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

int run(const std::string& args) {
  const std::string command = std::string(GTRANS_CLI_PATH) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(command.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void write(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary);
  out << text;
}

const char* kQuick = " --epochs 2 --window 4 --embed-dim 2 --heads 2 --encoder-blocks 1 --decoder-blocks 1 --batch-size 16";

}  // namespace

TEST_CASE("synth, train and detect are byte-identical across reruns") {
  Workdir dir;
  REQUIRE(run("synth --preset grid16 --frames 120 --seed 4 --out " + (dir / "a.gtd")) == 0);
  REQUIRE(run("synth --preset grid16 --frames 120 --seed 4 --out " + (dir / "b.gtd")) == 0);
  CHECK(slurp(dir / "a.gtd") == slurp(dir / "b.gtd"));
  CHECK(fs::exists(dir / "a.gtd.cfg"));

  for (const char* name : {"m1", "m2"}) {
    REQUIRE(run("train --data " + (dir / "a.gtd") + kQuick + " --model-out " + (dir / name) + ".ckpt") == 0);
  }
  CHECK(slurp(dir / "m1.ckpt") == slurp(dir / "m2.ckpt"));
  CHECK(slurp(dir / "m1.ckpt.train.csv") == slurp(dir / "m2.ckpt.train.csv"));

  for (const char* name : {"r1", "r2"}) {
    REQUIRE(run("detect --model " + (dir / "m1.ckpt") + " --data " + (dir / "a.gtd") + " --report " + (dir / name) +
                ".csv") == 0);
  }
  CHECK(slurp(dir / "r1.csv") == slurp(dir / "r2.csv"));
  CHECK(slurp(dir / "r1.csv.artifacts") == slurp(dir / "r2.csv.artifacts"));
  const auto rows = gtrans::load_report(dir / "r1.csv");
  REQUIRE(rows.size() == 1);
  CHECK(rows[0].model == "gtrans");
  CHECK(rows[0].dataset == "a");

  REQUIRE(run("export-latent --model " + (dir / "m1.ckpt") + " --data " + (dir / "a.gtd") + " --out " +
              (dir / "z.csv")) == 0);
  std::istringstream latent(slurp(dir / "z.csv"));
  std::string line;
  std::size_t lines = 0;
  while (std::getline(latent, line)) ++lines;
  CHECK(lines == 1 + 116);  // header plus one row per window
}

TEST_CASE("the default output directory comes from the environment") {
  Workdir dir;
  const std::string env = "GTRANS_OUTPUT_DIR=" + (dir / "out") + " ";
  const std::string command = env + GTRANS_CLI_PATH + " synth --preset area45 --frames 40 >/dev/null 2>&1";
  CHECK(std::system(command.c_str()) == 0);
  CHECK(fs::exists(dir / "out/area45.gtd"));
}

TEST_CASE("exit codes and no partial outputs") {
  Workdir dir;
  CHECK(run("") == 2);
  CHECK(run("synth --preset grid99 --out " + (dir / "x.gtd")) == 2);
  CHECK_FALSE(fs::exists(dir / "x.gtd"));
  CHECK(run("synth --preset grid16 --frames 40 --rate 1.5 --out " + (dir / "x.gtd")) == 2);
  CHECK_FALSE(fs::exists(dir / "x.gtd"));
  CHECK(run("train --data " + (dir / "missing.gtd")) == 3);

  REQUIRE(run("synth --preset grid16 --frames 60 --seed 1 --out " + (dir / "d.gtd")) == 0);
  CHECK(run("train --data " + (dir / "d.gtd") + " --heads 3 --embed-dim 2 --model-out " + (dir / "bad.ckpt")) == 2);
  CHECK(run("train --data " + (dir / "d.gtd") + kQuick + " --gamma 2 --model-out " + (dir / "bad.ckpt")) == 2);
  CHECK(run("train --data " + (dir / "d.gtd") + kQuick + " --model transformer --model-out " + (dir / "bad.ckpt")) == 2);
  CHECK_FALSE(fs::exists(dir / "bad.ckpt"));

  write(dir / "junk.ckpt", "not a checkpoint");
  CHECK(run("detect --model " + (dir / "junk.ckpt") + " --data " + (dir / "d.gtd") + " --report " + (dir / "r.csv")) == 3);
  CHECK_FALSE(fs::exists(dir / "r.csv"));

  REQUIRE(run("train --data " + (dir / "d.gtd") + kQuick + " --model-out " + (dir / "ok.ckpt")) == 0);
  CHECK(run("detect --model " + (dir / "ok.ckpt") + " --data " + (dir / "d.gtd") + " --threshold-method median --report " +
            (dir / "r.csv")) == 2);
  CHECK(run("detect --model " + (dir / "ok.ckpt") + " --data " + (dir / "d.gtd") + " --extreme-rate 0 --report " +
            (dir / "r.csv")) == 2);
  CHECK_FALSE(fs::exists(dir / "r.csv"));

  REQUIRE(run("synth --preset area45 --frames 60 --out " + (dir / "other.gtd")) == 0);
  CHECK(run("detect --model " + (dir / "ok.ckpt") + " --data " + (dir / "other.gtd") + " --report " + (dir / "r.csv")) == 3);
  CHECK(run("eval --reports " + (dir / "nothing.csv")) == 3);
}

TEST_CASE("ingest from an event CSV with an edge list") {
  Workdir dir;
  write(dir / "events.csv",
        "timestamp,area_id,injured,killed\n"
        "2021-01-01T00:10:00Z,A,1,0\n"
        "2021-01-01T01:20:00Z,B,3,1\n"
        "2021-01-01T02:30:00Z,C,0,0\n"
        "garbage,A,1,0\n");
  write(dir / "edges.txt", "A,B\nB,C\n");
  write(dir / "spec.cfg",
        "bin_seconds = 3600\nfeatures = injured, killed\naggregations = sum, max\n"
        "extreme_feature = killed\nextreme_op = >=\nextreme_threshold = 1\n");
  CHECK(run("ingest --events " + (dir / "events.csv") + " --spec " + (dir / "spec.cfg") + " --graph " +
            (dir / "edges.txt") + " --out " + (dir / "e.gtd")) == 0);
  CHECK(fs::exists(dir / "e.gtd"));
  CHECK(run("ingest --events " + (dir / "events.csv") + " --spec " + (dir / "spec.cfg") + " --grid --out " +
            (dir / "g.gtd")) == 2);
  write(dir / "bad.cfg", "bin_seconds = 0\nfeatures = injured\n");
  CHECK(run("ingest --events " + (dir / "events.csv") + " --spec " + (dir / "bad.cfg") + " --graph " +
            (dir / "edges.txt") + " --out " + (dir / "b.gtd")) == 2);
  CHECK_FALSE(fs::exists(dir / "b.gtd"));
}

TEST_CASE("eval merges one report per model into one table") {
  Workdir dir;
  REQUIRE(run("synth --preset area45 --frames 80 --seed 2 --out " + (dir / "area45.gtd")) == 0);
  std::string reports;
  for (const char* kind : {"gtrans", "mlp-ae", "lstm-ae", "gcn-lstm"}) {
    const std::string ckpt = dir / (std::string(kind) + ".ckpt");
    const std::string report = dir / (std::string(kind) + ".csv");
    REQUIRE(run("train --data " + (dir / "area45.gtd") + kQuick + " --model " + kind + " --model-out " + ckpt) == 0);
    REQUIRE(run("detect --model " + ckpt + " --data " + (dir / "area45.gtd") + " --report " + report) == 0);
    reports += " " + report;
  }
  REQUIRE(run("eval --reports" + reports + " --out " + (dir / "merged.csv")) == 0);
  const auto merged = gtrans::load_report(dir / "merged.csv");
  REQUIRE(merged.size() == 4);
  for (const auto& row : merged) CHECK(row.dataset == "area45");
  CHECK(run("eval --reports" + reports + " --out " + (dir / "merged2.csv")) == 0);
  CHECK(slurp(dir / "merged.csv") == slurp(dir / "merged2.csv"));
}
