#include <catch2/catch_amalgamated.hpp>

#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>

#include <json.hpp>

#include "unmar/marf.hpp"

using namespace unmar;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir() {
  static int counter = 0;
  fs::path d = fs::temp_directory_path() /
               fmt::format("unmar_cli_{}_{}", ::getpid(), counter++);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

struct RunResult {
  int code = -1;
  std::string out;
};

RunResult run(const std::string& args) {
  static int counter = 0;
  fs::path cap = fs::temp_directory_path() /
                 fmt::format("unmar_cli_out_{}_{}", ::getpid(), counter++);
  const std::string cmd = fmt::format("{} {} > {} 2>&1", UNMAR_CLI_PATH, args,
                                      cap.string());
  const int status = std::system(cmd.c_str());
  RunResult r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  std::ifstream is(cap);
  r.out.assign((std::istreambuf_iterator<char>(is)),
               std::istreambuf_iterator<char>());
  fs::remove(cap);
  return r;
}

size_t count_ext(const fs::path& dir, const std::string& ext) {
  size_t n = 0;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.path().extension() == ext) ++n;
  return n;
}

std::string file_bytes(const fs::path& p) {
  std::ifstream is(p, std::ios::binary);
  REQUIRE(is);
  return std::string((std::istreambuf_iterator<char>(is)),
                     std::istreambuf_iterator<char>());
}

/// Shared tiny training fixture: phantoms -> dataset -> 1-epoch run.
struct TrainedFixture {
  fs::path root, phantoms, dataset, rundir;

  TrainedFixture() {
    root = temp_dir();
    phantoms = root / "phantoms";
    dataset = root / "ds";
    rundir = root / "run";
    REQUIRE(run(fmt::format("phantom --count 20 --size 32 --seed 3 --out {}",
                            phantoms.string()))
                .code == 0);
    REQUIRE(run(fmt::format("build-dataset --in {} --out {} --seed 3 --eg-size 4",
                            phantoms.string(), dataset.string()))
                .code == 0);
    std::ofstream cfg(root / "cfg.json");
    cfg << R"({"epochs": 1, "batch_size": 2, "seed": 1,
               "generator": {"n_groups": 1, "n_blocks_per_group": 1,
                             "channels": 8, "ca_reduction": 8},
               "discriminator": {"base_channels": 8, "n_units": 2}})";
    cfg.close();
    REQUIRE(run(fmt::format("train --data {} --out {} --config {}",
                            dataset.string(), rundir.string(),
                            (root / "cfg.json").string()))
                .code == 0);
  }
  ~TrainedFixture() { fs::remove_all(root); }
};

}  // namespace

TEST_CASE("phantom command writes the requested rasters") {
  fs::path out = temp_dir();
  RunResult r = run(fmt::format("phantom --count 10 --size 32 --seed 7 --out {}",
                                out.string()));
  CHECK(r.code == 0);
  CHECK(count_ext(out, ".marf") == 10);
  Image img = read_marf(out / "p00000.marf");
  CHECK(img.h == 32);
  for (float v : img.px) {
    REQUIRE(v >= 0.0f);
    REQUIRE(v <= 1.0f);
  }
  fs::remove_all(out);
}

TEST_CASE("phantom output is seed-deterministic") {
  fs::path a = temp_dir(), b = temp_dir(), c = temp_dir();
  REQUIRE(run(fmt::format("phantom --count 3 --size 32 --seed 5 --out {}", a.string())).code == 0);
  REQUIRE(run(fmt::format("phantom --count 3 --size 32 --seed 5 --out {}", b.string())).code == 0);
  REQUIRE(run(fmt::format("phantom --count 3 --size 32 --seed 6 --out {}", c.string())).code == 0);
  CHECK(file_bytes(a / "p00001.marf") == file_bytes(b / "p00001.marf"));
  CHECK(file_bytes(a / "p00001.marf") != file_bytes(c / "p00001.marf"));
  for (const fs::path& p : {a, b, c}) fs::remove_all(p);
}

TEST_CASE("usage errors exit with code 2") {
  CHECK(run("phantom --count 0 --out /tmp/nowhere").code == 2);
  CHECK(run("phantom --count 1 --out /tmp/nowhere --bogus-flag 1").code == 2);
  CHECK(run("no-such-command").code == 2);
  CHECK(run("").code == 2);
  CHECK(run("evaluate").code == 2);  // neither --a/--b nor --data
}

TEST_CASE("data errors exit with code 3") {
  fs::path empty = temp_dir();
  CHECK(run(fmt::format("simulate --in {} --out {}/o", empty.string(),
                        empty.string()))
            .code == 3);
  CHECK(run(fmt::format("infer --checkpoint {}/none --in {} --out {}/o2",
                        empty.string(), empty.string(), empty.string()))
            .code == 3);
  fs::remove_all(empty);
}

TEST_CASE("simulate reports corruption fractions") {
  fs::path root = temp_dir();
  fs::path ph = root / "ph";
  REQUIRE(run(fmt::format("phantom --count 15 --size 320 --seed 2 --out {}",
                          ph.string()))
              .code == 0);
  for (int ts : {3, 9}) {
    fs::path out = root / fmt::format("sim{}", ts);
    RunResult r = run(fmt::format("simulate --in {} --out {} --ts-eg {} --seed 4",
                                  ph.string(), out.string(), ts));
    REQUIRE(r.code == 0);
    CHECK(count_ext(out, ".marf") == 15);
    nlohmann::json rep;
    std::ifstream(out / "report.json") >> rep;
    const double frac = rep.at("mean_fraction").get<double>();
    if (ts == 3) {
      CHECK(frac > 0.70);
      CHECK(frac < 0.80);
    } else {
      CHECK(frac > 0.45);
      CHECK(frac < 0.55);
    }
    // per-file masks round to the mean
    CHECK(rep.at("files").size() == 15);
  }
  fs::remove_all(root);
}

TEST_CASE("train infer evaluate ablate pipeline") {
  TrainedFixture fx;

  SECTION("training artifacts exist") {
    CHECK(fs::exists(fx.rundir / "last.unae"));
    CHECK(fs::exists(fx.rundir / "best" / "best.unae"));
    CHECK(fs::exists(fx.rundir / "train.log"));
    CHECK(fs::exists(fx.rundir / "config.json"));
  }

  SECTION("inference writes one output per input") {
    fs::path red = fx.root / "reduced";
    RunResult r = run(fmt::format("infer --checkpoint {} --name best --in {} --out {}",
                                  (fx.rundir / "best").string(),
                                  (fx.dataset / "train_corrupt").string(),
                                  red.string()));
    REQUIRE(r.code == 0);
    CHECK(count_ext(red, ".marf") ==
          count_ext(fx.dataset / "train_corrupt", ".marf"));

    // mode guard refuses a mismatched checkpoint
    CHECK(run(fmt::format(
                  "infer --checkpoint {} --name best --in {} --out {} "
                  "--ablation implicit-without-gr",
                  (fx.rundir / "best").string(),
                  (fx.dataset / "train_corrupt").string(), red.string()))
              .code == 3);
  }

  SECTION("evaluate on identical directories is perfect") {
    RunResult r = run(fmt::format("evaluate --a {0} --b {0}",
                                  (fx.dataset / "train_free").string()));
    REQUIRE(r.code == 0);
    // last stdout line is the JSON report
    const auto nl = r.out.find_last_of('\n', r.out.size() - 2);
    nlohmann::json rep = nlohmann::json::parse(r.out.substr(nl + 1));
    CHECK(rep.at("ssim").get<double>() == 1.0);
    CHECK(rep.at("psnr").get<std::string>() == "inf");
    CHECK(r.out.find("psnr=inf") != std::string::npos);
  }

  SECTION("evaluate baseline and checkpoint modes") {
    RunResult base = run(fmt::format("evaluate --data {} --split val",
                                     fx.dataset.string()));
    REQUIRE(base.code == 0);
    RunResult model = run(fmt::format("evaluate --data {} --split val --checkpoint {}",
                                      fx.dataset.string(),
                                      (fx.rundir / "best").string()));
    REQUIRE(model.code == 0);
    for (const RunResult* r : {&base, &model}) {
      const auto nl = r->out.find_last_of('\n', r->out.size() - 2);
      nlohmann::json rep = nlohmann::json::parse(r->out.substr(nl + 1));
      CHECK(rep.at("ssim").get<double>() > 0.0);
      CHECK(rep.at("ssim").get<double>() <= 1.0);
    }
  }

  SECTION("resume continues an interrupted run") {
    RunResult r = run(fmt::format(
        "train --data {} --out {} --config {} --epochs 2 --resume",
        fx.dataset.string(), fx.rundir.string(), (fx.root / "cfg.json").string()));
    CHECK(r.code == 0);
    std::ifstream log(fx.rundir / "train.log");
    int lines = 0;
    std::string l;
    while (std::getline(log, l)) ++lines;
    CHECK(lines == 2);
  }

  SECTION("ablate trains four variants and reports a table") {
    fs::path abl = fx.root / "ablate";
    RunResult r = run(fmt::format(
        "ablate --data {} --out {} --config {} --max-gen-steps 2",
        fx.dataset.string(), abl.string(), (fx.root / "cfg.json").string()));
    REQUIRE(r.code == 0);
    nlohmann::json rep;
    std::ifstream(abl / "report.json") >> rep;
    REQUIRE(rep.at("rows").size() == 4);
    for (const char* name : {"explicit-with-gr", "implicit-with-gr",
                             "explicit-without-gr", "implicit-without-gr"}) {
      CHECK(r.out.find(name) != std::string::npos);
      bool found = false;
      for (const auto& row : rep.at("rows"))
        found |= row.at("config").get<std::string>() == name;
      CHECK(found);
    }
    CHECK(rep.at("baseline").at("ssim").get<double>() > 0.0);
    CHECK(fs::exists(abl / "report.txt"));
  }
}

TEST_CASE("train rejects a config typo with exit 2") {
  fs::path root = temp_dir();
  std::ofstream cfg(root / "bad.json");
  cfg << R"({"epoochs": 1})";
  cfg.close();
  CHECK(run(fmt::format("train --data {0}/none --out {0}/run --config {0}/bad.json",
                        root.string()))
            .code == 2);
  fs::remove_all(root);
}
