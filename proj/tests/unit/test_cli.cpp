#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "balign/datasets.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct Sandbox {
  fs::path dir;
  Sandbox() {
    dir = fs::temp_directory_path() / ("balign_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir);
    fs::create_directories(dir);
  }
  ~Sandbox() { fs::remove_all(dir); }
};

Sandbox& box() {
  static Sandbox b;
  return b;
}

// Exit status of `balign <args>`; stderr goes to err.txt in the sandbox.
int run(const std::string& args) {
  const std::string cmd =
      "cd '" + box().dir.string() + "' && '" BALIGN_CLI "' " + args + " > out.txt 2> err.txt";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const fs::path& p) {
  std::ifstream in(box().dir / p, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

json load(const fs::path& p) { return json::parse(slurp(p)); }

void write(const fs::path& p, const std::string& text) { std::ofstream(box().dir / p) << text; }

const char* kTiny = R"({"training": {"estimator": {"stacks": 1, "channels": 4, "group_channels": 1, "hourglass_depth": 1},
 "regressor": {"channels": 2, "blocks_per_stage": 1, "fusion_levels": ["input", "s1"]},
 "discriminator": {"channels": 2}, "max_epochs": 1, "batch_size": 4},
 "data": {"synthetic": {"train": 8, "val": 4}}})";

}  // namespace

TEST_CASE("gen-heatmaps writes quarter-size archives reproducibly") {
  REQUIRE(run("synth --count 1 --side 256 --out one") == 0);
  REQUIRE(run("gen-heatmaps --manifest one/manifest.json --out h1 --previews") == 0);
  REQUIRE(run("gen-heatmaps --manifest one/manifest.json --out h2") == 0);
  std::vector<fs::path> archives;
  for (const auto& e : fs::directory_iterator(box().dir / "h1"))
    if (e.path().extension() == ".bhm") archives.push_back(e.path());
  REQUIRE(archives.size() == 1);
  const balign::Tensor maps = balign::read_heatmap_archive(archives[0]);
  CHECK(maps.shape() == balign::Shape{13, 64, 64});
  const std::string name = archives[0].filename().string();
  CHECK(slurp(fs::path("h1") / name) == slurp(fs::path("h2") / name));
  CHECK(slurp(fs::path("h1") / name).substr(0, 4) == "BHM1");
  CHECK(fs::exists(box().dir / "h1" / "config.json"));
}

TEST_CASE("missing image exits 2 and names the path") {
  REQUIRE(run("synth --count 2 --out gone") == 0);
  const auto m = load("gone/manifest.json");
  const std::string image = m["items"][0]["image"].get<std::string>();
  fs::remove(box().dir / "gone" / image);
  CHECK(run("gen-heatmaps --manifest gone/manifest.json --out hg") == 2);
  CHECK(slurp("err.txt").find(image) != std::string::npos);
}

TEST_CASE("usage and config errors exit 1") {
  CHECK(run("train --no-such-flag") == 1);
  CHECK(run("") == 1);
  write("bad.json", R"({"training": {"stacks": 2}})");
  CHECK(run("train --config bad.json --out bad") == 1);
  write("broken.json", "{");
  CHECK(run("train --config broken.json --out bad") == 1);
  CHECK(run("ablate --config broken.json") == 1);
  write("tiny.json", kTiny);
  CHECK(run("ablate --config tiny.json --variants BL,XYZ --out bad") == 1);
}

TEST_CASE("divergence exits 3") {
  write("diverge.json", R"({"training": {"mode": "oracle", "regressor": {"channels": 2, "blocks_per_stage": 1,
    "fusion_levels": ["input"]}, "lr_regressor": 1e200, "max_epochs": 2, "batch_size": 4},
    "data": {"synthetic": {"train": 8, "val": 4}}})");
  CHECK(run("train --config diverge.json --out div") == 3);
}

TEST_CASE("train, eval with three norms, plot-ced") {
  write("tiny.json", kTiny);
  REQUIRE(run("train --config tiny.json --seed 3 --out run") == 0);
  const auto cfg = load("run/config.json");
  CHECK(cfg["training"]["seed"] == 3);
  CHECK(cfg["command"] == "train");
  CHECK(fs::exists(box().dir / "run" / "checkpoint.json"));
  CHECK(fs::exists(box().dir / "run" / "metrics.jsonl"));

  REQUIRE(run("eval --checkpoint run/checkpoint.json --config tiny.json --out ev") == 0);
  const auto report = load("ev/report.json");
  CHECK(report["columns"].size() == 3);
  const std::string csv = slurp("ev/nme.csv");
  CHECK(csv.rfind("sample,inter_ocular,inter_pupil,face_size\n", 0) == 0);
  CHECK(fs::exists(box().dir / "ev" / "config.json"));

  REQUIRE(run("plot-ced --report ev/report.json --out ced") == 0);
  CHECK(fs::exists(box().dir / "ced" / "ced.svg"));
  CHECK(slurp("ced/summary.csv").find("report:inter_pupil,") != std::string::npos);
}

TEST_CASE("plot-ced on errors of 0.05 reports an AUC of one half") {
  write("flat.json", R"({"norm": "inter_ocular", "samples": ["a", "b"], "nme": [0.05, 0.05]})");
  REQUIRE(run("plot-ced --report flat.json --label flat --out flat") == 0);
  CHECK(slurp("flat/summary.csv") == "curve,mean_nme,auc,failure_rate\nflat,0.050000,0.500000,0.000000\n");
  CHECK(slurp("flat/ced_flat.csv").find("0.0500,1.000000\n") != std::string::npos);
  CHECK(slurp("flat/ced.svg").find("flat") != std::string::npos);
  CHECK(run("plot-ced --report nowhere.json --out x") == 2);
}

TEST_CASE("ablate with two variants is a deterministic two-row table") {
  write("tiny.json", kTiny);
  REQUIRE(run("ablate --config tiny.json --variants BL,BL+L1 --out a1") == 0);
  REQUIRE(run("ablate --config tiny.json --variants BL,BL+L1 --out a2") == 0);
  const auto rows = load("a1/ablation.json")["rows"];
  REQUIRE(rows.size() == 2);
  CHECK(rows[0]["label"] == "BL");
  CHECK(rows[1]["label"] == "BL+L1");
  CHECK(slurp("a1/ablation.csv") == slurp("a2/ablation.csv"));
  CHECK(load("a1/config.json")["variants"].size() == 2);
}

TEST_CASE("bridge trains a 29-point regressor on a 68-point estimator") {
  write("tiny.json", kTiny);
  REQUIRE(run("train --config tiny.json --out src") == 0);
  write("bridge.json", R"({"bridge": {"estimator_checkpoint": "src/checkpoint.json", "source_scheme": "300w_68",
    "target_scheme": "cofw_29", "regressor": {"landmarks": 29, "channels": 2, "blocks_per_stage": 1,
    "fusion_levels": ["input"]}}, "training": {"max_epochs": 1, "batch_size": 4},
    "data": {"scheme": "cofw_29", "synthetic": {"train": 8, "val": 4}}})");
  REQUIRE(run("bridge --config bridge.json --out br") == 0);
  CHECK(load("br/summary.json")["target_scheme"] == "cofw_29");
  CHECK(fs::exists(box().dir / "br" / "checkpoint.json"));
  write("bridge_bad.json", R"({"bridge": {"estimator_checkpoint": "src/checkpoint.json", "source_scheme": "300w_68",
    "target_scheme": "cofw_29", "regressor": {"landmarks": 68}}, "data": {"scheme": "cofw_29"}})");
  CHECK(run("bridge --config bridge_bad.json --out bb") == 1);
}
