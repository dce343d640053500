#include <gtest/gtest.h>

#include <unistd.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "trident/trident.hpp"

using namespace trident;
namespace fs = std::filesystem;

namespace {

struct Run {
  int status;
  std::string out;
};

// Runs the CLI with stderr folded into the captured output.
Run cli(const std::string& args) {
  std::string cmd = std::string(TRIDENT_CLI) + " " + args + " 2>&1";
  FILE* pipe = popen(cmd.c_str(), "r");
  if (!pipe) throw std::runtime_error("popen failed");
  std::string out;
  char buf[4096];
  while (auto n = fread(buf, 1, sizeof buf, pipe)) out.append(buf, n);
  int status = pclose(pipe);
  return {WIFEXITED(status) ? WEXITSTATUS(status) : -1, out};
}

std::string slurp(const fs::path& p) { return detail::read_file(p.string()); }

class Cli : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    dir_ = fs::temp_directory_path() / ("trident_cli_" + std::to_string(::getpid()));
    fs::remove_all(dir_);
    fs::create_directories(dir_);
    auto cfg = default_config();
    cfg.data.train = {16, 1001};
    cfg.data.val = {6, 5001};
    cfg.data.scene.image_size = 64;
    cfg.data.scene.scale_modes = {{10.0, 3.0, 1.0}, {24.0, 6.0, 1.0}, {44.0, 8.0, 1.0}};
    cfg.training.epochs = 1;
    cfg.training.batch_size = 2;
    cfg.training.warmup_steps = 0;
    cfg.training.lr = 0.01;
    cfg.set_ranges({{0, 30}, {15, 50}, {30, std::numeric_limits<Real>::infinity()}});
    detail::write_file((dir_ / "tiny.json").string(), config_to_json(cfg).dump(2));
    auto one = cfg;
    one.set_branches({1}, {ValidRange{}});
    auto j = config_to_json(one);
    j["inference"]["mode"] = "fast";
    detail::write_file((dir_ / "contradictory.json").string(), j.dump(2));
  }

  static std::string config() { return "--config " + (dir_ / "tiny.json").string(); }
  static inline fs::path dir_;
};

}  // namespace

TEST_F(Cli, GenDataWritesImagesAnnotationsAndManifest) {
  auto out = dir_ / "data";
  auto r = cli("gen-data " + config() + " --seed 3 --out-dir " + out.string());
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_TRUE(fs::exists(out / "train" / "images" / "image_00000.pgm"));
  EXPECT_TRUE(fs::exists(out / "val" / "images" / "image_00005.pgm"));
  auto anns = read_annotations((out / "val" / "annotations.json").string());
  EXPECT_EQ(anns.size(), 6u);
  auto manifest = nlohmann::json::parse(slurp(out / "train" / "manifest.json"));
  EXPECT_EQ(manifest.at("seed"), 1003);
  EXPECT_EQ(manifest.at("count"), 16);
  EXPECT_TRUE(manifest.at("config").is_object());
}

TEST_F(Cli, TrainIsDeterministicAndLossFalls) {
  auto a = dir_ / "train_a", b = dir_ / "train_b";
  auto ra = cli("train " + config() + " --seed 2 --out-dir " + a.string());
  ASSERT_EQ(ra.status, 0) << ra.out;
  auto rb = cli("train " + config() + " --seed 2 --out-dir " + b.string());
  ASSERT_EQ(rb.status, 0) << rb.out;
  EXPECT_EQ(slurp(a / "final.tdnt"), slurp(b / "final.tdnt"));
  EXPECT_EQ(slurp(a / "train_log.csv"), slurp(b / "train_log.csv"));
  EXPECT_TRUE(fs::exists(a / "best.tdnt"));
  EXPECT_TRUE(fs::exists(a / "config.json"));

  std::istringstream log(slurp(a / "train_log.csv"));
  std::string header, row;
  std::getline(log, header);
  std::getline(log, row);
  EXPECT_EQ(header, "epoch,lr,first_loss,mean_loss,last_loss");
  std::vector<Real> cols;
  std::stringstream ss(row);
  for (std::string cell; std::getline(ss, cell, ',');) cols.push_back(std::stod(cell));
  ASSERT_EQ(cols.size(), 5u);
  EXPECT_LT(cols[4], cols[2]) << row;

  // Evaluation of identical checkpoints is identical too.
  auto ea = cli("eval " + config() + " --seed 2 --checkpoint " + (a / "final.tdnt").string() + " --out-dir " + a.string());
  auto eb = cli("eval " + config() + " --seed 2 --checkpoint " + (b / "final.tdnt").string() + " --out-dir " + b.string());
  ASSERT_EQ(ea.status, 0) << ea.out;
  EXPECT_EQ(slurp(a / "metrics.csv"), slurp(b / "metrics.csv"));
}

TEST_F(Cli, EvalPerBranchAndInfer) {
  auto d = dir_ / "model";
  ASSERT_EQ(cli("train " + config() + " --out-dir " + d.string()).status, 0);
  auto ckpt = (d / "final.tdnt").string();

  auto r = cli("eval " + config() + " --per-branch --checkpoint " + ckpt);
  ASSERT_EQ(r.status, 0) << r.out;
  EXPECT_NE(r.out.find("method,AP,AP50,AP75,AP_s,AP_m,AP_l"), std::string::npos);
  for (const char* row : {"\nbranch-0,", "\nbranch-1,", "\nbranch-2,", "\ncombined,"})
    EXPECT_NE(r.out.find(row), std::string::npos) << row;

  SceneConfig sc;
  sc.image_size = 64;
  sc.scale_modes = {{24.0, 6.0, 1.0}};
  sc.log = nullptr;
  auto img = (dir_ / "one.pgm").string();
  export_ppm(generate_scene(sc, 0).image, img);
  auto out = dir_ / "infer";
  auto inf = cli("infer " + config() + " --mode fast --checkpoint " + ckpt + " --out-dir " + out.string() + " " + img);
  ASSERT_EQ(inf.status, 0) << inf.out;
  auto dets = nlohmann::json::parse(slurp(out / "detections.json"));
  ASSERT_TRUE(dets.is_array());
  for (const auto& e : dets) EXPECT_EQ(e.at("branch"), 1);
  EXPECT_TRUE(fs::exists(out / "detections.ppm"));

  auto bad = cli("infer " + config() + " --mode turbo --checkpoint " + ckpt + " " + img);
  EXPECT_NE(bad.status, 0);
}

TEST_F(Cli, EvalRejectsEmptyValidationSet) {
  auto d = dir_ / "empty_val";
  ASSERT_EQ(cli("train " + config() + " --out-dir " + d.string()).status, 0);
  auto j = nlohmann::json::parse(slurp(dir_ / "tiny.json"));
  j["data"]["val"]["count"] = 0;
  detail::write_file((dir_ / "noval.json").string(), j.dump());
  auto r = cli("eval --config " + (dir_ / "noval.json").string() + " --checkpoint " + (d / "final.tdnt").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("empty"), std::string::npos) << r.out;
}

TEST_F(Cli, RejectsContradictionsAndUnknowns) {
  auto r = cli("train --config " + (dir_ / "contradictory.json").string() + " --out-dir " + (dir_ / "x").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("fast"), std::string::npos) << r.out;

  auto j = nlohmann::json::parse(slurp(dir_ / "tiny.json"));
  j["training"]["epoch"] = 3;
  detail::write_file((dir_ / "typo.json").string(), j.dump());
  r = cli("train --config " + (dir_ / "typo.json").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("config.training.epoch"), std::string::npos) << r.out;

  EXPECT_NE(cli("ablate --suite bogus").status, 0);
  EXPECT_NE(cli("frobnicate").status, 0);

  // Checkpoint from another topology.
  auto d = dir_ / "topo";
  ASSERT_EQ(cli("train " + config() + " --out-dir " + d.string()).status, 0);
  auto k = nlohmann::json::parse(slurp(dir_ / "tiny.json"));
  k["head"]["hidden"] = 8;
  detail::write_file((dir_ / "other.json").string(), k.dump());
  r = cli("eval --config " + (dir_ / "other.json").string() + " --checkpoint " + (d / "final.tdnt").string());
  EXPECT_NE(r.status, 0);
  EXPECT_NE(r.out.find("head.hidden.weight"), std::string::npos) << r.out;
}

TEST_F(Cli, RfReportWritesCsvAndJson) {
  auto out = dir_ / "rf";
  auto r = cli("rf-report " + config() + " --out-dir " + out.string());
  ASSERT_EQ(r.status, 0) << r.out;
  auto csv = slurp(out / "rf.csv");
  EXPECT_EQ(csv.substr(0, csv.find('\n')), "branch,dilation,theoretical_rf,empirical_rf,delta_vs_d1");
  EXPECT_EQ(std::count(csv.begin(), csv.end(), '\n'), 4);
  EXPECT_EQ(nlohmann::json::parse(slurp(out / "rf.json")).size(), 3u);
}

TEST_F(Cli, AblateDilationPilotWritesOneRowPerVariant) {
  auto out = dir_ / "ablate";
  auto r = cli("ablate " + config() + " --suite dilation-pilot --out-dir " + out.string());
  ASSERT_EQ(r.status, 0) << r.out;
  auto csv = slurp(out / "ablate_dilation-pilot.csv");
  for (const char* row : {"\nd=1,", "\nd=2,", "\nd=3,"}) EXPECT_NE(csv.find(row), std::string::npos) << csv;
}
