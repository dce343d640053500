// Command-line driver: train, eval, infer, rf-report, ablate, gen-data.

#include <CLI11.hpp>

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "trident/trident.hpp"

namespace fs = std::filesystem;
using namespace trident;

namespace {

struct Options {
  std::string config;
  std::string checkpoint;
  std::string mode;
  std::string suite;
  std::string out_dir;
  std::string image;
  bool per_branch = false;
  std::uint64_t seed = 0;
  bool seed_set = false;
};

ExperimentConfig resolve_config(const Options& o) {
  auto cfg = o.config.empty() ? default_config() : load_config(o.config);
  if (o.seed_set) cfg.apply_seed(o.seed);
  if (!o.mode.empty()) cfg.inference.mode = o.mode == "fast" ? InferenceMode::fast : InferenceMode::full;
  cfg.data.scene.log = &std::clog;
  cfg.validate();
  return cfg;
}

fs::path out_dir(const Options& o) {
  fs::path dir = o.out_dir.empty() ? fs::path(".") : fs::path(o.out_dir);
  fs::create_directories(dir);
  return dir;
}

void write_text(const fs::path& path, const std::string& text) { detail::write_file(path.string(), text); }

std::unique_ptr<TridentDetector> load_model(const Options& o, const ExperimentConfig& cfg) {
  require(!o.checkpoint.empty(), "--checkpoint is required");
  auto model = make_model(cfg);
  load_checkpoint(o.checkpoint, model->parameters());
  return model;
}

int cmd_gen_data(const Options& o) {
  auto cfg = resolve_config(o);
  auto dir = out_dir(o);
  for (auto [name, split] : {std::pair{"train", cfg.data.train}, std::pair{"val", cfg.data.val}}) {
    auto sdir = dir / name;
    fs::create_directories(sdir / "images");
    auto scenes = generate_dataset(cfg.data.split(split), split.count);
    std::vector<Annotation> anns;
    for (const auto& s : scenes) {
      anns.push_back(s.annotation);
      std::ostringstream file;
      file << "image_" << std::setw(5) << std::setfill('0') << s.annotation.image_id << ".pgm";
      export_ppm(s.image, (sdir / "images" / file.str()).string());
    }
    write_annotations((sdir / "annotations.json").string(), anns);
    nlohmann::json manifest = {{"config", config_to_json(cfg)}, {"seed", split.seed}, {"count", split.count}};
    write_text(sdir / "manifest.json", manifest.dump(2) + "\n");
    std::cout << name << ": " << split.count << " scenes in " << sdir.string() << '\n';
  }
  return 0;
}

int cmd_train(const Options& o) {
  auto cfg = resolve_config(o);
  auto dir = out_dir(o);
  auto data = train_set(cfg);
  write_text(dir / "config.json", config_to_json(cfg).dump(2) + "\n");
  std::ofstream log(dir / "train_log.csv");
  log << "epoch,lr,first_loss,mean_loss,last_loss\n";
  Real best = std::numeric_limits<Real>::infinity();
  auto model = train_model(cfg, data, nullptr, [&](const EpochRecord& e, const TridentDetector& m) {
    log << e.epoch << ',' << e.lr << ',' << e.first_loss << ',' << e.mean_loss << ',' << e.last_loss << '\n'
        << std::flush;
    std::cout << "epoch " << e.epoch << " lr " << e.lr << " loss " << e.mean_loss << '\n' << std::flush;
    if (e.mean_loss < best) {
      best = e.mean_loss;
      save_checkpoint((dir / "best.tdnt").string(), m.parameters());
    }
  });
  save_checkpoint((dir / "final.tdnt").string(), model->parameters());
  std::cout << "wrote " << (dir / "final.tdnt").string() << " and " << (dir / "best.tdnt").string() << '\n';
  return 0;
}

int cmd_eval(const Options& o) {
  auto cfg = resolve_config(o);
  auto model = load_model(o, cfg);
  require(cfg.data.val.count > 0, "validation set is empty (data.val.count = 0)");
  auto val = val_set(cfg);
  std::vector<ResultRow> rows;
  if (o.per_branch) {
    rows = evaluate_per_branch(*model, cfg, val);
  } else {
    rows.emplace_back(cfg.inference.mode == InferenceMode::fast ? "fast" : "full", evaluate(*model, cfg, val));
  }
  std::ostringstream csv;
  write_results(csv, rows);
  std::cout << csv.str();
  if (!o.out_dir.empty()) write_text(out_dir(o) / "metrics.csv", csv.str());
  return 0;
}

int cmd_infer(const Options& o) {
  require(!o.image.empty(), "an input image path is required");
  auto cfg = resolve_config(o);
  auto model = load_model(o, cfg);
  auto image = read_pnm(o.image);
  require(image.dim(1) == cfg.model.backbone.in_channels, o.image, " has ", image.dim(1), " channels, the model expects ",
          cfg.model.backbone.in_channels);
  auto dets = detect_all(*model, {Scene{image, {0, image.dim(3), image.dim(2), {}}}}, cfg.ranges(), cfg.inference, 1);
  auto doc = detections_to_json({{0, dets.front()}});
  std::cout << doc.dump(2) << '\n';
  if (!o.out_dir.empty()) {
    auto dir = out_dir(o);
    write_text(dir / "detections.json", doc.dump(2) + "\n");
    if (image.dim(1) == 1) {
      std::vector<BoxXYWH> boxes;
      std::vector<int> colours;
      for (const auto& d : dets.front()) boxes.push_back(d.box), colours.push_back(d.branch);
      export_ppm(overlay_boxes(image, boxes, colours), (dir / "detections.ppm").string());
    }
  }
  return 0;
}

int cmd_rf_report(const Options& o) {
  auto cfg = resolve_config(o);
  auto report = rf_report(cfg.model.backbone, cfg.training.seed);
  std::ostringstream csv;
  write_rf_csv(csv, report);
  std::cout << csv.str();
  if (!o.out_dir.empty()) {
    auto dir = out_dir(o);
    write_text(dir / "rf.csv", csv.str());
    write_text(dir / "rf.json", rf_to_json(report).dump(2) + "\n");
  }
  return 0;
}

int cmd_ablate(const Options& o) {
  require(!o.suite.empty(), "--suite is required");
  auto cfg = resolve_config(o);
  cfg.data.scene.log = nullptr;
  auto rows = run_ablation(o.suite, cfg);
  std::ostringstream csv;
  write_results(csv, rows);
  std::cout << csv.str();
  if (!o.out_dir.empty()) write_text(out_dir(o) / ("ablate_" + o.suite + ".csv"), csv.str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  tune_allocator();
  CLI::App app{"Trident multi-branch detector toolkit"};
  app.require_subcommand(1);
  Options o;

  auto add_common = [&](CLI::App* cmd) {
    cmd->add_option("--config", o.config, "Experiment config JSON (defaults built in)");
    cmd->add_option("--out-dir", o.out_dir, "Directory for written files");
    cmd->add_option("--seed", o.seed, "Seed for initialisation, batch order and data")
        ->each([&](const std::string&) { o.seed_set = true; });
  };
  auto add_mode = [&](CLI::App* cmd) {
    cmd->add_option("--mode", o.mode, "Inference mode")->check(CLI::IsMember({"full", "fast"}));
  };

  auto* train = app.add_subcommand("train", "Train a model and write checkpoints");
  add_common(train);
  auto* eval = app.add_subcommand("eval", "Evaluate a checkpoint on the validation split");
  add_common(eval);
  add_mode(eval);
  eval->add_option("--checkpoint", o.checkpoint, "TDNT checkpoint")->required();
  eval->add_flag("--per-branch", o.per_branch, "Also evaluate each branch on its own");
  auto* infer = app.add_subcommand("infer", "Detect objects in one PGM image");
  add_common(infer);
  add_mode(infer);
  infer->add_option("--checkpoint", o.checkpoint, "TDNT checkpoint")->required();
  infer->add_option("image", o.image, "Input PGM image")->required();
  auto* rf = app.add_subcommand("rf-report", "Theoretical and measured receptive field per branch");
  add_common(rf);
  auto* ablate = app.add_subcommand("ablate", "Run an ablation sweep");
  add_common(ablate);
  ablate->add_option("--suite", o.suite, "Sweep to run")->required()->check(CLI::IsMember(ablation_suites()));
  auto* gen = app.add_subcommand("gen-data", "Write the synthetic dataset as PGM images plus annotations");
  add_common(gen);

  CLI11_PARSE(app, argc, argv);
  try {
    if (*train) return cmd_train(o);
    if (*eval) return cmd_eval(o);
    if (*infer) return cmd_infer(o);
    if (*rf) return cmd_rf_report(o);
    if (*ablate) return cmd_ablate(o);
    if (*gen) return cmd_gen_data(o);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
