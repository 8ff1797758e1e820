// Command-line front end: dataset synthesis, model training, the attack
// pipeline and report re-aggregation.

#include <CLI11.hpp>

#include <cstdint>
#include <filesystem>
#include <iostream>
#include <string>

#include "advedge/checkpoint.hpp"
#include "advedge/dataset.hpp"
#include "advedge/experiment.hpp"
#include "advedge/train.hpp"

namespace {

advedge::LabeledDataset load_train_data(const std::string& path) {
  const auto comma = path.find(',');
  if (comma != std::string::npos)
    return advedge::load_idx(path.substr(0, comma), path.substr(comma + 1));
  return advedge::load_png_dir(path);
}

int cmd_train(const std::string& spec_name, const std::string& data_path, const std::string& out_path,
              std::uint32_t seed, int epochs, float lr, int batch) {
  const advedge::ModelSpec spec = advedge::spec_by_name(spec_name);
  const advedge::LabeledDataset data = load_train_data(data_path);
  advedge::TrainConfig cfg;
  cfg.epochs = epochs;
  cfg.lr = lr;
  cfg.batch = batch;
  cfg.seed = seed;
  advedge::TrainedModel model = advedge::train(advedge::build_model(spec, seed), data, cfg);
  advedge::save_checkpoint(model, out_path);
  std::cout << "trained " << spec_name << " on " << data.size() << " samples, validation accuracy "
            << model.meta.val_accuracy << ", checkpoint written to " << out_path << "\n";
  return 0;
}

int cmd_attack(const std::string& config_path) {
  const advedge::ExperimentConfig cfg = advedge::load_experiment_config(config_path);
  const advedge::ExperimentOutcome outcome = advedge::run_experiment(cfg);
  for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
  std::cout << "attacked " << outcome.records.size() << " images, total queries " << outcome.total_queries
            << ", results in " << cfg.output_dir << "\n";
  if (outcome.total_violations != 0) {
    std::cerr << "error: " << outcome.total_violations << " confinement violations detected\n";
    return 1;
  }
  return 0;
}

int cmd_report(const std::string& dir) {
  advedge::report_from_dir(dir);
  std::cout << "re-aggregated " << dir << "/per_image.csv into summary.csv and iou_sweep.csv\n";
  return 0;
}

int cmd_synth(const std::string& out_dir, int count, std::uint32_t seed) {
  const advedge::LabeledDataset ds = advedge::make_synthetic_dataset(count, seed);
  advedge::save_png_dir(ds, out_dir);
  std::cout << "wrote " << ds.size() << " images across " << ds.class_count << " classes to " << out_dir << "\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Query-efficient black-box attacks on CNN classifiers with CAM interpreters"};
  app.require_subcommand(1);

  std::string spec_name, data_path, out_path, config_path, report_dir, synth_dir;
  std::uint32_t seed = 1;
  int epochs = 12, batch = 32, synth_count = 1000;
  float lr = 0.08f;

  CLI::App* train = app.add_subcommand("train", "Train a classifier and write its checkpoint");
  train->add_option("--spec", spec_name, "Architecture name (conv3 or conv4)")->required();
  train->add_option("--data", data_path, "PNG directory, or images,labels IDX pair")->required();
  train->add_option("--out", out_path, "Checkpoint output path")->required();
  train->add_option("--seed", seed, "Training seed")->required();
  train->add_option("--epochs", epochs, "SGD epochs");
  train->add_option("--lr", lr, "Learning rate");
  train->add_option("--batch", batch, "Minibatch size");

  CLI::App* attack = app.add_subcommand("attack", "Run the attack pipeline from a config file");
  attack->add_option("--config", config_path, "key=value experiment config")->required();

  CLI::App* report = app.add_subcommand("report", "Re-aggregate CSVs in an attack output directory");
  report->add_option("--in", report_dir, "Attack output directory")->required();

  CLI::App* synth = app.add_subcommand("synth", "Generate the synthetic 10-class shape dataset");
  synth->add_option("--out", synth_dir, "Output directory for PNG files")->required();
  synth->add_option("--count", synth_count, "Number of images");
  synth->add_option("--seed", seed, "Generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (train->parsed()) return cmd_train(spec_name, data_path, out_path, seed, epochs, lr, batch);
    if (attack->parsed()) return cmd_attack(config_path);
    if (report->parsed()) return cmd_report(report_dir);
    if (synth->parsed()) return cmd_synth(synth_dir, synth_count, seed);
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
