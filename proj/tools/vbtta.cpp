#include <chrono>
#include <filesystem>
#include <fstream>
#include <iostream>

#include "CLI11.hpp"
#include "vbtta/bench.hpp"
#include "vbtta/error.hpp"

namespace {

constexpr int kExitConfig = 2;
constexpr int kExitRuntime = 3;

vbtta::ExperimentConfig configure(const std::string& path) {
  vbtta::ExperimentConfig config = vbtta::load_config(path);
  vbtta::apply_environment(config);
  return config;
}

void write_split(const std::filesystem::path& path, const vbtta::Dataset& data) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw vbtta::IoError("cannot open " + path.string() + " for writing");
  }
  vbtta::write_dataset_csv(out, data);
  if (!out) {
    throw vbtta::IoError("failed writing " + path.string());
  }
}

int gen(const std::string& config_path, const std::string& out_dir) {
  const auto config = configure(config_path);
  const std::filesystem::path dir = out_dir.empty() ? config.output : std::filesystem::path(out_dir);
  std::filesystem::create_directories(dir);
  const auto splits = vbtta::generate_splits(config, config.seed);
  write_split(dir / "train.csv", splits.train);
  write_split(dir / "calibration.csv", splits.calibration);
  write_split(dir / "test.csv", splits.test);
  std::cout << "wrote " << splits.train.size() << "/" << splits.calibration.size() << "/" << splits.test.size()
            << " train/calibration/test instances to " << dir.string() << '\n';
  return 0;
}

int run(const std::string& config_path, const std::string& out_dir) {
  const auto config = configure(config_path);
  const std::filesystem::path dir = out_dir.empty() ? config.output : std::filesystem::path(out_dir);
  const auto start = std::chrono::steady_clock::now();
  const auto report = vbtta::run_experiment(config);
  vbtta::emit_report(report, dir);
  const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  std::cerr << "ran " << config.n_seeds << " seed(s) in " << seconds << " s\n";
  std::cout << vbtta::summarize_report(dir);
  return 0;
}

int report(const std::string& in_dir) {
  std::cout << vbtta::summarize_report(in_dir);
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"Variational test-time augmentation weighting benchmark"};
  app.require_subcommand(1);

  std::string config_path;
  std::string out_dir;
  std::string in_dir;

  auto* gen_cmd = app.add_subcommand("gen", "Generate the synthetic train/calibration/test splits");
  gen_cmd->add_option("--config", config_path, "Experiment config file")->required();
  gen_cmd->add_option("--out", out_dir, "Output directory (default: the config's output key)");

  auto* run_cmd = app.add_subcommand("run", "Train, fit weights and write the benchmark report");
  run_cmd->add_option("--config", config_path, "Experiment config file")->required();
  run_cmd->add_option("--out", out_dir, "Report directory")->required();

  auto* report_cmd = app.add_subcommand("report", "Summarize a report directory and redraw its plots");
  report_cmd->add_option("--in", in_dir, "Report directory")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitConfig;
  }

  try {
    if (*gen_cmd) {
      return gen(config_path, out_dir);
    }
    if (*run_cmd) {
      return run(config_path, out_dir);
    }
    return report(in_dir);
  } catch (const vbtta::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitRuntime;
  }
}
