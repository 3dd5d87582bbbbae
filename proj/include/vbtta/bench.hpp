#pragma once

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "vbtta/augment.hpp"
#include "vbtta/mathstats.hpp"
#include "vbtta/predictor.hpp"
#include "vbtta/vbcore.hpp"

namespace vbtta {

enum class DataSource { gaussian, gamma };
enum class FitMethod { cavi, advi };
enum class MomentMethod { delta, monte_carlo };
enum class MetricKind { mse, mae, accuracy };

struct ExperimentConfig {
  DataSource source = DataSource::gaussian;
  int dim = 40;
  double gamma_shape = 2.0;
  double gamma_rate = 2.0;

  int n_train = 1000;
  int n_calibration = 1000;
  int n_test = 1000;
  double noisy_fraction = 0.3;
  double noise_scale = 1.0;
  double label_noise_sd = 0.1; // ε in the clean label

  Task task = Task::regression;
  int classes = 2;

  std::uint64_t seed = 0;
  int n_seeds = 10;
  int threads = 0; // 0: one per hardware thread

  std::vector<AugmentationSpec> augmentations = {MixupAug{0.1}, MixupAug{0.5}, MixupAug{0.9},
                                                 CutmixAug{0.1}, CutmixAug{0.5}, CutmixAug{0.9}};

  std::vector<int> hidden = {64, 64};
  TrainConfig train;

  FitMethod fit = FitMethod::cavi;
  int steps = 300;
  std::vector<int> checkpoints = {1, 50, 100, 200, 300};
  MomentMethod moments = MomentMethod::monte_carlo;
  int moment_samples = 256; // draws per (instance, augmentation) for calibration moments
  int test_samples = 256;   // draws per (instance, augmentation) at prediction time
  double sigma_eps = 0.01;
  double prior_beta = 10.0;
  double prior_dof = 2.0;
  double advi_learning_rate = 0.01;
  int advi_mc = 16;

  MetricKind metric = MetricKind::mse;
  std::filesystem::path output = "out";

  void validate() const;
};

// Flat "key = value" text, '#' starts a comment. Unknown keys, malformed
// values and invalid combinations raise ConfigError.
ExperimentConfig parse_config(std::istream& in);
ExperimentConfig load_config(const std::filesystem::path& path);
std::string format_config(const ExperimentConfig& config);

// Applies VBTTA_SEED when set; a malformed value is a ConfigError.
void apply_environment(ExperimentConfig& config);

// Parameters of the label polynomial y = Σ_{p=1..3} a_p (u·x)^p + ε.
struct LabelGenerator {
  Eigen::VectorXd direction;    // u, unit length
  Eigen::Vector3d coefficients; // a_1..a_3

  static LabelGenerator random(int dim, Rng& rng);
  double clean(const Eigen::VectorXd& x) const;
};

// n instances. floor(noisy_fraction·n) of them, chosen at random, receive a
// second label y + N(0, noise_scale²). For classification the labels are
// binned into classes with thresholds at the normal quantiles of the clean
// label spread (the sign of y when there are two classes).
Dataset generate_synthetic(const ExperimentConfig& config, const LabelGenerator& generator, int n, Rng& rng);

struct SyntheticSplits {
  LabelGenerator generator;
  Dataset train;
  Dataset calibration;
  Dataset test;
};

SyntheticSplits generate_splits(const ExperimentConfig& config, std::uint64_t seed);
void write_dataset_csv(std::ostream& out, const Dataset& data);

struct MetricSummary {
  std::string strategy;
  int step = 0;
  double mean = 0.0;
  double std = 0.0;
};

// Everything one seed contributes to a report.
struct SeedRun {
  std::uint64_t seed = 0;
  std::map<std::string, std::vector<double>> metric; // strategy -> value per checkpoint
  std::vector<Eigen::VectorXd> weights;              // per step 1..steps
  std::vector<double> negative_elbo;                 // per step 1..steps
};

struct RunReport {
  std::string metric_name;
  std::vector<int> checkpoints;
  std::vector<std::string> strategies;
  std::vector<std::string> augmentations;
  std::vector<MetricSummary> metrics;  // strategy-major, then checkpoint
  std::vector<Eigen::VectorXd> weights; // seed-averaged, per step
  std::vector<double> negative_elbo;    // seed-averaged, per step
  std::vector<SeedRun> seeds;           // sorted by seed
};

// One full seed: data, predictor, moments, weight fit, evaluation. Stage
// failures are rethrown as Error with the stage name.
SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed);

RunReport aggregate(const ExperimentConfig& config, std::vector<SeedRun> runs);

// Seeds config.seed .. config.seed + n_seeds - 1, run in parallel and reduced in seed order.
RunReport run_experiment(const ExperimentConfig& config);

// metrics.csv, weights.csv, elbo.csv, seeds.csv, augmentations.txt and an SVG
// plot for each of the first three. Output is byte-stable for a fixed report.
void emit_report(const RunReport& report, const std::filesystem::path& directory);

// Reads metrics.csv, weights.csv, elbo.csv and augmentations.txt back.
// Per-seed metrics are not recovered.
RunReport read_report(const std::filesystem::path& directory);

// Summary table read back from a report directory.
std::string summarize_report(const std::filesystem::path& directory);

} // namespace vbtta
