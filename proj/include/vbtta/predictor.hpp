#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

#include "vbtta/adam.hpp"
#include "vbtta/mathstats.hpp"

namespace vbtta {

enum class Head { linear, class_scores };

// Feed-forward network with rectifier hidden layers. Layer l maps
// sizes[l] -> sizes[l+1] through weights[l] (out x in) and biases[l].
class MlpModel {
public:
  MlpModel(std::vector<int> sizes, Head head);

  const std::vector<int>& sizes() const noexcept { return sizes_; }
  Head head() const noexcept { return head_; }
  int input_dim() const noexcept { return sizes_.front(); }
  int output_dim() const noexcept { return sizes_.back(); }
  std::size_t num_layers() const noexcept { return weights_.size(); }

  Eigen::MatrixXd& weight(std::size_t l) { return weights_.at(l); }
  const Eigen::MatrixXd& weight(std::size_t l) const { return weights_.at(l); }
  Eigen::VectorXd& bias(std::size_t l) { return biases_.at(l); }
  const Eigen::VectorXd& bias(std::size_t l) const { return biases_.at(l); }

  // Row-major weights then bias, layer by layer.
  Eigen::VectorXd parameters() const;
  void set_parameters(const Eigen::VectorXd& flat);
  Eigen::Index num_parameters() const;

private:
  std::vector<int> sizes_;
  Head head_;
  std::vector<Eigen::MatrixXd> weights_;
  std::vector<Eigen::VectorXd> biases_;
};

// He-style initialization for hidden layers.
MlpModel make_mlp(std::vector<int> sizes, Head head, Rng& rng);

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& x);
// One observation per row; returns n x out.
Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& inputs);
// out x d Jacobian of the raw outputs with respect to the input.
Eigen::MatrixXd input_gradient(const MlpModel& model, const Eigen::VectorXd& x);

struct Dataset {
  Eigen::MatrixXd inputs;                  // n x d
  std::vector<std::vector<double>> labels; // S_x per instance; class indices stored as doubles
  int num_classes = 0;                     // 0 for regression

  Eigen::Index size() const noexcept { return inputs.rows(); }
  void validate() const;
};

struct TrainConfig {
  double learning_rate = 0.001;
  int epochs = 200;
  int batch_size = 32;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-8;
  std::uint64_t seed = 0;
};

struct TrainResult {
  MlpModel model;
  std::vector<double> epoch_loss; // full-data loss after each epoch
};

// Mean squared error (linear head) or mean softmax cross-entropy (class
// scores) over the flattened (x, y) pairs, with its parameter gradient.
struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;
};
LossGradient loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& inputs,
                               const Eigen::VectorXd& targets);

// Flattens every label in S_x into its own (x, y) pair.
std::pair<Eigen::MatrixXd, Eigen::VectorXd> flatten_pairs(const Dataset& data);

TrainResult train(const Dataset& data, MlpModel init, const TrainConfig& config);

struct Metrics {
  double mse = 0.0;
  double mae = 0.0;
  double accuracy = 0.0;
};
Metrics metrics(std::span<const double> predictions, std::span<const double> labels);

void save_model(const MlpModel& model, const std::filesystem::path& path);
MlpModel load_model(const std::filesystem::path& path);

Eigen::VectorXd softmax(const Eigen::VectorXd& scores);

} // namespace vbtta
