#include "vbtta/predictor.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <sstream>

#include "vbtta/error.hpp"

namespace vbtta {

MlpModel::MlpModel(std::vector<int> sizes, Head head) : sizes_(std::move(sizes)), head_(head) {
  if (sizes_.size() < 2) {
    throw DomainError("MlpModel: need at least input and output sizes");
  }
  for (int s : sizes_) {
    if (s < 1) {
      throw DomainError("MlpModel: layer sizes must be positive");
    }
  }
  for (std::size_t l = 0; l + 1 < sizes_.size(); ++l) {
    weights_.emplace_back(Eigen::MatrixXd::Zero(sizes_[l + 1], sizes_[l]));
    biases_.emplace_back(Eigen::VectorXd::Zero(sizes_[l + 1]));
  }
}

Eigen::Index MlpModel::num_parameters() const {
  Eigen::Index n = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    n += weights_[l].size() + biases_[l].size();
  }
  return n;
}

Eigen::VectorXd MlpModel::parameters() const {
  Eigen::VectorXd flat(num_parameters());
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    const auto& w = weights_[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      flat.segment(off, w.cols()) = w.row(r).transpose();
      off += w.cols();
    }
    flat.segment(off, biases_[l].size()) = biases_[l];
    off += biases_[l].size();
  }
  return flat;
}

void MlpModel::set_parameters(const Eigen::VectorXd& flat) {
  if (flat.size() != num_parameters()) {
    throw DomainError("MlpModel::set_parameters: wrong parameter count");
  }
  Eigen::Index off = 0;
  for (std::size_t l = 0; l < weights_.size(); ++l) {
    auto& w = weights_[l];
    for (Eigen::Index r = 0; r < w.rows(); ++r) {
      w.row(r) = flat.segment(off, w.cols()).transpose();
      off += w.cols();
    }
    biases_[l] = flat.segment(off, biases_[l].size());
    off += biases_[l].size();
  }
}

MlpModel make_mlp(std::vector<int> sizes, Head head, Rng& rng) {
  MlpModel model(std::move(sizes), head);
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    auto& w = model.weight(l);
    const double sd = std::sqrt(2.0 / static_cast<double>(w.cols()));
    for (Eigen::Index i = 0; i < w.size(); ++i) {
      w.data()[i] = sd * rng.normal();
    }
  }
  return model;
}

namespace {

void check_input(const MlpModel& model, Eigen::Index d) {
  if (d != model.input_dim()) {
    throw DomainError("mlp: input dimension " + std::to_string(d) + " does not match model " +
                      std::to_string(model.input_dim()));
  }
}

// Column-per-sample forward pass keeping every pre-activation.
std::vector<Eigen::MatrixXd> forward_trace(const MlpModel& model, const Eigen::MatrixXd& columns) {
  std::vector<Eigen::MatrixXd> pre;
  pre.reserve(model.num_layers());
  Eigen::MatrixXd act = columns;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Eigen::MatrixXd z = model.weight(l) * act;
    z.colwise() += model.bias(l);
    pre.push_back(z);
    if (l + 1 < model.num_layers()) {
      act = z.cwiseMax(0.0);
    }
  }
  return pre;
}

} // namespace

Eigen::VectorXd forward(const MlpModel& model, const Eigen::VectorXd& x) {
  check_input(model, x.size());
  Eigen::VectorXd act = x;
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    Eigen::VectorXd z = model.weight(l) * act + model.bias(l);
    act = (l + 1 < model.num_layers()) ? Eigen::VectorXd(z.cwiseMax(0.0)) : z;
  }
  return act;
}

Eigen::MatrixXd forward_batch(const MlpModel& model, const Eigen::MatrixXd& inputs) {
  check_input(model, inputs.cols());
  return forward_trace(model, inputs.transpose()).back().transpose();
}

Eigen::MatrixXd input_gradient(const MlpModel& model, const Eigen::VectorXd& x) {
  check_input(model, x.size());
  // Forward, recording which rectifiers are active (subgradient 0 at 0).
  std::vector<Eigen::ArrayXd> active;
  Eigen::VectorXd act = x;
  for (std::size_t l = 0; l + 1 < model.num_layers(); ++l) {
    const Eigen::VectorXd z = model.weight(l) * act + model.bias(l);
    active.push_back((z.array() > 0.0).cast<double>());
    act = z.cwiseMax(0.0);
  }
  Eigen::MatrixXd jac = model.weight(model.num_layers() - 1);
  for (std::size_t l = model.num_layers() - 1; l-- > 0;) {
    jac = (jac.array().rowwise() * active[l].transpose()).matrix() * model.weight(l);
  }
  return jac;
}

void Dataset::validate() const {
  if (inputs.rows() < 1) {
    throw DomainError("dataset: empty");
  }
  if (static_cast<Eigen::Index>(labels.size()) != inputs.rows()) {
    throw DomainError("dataset: one label set per instance required");
  }
  for (const auto& s : labels) {
    if (s.empty()) {
      throw DomainError("dataset: every instance needs at least one label");
    }
    if (num_classes > 0) {
      for (double y : s) {
        if (y < 0 || y >= num_classes || y != std::floor(y)) {
          throw DomainError("dataset: class index out of range");
        }
      }
    }
  }
}

std::pair<Eigen::MatrixXd, Eigen::VectorXd> flatten_pairs(const Dataset& data) {
  std::size_t total = 0;
  for (const auto& s : data.labels) {
    total += s.size();
  }
  Eigen::MatrixXd x(static_cast<Eigen::Index>(total), data.inputs.cols());
  Eigen::VectorXd y(static_cast<Eigen::Index>(total));
  Eigen::Index r = 0;
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (double label : data.labels[static_cast<std::size_t>(i)]) {
      x.row(r) = data.inputs.row(i);
      y(r) = label;
      ++r;
    }
  }
  return {std::move(x), std::move(y)};
}

Eigen::VectorXd softmax(const Eigen::VectorXd& scores) {
  const Eigen::ArrayXd e = (scores.array() - scores.maxCoeff()).unaryExpr([](double t) { return std::exp(t); });
  return (e / e.sum()).matrix();
}

LossGradient loss_and_gradient(const MlpModel& model, const Eigen::MatrixXd& inputs,
                               const Eigen::VectorXd& targets) {
  check_input(model, inputs.cols());
  const Eigen::Index n = inputs.rows();
  const double inv_n = 1.0 / static_cast<double>(n);
  const Eigen::MatrixXd columns = inputs.transpose();
  const auto pre = forward_trace(model, columns);
  const Eigen::MatrixXd& out = pre.back();

  LossGradient result;
  Eigen::MatrixXd delta(out.rows(), n);
  if (model.head() == Head::linear) {
    if (out.rows() != 1) {
      throw DomainError("loss: linear head expects a single output");
    }
    const Eigen::RowVectorXd resid = out.row(0) - targets.transpose();
    result.loss = resid.squaredNorm() * inv_n;
    delta.row(0) = 2.0 * inv_n * resid;
  } else {
    double loss = 0.0;
    for (Eigen::Index c = 0; c < n; ++c) {
      const Eigen::VectorXd p = softmax(out.col(c));
      const auto cls = static_cast<Eigen::Index>(targets(c));
      loss -= std::log(std::max(p(cls), 1e-300));
      delta.col(c) = p;
      delta(cls, c) -= 1.0;
    }
    result.loss = loss * inv_n;
    delta *= inv_n;
  }

  // Backward pass, filling gradients layer by layer from the top.
  std::vector<Eigen::MatrixXd> dw(model.num_layers());
  std::vector<Eigen::VectorXd> db(model.num_layers());
  for (std::size_t l = model.num_layers(); l-- > 0;) {
    const Eigen::MatrixXd act_in = l == 0 ? columns : Eigen::MatrixXd(pre[l - 1].cwiseMax(0.0));
    dw[l] = delta * act_in.transpose();
    db[l] = delta.rowwise().sum();
    if (l > 0) {
      delta = (model.weight(l).transpose() * delta).cwiseProduct(
          (pre[l - 1].array() > 0.0).cast<double>().matrix());
    }
  }
  MlpModel packed(model.sizes(), model.head());
  for (std::size_t l = 0; l < model.num_layers(); ++l) {
    packed.weight(l) = dw[l];
    packed.bias(l) = db[l];
  }
  result.gradient = packed.parameters();
  return result;
}

TrainResult train(const Dataset& data, MlpModel init, const TrainConfig& config) {
  data.validate();
  if (!(config.learning_rate >= 0.0) || config.epochs < 1 || config.batch_size < 1) {
    throw DomainError("train: invalid configuration");
  }
  if (data.inputs.cols() != init.input_dim()) {
    throw DomainError("train: model input dimension does not match data");
  }
  auto [x, y] = flatten_pairs(data);
  const Eigen::Index n = x.rows();
  Rng rng(config.seed);
  Adam adam(init.num_parameters(),
            AdamConfig{config.learning_rate, config.beta1, config.beta2, config.epsilon});
  Eigen::VectorXd params = init.parameters();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});

  TrainResult result{std::move(init), {}};
  MlpModel& model = result.model;
  for (int epoch = 0; epoch < config.epochs; ++epoch) {
    std::shuffle(order.begin(), order.end(), rng.engine());
    for (Eigen::Index start = 0; start < n; start += config.batch_size) {
      const Eigen::Index len = std::min<Eigen::Index>(config.batch_size, n - start);
      Eigen::MatrixXd bx(len, x.cols());
      Eigen::VectorXd by(len);
      for (Eigen::Index r = 0; r < len; ++r) {
        const auto idx = order[static_cast<std::size_t>(start + r)];
        bx.row(r) = x.row(idx);
        by(r) = y(idx);
      }
      const auto lg = loss_and_gradient(model, bx, by);
      if (!std::isfinite(lg.loss) || !lg.gradient.allFinite()) {
        throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
      }
      adam.step(params, lg.gradient);
      model.set_parameters(params);
    }
    const double full = loss_and_gradient(model, x, y).loss;
    if (!std::isfinite(full)) {
      throw DivergenceError("train: non-finite loss at epoch " + std::to_string(epoch + 1));
    }
    result.epoch_loss.push_back(full);
  }
  return result;
}

Metrics metrics(std::span<const double> predictions, std::span<const double> labels) {
  if (predictions.empty()) {
    throw DomainError("metrics: empty input");
  }
  if (predictions.size() != labels.size()) {
    throw DomainError("metrics: prediction and label counts differ");
  }
  Metrics m;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const double e = predictions[i] - labels[i];
    m.mse += e * e;
    m.mae += std::abs(e);
    m.accuracy += predictions[i] == labels[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(predictions.size());
  m.mse /= n;
  m.mae /= n;
  m.accuracy /= n;
  return m;
}

namespace {
constexpr const char* kModelMagic = "vbtta-mlp";
constexpr int kModelVersion = 1;
} // namespace

void save_model(const MlpModel& model, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("save_model: cannot open " + path.string());
  }
  out << kModelMagic << ' ' << kModelVersion << "\nsizes";
  for (int s : model.sizes()) {
    out << ' ' << s;
  }
  out << "\nhead " << (model.head() == Head::linear ? "linear" : "class_scores") << '\n';
  const Eigen::VectorXd p = model.parameters();
  out << "params " << p.size() << '\n';
  out.write(reinterpret_cast<const char*>(p.data()),
            static_cast<std::streamsize>(p.size() * static_cast<Eigen::Index>(sizeof(double))));
  if (!out) {
    throw IoError("save_model: write failed for " + path.string());
  }
}

MlpModel load_model(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw IoError("load_model: cannot open " + path.string());
  }
  std::string line;
  std::getline(in, line);
  std::istringstream magic(line);
  std::string word;
  int version = 0;
  magic >> word >> version;
  if (word != kModelMagic || version != kModelVersion) {
    throw IoError("load_model: unsupported header in " + path.string());
  }
  std::getline(in, line);
  std::istringstream sizes_line(line);
  sizes_line >> word;
  std::vector<int> sizes;
  for (int s = 0; sizes_line >> s;) {
    sizes.push_back(s);
  }
  std::getline(in, line);
  const Head head = line == "head linear" ? Head::linear : Head::class_scores;
  if (word != "sizes" || (line != "head linear" && line != "head class_scores")) {
    throw IoError("load_model: malformed header in " + path.string());
  }
  std::getline(in, line);
  std::istringstream count_line(line);
  Eigen::Index count = 0;
  count_line >> word >> count;
  MlpModel model(sizes, head);
  if (word != "params" || count != model.num_parameters()) {
    throw IoError("load_model: parameter count mismatch in " + path.string());
  }
  Eigen::VectorXd p(count);
  in.read(reinterpret_cast<char*>(p.data()),
          static_cast<std::streamsize>(count * static_cast<Eigen::Index>(sizeof(double))));
  if (!in) {
    throw IoError("load_model: truncated parameters in " + path.string());
  }
  model.set_parameters(p);
  return model;
}

} // namespace vbtta
