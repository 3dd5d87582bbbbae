#include "vbtta/bench.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <exception>
#include <numeric>
#include <ostream>
#include <thread>

#include <boost/math/distributions/normal.hpp>

#include "vbtta/advi.hpp"
#include "vbtta/error.hpp"
#include "vbtta/moments.hpp"
#include "vbtta/text.hpp"

namespace vbtta {

namespace {

// Stream indices under the per-seed root.
enum Stream : std::uint64_t {
  kGenerator = 1,
  kTrainData,
  kCalibrationData,
  kTestData,
  kModelInit,
  kCalibrationMoments,
  kTestPredictions,
  kAdvi,
  kSpread,
};

constexpr int kSpreadSamples = 10000;

template <typename F>
auto stage(const char* name, std::uint64_t seed, F&& body) {
  try {
    return body();
  } catch (const std::exception& e) {
    throw Error(std::string("stage '") + name + "' failed for seed " + std::to_string(seed) + ": " + e.what());
  }
}

Eigen::VectorXd draw_input(const ExperimentConfig& config, Rng& rng) {
  Eigen::VectorXd x(config.dim);
  for (int i = 0; i < config.dim; ++i) {
    x(i) = config.source == DataSource::gaussian ? rng.normal() : rng.gamma(config.gamma_shape, config.gamma_rate);
  }
  return x;
}

} // namespace

LabelGenerator LabelGenerator::random(int dim, Rng& rng) {
  if (dim < 1) {
    throw DomainError("LabelGenerator: dimension must be at least 1");
  }
  LabelGenerator g;
  g.direction.resize(dim);
  do {
    for (int i = 0; i < dim; ++i) {
      g.direction(i) = rng.normal();
    }
  } while (g.direction.norm() == 0.0);
  g.direction.normalize();
  for (int p = 0; p < 3; ++p) {
    g.coefficients(p) = rng.normal();
  }
  return g;
}

double LabelGenerator::clean(const Eigen::VectorXd& x) const {
  const double t = direction.dot(x);
  return t * (coefficients(0) + t * (coefficients(1) + t * coefficients(2)));
}

namespace {

// Class of label y: the number of thresholds spread·Φ⁻¹(c/C) below it.
int class_of(double y, double spread, int classes) {
  const boost::math::normal_distribution<double> std_normal;
  int cls = 0;
  for (int c = 1; c < classes; ++c) {
    const double q = boost::math::quantile(std_normal, static_cast<double>(c) / classes);
    if (y > spread * q) {
      ++cls;
    }
  }
  return cls;
}

double label_spread(const ExperimentConfig& config, const LabelGenerator& generator, Rng& rng) {
  double sum = 0.0;
  double sq = 0.0;
  for (int i = 0; i < kSpreadSamples; ++i) {
    const double y = generator.clean(draw_input(config, rng));
    sum += y;
    sq += y * y;
  }
  const double mean = sum / kSpreadSamples;
  return std::sqrt(std::max(sq / kSpreadSamples - mean * mean, 0.0));
}

Dataset generate_with_spread(const ExperimentConfig& config, const LabelGenerator& generator, int n, Rng& rng,
                             double spread) {
  if (n < 1) {
    throw DomainError("generate_synthetic: need at least one instance");
  }
  Dataset data;
  data.inputs.resize(n, config.dim);
  data.labels.resize(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) {
    const Eigen::VectorXd x = draw_input(config, rng);
    data.inputs.row(i) = x.transpose();
    data.labels[static_cast<std::size_t>(i)] = {generator.clean(x) + config.label_noise_sd * rng.normal()};
  }
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  for (std::size_t i = order.size(); i > 1; --i) {
    std::swap(order[i - 1], order[rng.index(i)]);
  }
  const auto noisy = static_cast<std::size_t>(std::floor(config.noisy_fraction * n + 1e-9));
  for (std::size_t j = 0; j < noisy; ++j) {
    auto& labels = data.labels[static_cast<std::size_t>(order[j])];
    labels.push_back(labels.front() + config.noise_scale * rng.normal());
  }
  if (config.task == Task::classification) {
    data.num_classes = config.classes;
    for (auto& labels : data.labels) {
      for (auto& y : labels) {
        y = class_of(y, spread, config.classes);
      }
    }
  }
  return data;
}

} // namespace

Dataset generate_synthetic(const ExperimentConfig& config, const LabelGenerator& generator, int n, Rng& rng) {
  double spread = 1.0;
  if (config.task == Task::classification && config.classes > 2) {
    Rng spread_rng = rng.split(kSpread);
    spread = label_spread(config, generator, spread_rng);
  }
  return generate_with_spread(config, generator, n, rng, spread);
}

SyntheticSplits generate_splits(const ExperimentConfig& config, std::uint64_t seed) {
  const Rng root(seed);
  Rng gen_rng = root.split(kGenerator);
  SyntheticSplits s{LabelGenerator::random(config.dim, gen_rng), {}, {}, {}};
  double spread = 1.0;
  if (config.task == Task::classification && config.classes > 2) {
    Rng spread_rng = root.split(kSpread);
    spread = label_spread(config, s.generator, spread_rng);
  }
  Rng train_rng = root.split(kTrainData);
  Rng cal_rng = root.split(kCalibrationData);
  Rng test_rng = root.split(kTestData);
  s.train = generate_with_spread(config, s.generator, config.n_train, train_rng, spread);
  s.calibration = generate_with_spread(config, s.generator, config.n_calibration, cal_rng, spread);
  s.test = generate_with_spread(config, s.generator, config.n_test, test_rng, spread);
  return s;
}

void write_dataset_csv(std::ostream& out, const Dataset& data) {
  for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) {
    out << 'x' << j << ',';
  }
  out << "labels\n";
  for (Eigen::Index i = 0; i < data.size(); ++i) {
    for (Eigen::Index j = 0; j < data.inputs.cols(); ++j) {
      out << format_double(data.inputs(i, j)) << ',';
    }
    const auto& labels = data.labels[static_cast<std::size_t>(i)];
    for (std::size_t j = 0; j < labels.size(); ++j) {
      out << (j ? " " : "") << format_double(labels[j]);
    }
    out << '\n';
  }
}

namespace {

std::string metric_label(MetricKind m) {
  switch (m) {
  case MetricKind::mse:
    return "mse";
  case MetricKind::mae:
    return "mae";
  case MetricKind::accuracy:
    return "accuracy";
  }
  return "?";
}

double score(MetricKind kind, const std::vector<double>& predictions, const std::vector<double>& truth) {
  const Metrics m = metrics(predictions, truth);
  switch (kind) {
  case MetricKind::mse:
    return m.mse;
  case MetricKind::mae:
    return m.mae;
  case MetricKind::accuracy:
    return m.accuracy;
  }
  return 0.0;
}

// Weight vector and negative objective in force at every step 1..steps,
// where step s reads entry s-1 of the traces (entry 0 is the initialization).
struct WeightPath {
  std::vector<Eigen::VectorXd> weights;
  std::vector<double> negative_objective;
};

WeightPath pad_path(const std::vector<Eigen::VectorXd>& weights, const std::vector<double>& objective, int steps,
                    double sign) {
  WeightPath path;
  for (int s = 1; s <= steps; ++s) {
    const auto at = std::min(static_cast<std::size_t>(s - 1), weights.size() - 1);
    path.weights.push_back(weights[at]);
    path.negative_objective.push_back(sign * objective[std::min(at, objective.size() - 1)]);
  }
  return path;
}

} // namespace

SeedRun run_seed(const ExperimentConfig& config, std::uint64_t seed) {
  config.validate();
  const Rng root(seed);
  const bool classify = config.task == Task::classification;
  const auto k_count = static_cast<Eigen::Index>(config.augmentations.size());
  const std::span<const AugmentationSpec> specs(config.augmentations);

  const SyntheticSplits data = stage("generate", seed, [&] { return generate_splits(config, seed); });

  const MlpModel model = stage("train", seed, [&] {
    std::vector<int> sizes{config.dim};
    sizes.insert(sizes.end(), config.hidden.begin(), config.hidden.end());
    sizes.push_back(classify ? config.classes : 1);
    Rng init_rng = root.split(kModelInit);
    MlpModel init = make_mlp(sizes, classify ? Head::class_scores : Head::linear, init_rng);
    TrainConfig tc = config.train;
    tc.seed = splitmix64(seed ^ 0x7261696eULL);
    return train(data.train, std::move(init), tc).model;
  });
  const ModelView view = view_of(model);
  const ReferencePool pool(data.train.inputs);

  const MomentTable moments = stage("moments", seed, [&] {
    NoiseConfig noise;
    noise.sigma_eps = Eigen::VectorXd::Constant(1, config.sigma_eps);
    const Rng base = root.split(kCalibrationMoments);
    CovarianceCache cache(config.moment_samples, splitmix64(seed));
    MomentTable table(static_cast<std::size_t>(data.calibration.size()));
    for (Eigen::Index i = 0; i < data.calibration.size(); ++i) {
      const Eigen::VectorXd x = data.calibration.inputs.row(i).transpose();
      const Rng instance = base.split(static_cast<std::uint64_t>(i));
      for (const auto& spec : specs) {
        if (config.moments == MomentMethod::delta) {
          table[static_cast<std::size_t>(i)].push_back(delta_method_moments(view, x, spec, noise, &pool, &cache));
        } else {
          Rng stream = instance.split(spec_hash(spec));
          table[static_cast<std::size_t>(i)].push_back(
              mc_moments(view, x, spec, config.moment_samples, noise, stream, &pool));
        }
      }
    }
    return table;
  });

  const WeightPath path = stage("fit", seed, [&] {
    if (classify) {
      std::vector<std::vector<int>> labels;
      ClassProbabilityTable probs;
      for (std::size_t i = 0; i < moments.size(); ++i) {
        std::vector<int> row;
        for (double y : data.calibration.labels[i]) {
          row.push_back(static_cast<int>(y));
        }
        labels.push_back(std::move(row));
        std::vector<Eigen::VectorXd> per_k;
        for (const auto& m : moments[i]) {
          per_k.push_back(probit_class_probabilities(probit_from_moments(m)));
        }
        probs.push_back(std::move(per_k));
      }
      const auto fit = fit_categorical(labels, probs, FitConfig{config.steps, 1e-8, true});
      return pad_path(fit.weight_trace, fit.loglik_trace, config.steps, -1.0);
    }
    std::vector<LabelSet> labels;
    for (const auto& row : data.calibration.labels) {
      labels.push_back(scalar_labels(row));
    }
    PriorConfig prior;
    prior.beta = config.prior_beta;
    prior.dof = config.prior_dof;
    if (config.fit == FitMethod::cavi) {
      const auto fit = fit_continuous(labels, moments, prior, FitConfig{config.steps, 1e-8, true});
      return pad_path(fit.weight_trace, fit.elbo_trace, config.steps, -1.0);
    }
    const VbttaAdviModel advi = vbtta_advi_model(labels, moments, prior);
    std::vector<Eigen::VectorXd> weights;
    AdviConfig ac;
    ac.adam.learning_rate = config.advi_learning_rate;
    ac.steps = config.steps - 1;
    ac.n_mc = config.advi_mc;
    ac.seed = root.split(kAdvi).seed();
    ac.on_step = [&](int, const FullRankGaussian& q) { weights.push_back(advi.weights_at(q.mean)); };
    const auto fit = advi_fit(advi.log_joint, advi.transform, advi.initial_q(), ac);
    return pad_path(weights, fit.elbo_trace, config.steps, -1.0);
  });

  SeedRun run;
  run.seed = seed;
  run.weights = path.weights;
  run.negative_elbo = path.negative_objective;

  stage("evaluate", seed, [&] {
    const Task task = config.task;
    const Rng base = root.split(kTestPredictions);
    const auto n_test = static_cast<std::size_t>(data.test.size());
    std::vector<Eigen::MatrixXd> outputs(n_test);
    std::vector<double> truth(n_test);
    std::vector<double> erm(n_test);
    for (std::size_t i = 0; i < n_test; ++i) {
      const Eigen::VectorXd x = data.test.inputs.row(static_cast<Eigen::Index>(i)).transpose();
      outputs[i] = component_outputs(view, x, specs, config.test_samples, base.split(i), &pool, task);
      truth[i] = data.test.labels[i].front();
      const Eigen::VectorXd f = forward(model, x);
      if (classify) {
        Eigen::Index best = 0;
        f.maxCoeff(&best);
        erm[i] = static_cast<double>(best);
      } else {
        erm[i] = f(0);
      }
    }
    auto evaluate = [&](const SimplexWeights& w) {
      std::vector<double> pred(n_test);
      for (std::size_t i = 0; i < n_test; ++i) {
        const auto p = combine_components(outputs[i], w, task);
        pred[i] = classify ? static_cast<double>(p.label) : p.combined(0);
      }
      return score(config.metric, pred, truth);
    };
    const double erm_score = score(config.metric, erm, truth);
    const double tta_score = evaluate(SimplexWeights::uniform(k_count));
    for (int c : config.checkpoints) {
      run.metric["erm"].push_back(erm_score);
      run.metric["tta"].push_back(tta_score);
      run.metric["vbtta"].push_back(evaluate(SimplexWeights(path.weights[static_cast<std::size_t>(c - 1)])));
    }
    return 0;
  });
  return run;
}

RunReport aggregate(const ExperimentConfig& config, std::vector<SeedRun> runs) {
  std::sort(runs.begin(), runs.end(), [](const SeedRun& a, const SeedRun& b) { return a.seed < b.seed; });
  RunReport report;
  report.metric_name = metric_label(config.metric);
  report.checkpoints = config.checkpoints;
  report.strategies = {"erm", "tta", "vbtta"};
  for (const auto& a : config.augmentations) {
    report.augmentations.push_back(describe(a));
  }
  if (runs.empty()) {
    return report;
  }
  const double n = static_cast<double>(runs.size());
  for (const auto& strategy : report.strategies) {
    for (std::size_t c = 0; c < report.checkpoints.size(); ++c) {
      double sum = 0.0;
      for (const auto& r : runs) {
        sum += r.metric.at(strategy)[c];
      }
      const double mean = sum / n;
      double ss = 0.0;
      for (const auto& r : runs) {
        const double d = r.metric.at(strategy)[c] - mean;
        ss += d * d;
      }
      report.metrics.push_back({strategy, report.checkpoints[c], mean, runs.size() > 1 ? std::sqrt(ss / (n - 1.0)) : 0.0});
    }
  }
  const std::size_t steps = runs.front().weights.size();
  for (std::size_t s = 0; s < steps; ++s) {
    Eigen::VectorXd w = Eigen::VectorXd::Zero(runs.front().weights[s].size());
    double e = 0.0;
    for (const auto& r : runs) {
      w += r.weights[s];
      e += r.negative_elbo[s];
    }
    report.weights.push_back(w / n);
    report.negative_elbo.push_back(e / n);
  }
  report.seeds = std::move(runs);
  return report;
}

RunReport run_experiment(const ExperimentConfig& config) {
  config.validate();
  const auto n_seeds = static_cast<std::size_t>(config.n_seeds);
  std::vector<SeedRun> runs(n_seeds);
  std::vector<std::exception_ptr> errors(n_seeds);
  std::atomic<std::size_t> next{0};
  auto worker = [&] {
    for (std::size_t j = next++; j < n_seeds; j = next++) {
      try {
        runs[j] = run_seed(config, config.seed + j);
      } catch (...) {
        errors[j] = std::current_exception();
      }
    }
  };
  const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
  const auto n_threads =
      std::min<std::size_t>(n_seeds, config.threads > 0 ? static_cast<std::size_t>(config.threads) : hw);
  std::vector<std::thread> pool;
  for (std::size_t t = 1; t < n_threads; ++t) {
    pool.emplace_back(worker);
  }
  worker();
  for (auto& t : pool) {
    t.join();
  }
  for (const auto& e : errors) {
    if (e) {
      std::rethrow_exception(e);
    }
  }
  return aggregate(config, std::move(runs));
}

} // namespace vbtta
