#include <cerrno>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <functional>
#include <limits>
#include <map>
#include <sstream>

#include "vbtta/bench.hpp"
#include "vbtta/error.hpp"
#include "vbtta/text.hpp"

namespace vbtta {

namespace {

[[noreturn]] void fail(int line, const std::string& key, const std::string& what) {
  std::ostringstream msg;
  msg << "config";
  if (line > 0) {
    msg << " line " << line;
  }
  msg << ": " << key << ": " << what;
  throw ConfigError(msg.str());
}

double as_double(const std::string& v, int line, const std::string& key) {
  double out = 0.0;
  if (!parse_double(v, out) || !std::isfinite(out)) {
    fail(line, key, "expected a number, got '" + v + "'");
  }
  return out;
}

long long as_integer(const std::string& v, int line, const std::string& key) {
  const double d = as_double(v, line, key);
  if (d != std::floor(d) || std::abs(d) > 9.0e15) {
    fail(line, key, "expected an integer, got '" + v + "'");
  }
  return static_cast<long long>(d);
}

int as_int(const std::string& v, int line, const std::string& key) {
  const long long n = as_integer(v, line, key);
  if (n < std::numeric_limits<int>::min() || n > std::numeric_limits<int>::max()) {
    fail(line, key, "out of range");
  }
  return static_cast<int>(n);
}

std::uint64_t as_seed(const std::string& v, int line, const std::string& key) {
  if (v.empty() || v.find_first_not_of("0123456789") != std::string::npos) {
    fail(line, key, "expected a nonnegative integer, got '" + v + "'");
  }
  errno = 0;
  char* end = nullptr;
  const unsigned long long n = std::strtoull(v.c_str(), &end, 10);
  if (errno != 0 || *end != '\0') {
    fail(line, key, "out of range");
  }
  return n;
}

std::vector<int> as_int_list(const std::string& v, int line, const std::string& key) {
  std::vector<int> out;
  for (const auto& part : split(v, ',')) {
    const std::string t = trim(part);
    if (!t.empty()) {
      out.push_back(as_int(t, line, key));
    }
  }
  return out;
}

template <typename Enum>
Enum as_enum(const std::string& v, const std::vector<std::pair<std::string, Enum>>& names, int line,
             const std::string& key) {
  for (const auto& [name, value] : names) {
    if (v == name) {
      return value;
    }
  }
  std::string options;
  for (const auto& [name, value] : names) {
    options += (options.empty() ? "" : ", ") + name;
  }
  fail(line, key, "expected one of {" + options + "}, got '" + v + "'");
}

const std::vector<std::pair<std::string, DataSource>> kSources = {{"gaussian", DataSource::gaussian},
                                                                  {"gamma", DataSource::gamma}};
const std::vector<std::pair<std::string, FitMethod>> kFits = {{"cavi", FitMethod::cavi}, {"advi", FitMethod::advi}};
const std::vector<std::pair<std::string, MomentMethod>> kMoments = {{"delta", MomentMethod::delta},
                                                                    {"monte_carlo", MomentMethod::monte_carlo}};
const std::vector<std::pair<std::string, MetricKind>> kMetrics = {
    {"mse", MetricKind::mse}, {"mae", MetricKind::mae}, {"accuracy", MetricKind::accuracy}};
const std::vector<std::pair<std::string, Task>> kTasks = {{"regression", Task::regression},
                                                          {"classification", Task::classification}};

template <typename Enum>
std::string name_of(Enum value, const std::vector<std::pair<std::string, Enum>>& names) {
  for (const auto& [name, v] : names) {
    if (v == value) {
      return name;
    }
  }
  return "?";
}

using Setter = std::function<void(ExperimentConfig&, const std::string&, int, const std::string&)>;

const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = {
      {"data", [](auto& c, auto& v, int l, auto& k) { c.source = as_enum(v, kSources, l, k); }},
      {"dim", [](auto& c, auto& v, int l, auto& k) { c.dim = as_int(v, l, k); }},
      {"gamma_shape", [](auto& c, auto& v, int l, auto& k) { c.gamma_shape = as_double(v, l, k); }},
      {"gamma_rate", [](auto& c, auto& v, int l, auto& k) { c.gamma_rate = as_double(v, l, k); }},
      {"n_train", [](auto& c, auto& v, int l, auto& k) { c.n_train = as_int(v, l, k); }},
      {"n_calibration", [](auto& c, auto& v, int l, auto& k) { c.n_calibration = as_int(v, l, k); }},
      {"n_test", [](auto& c, auto& v, int l, auto& k) { c.n_test = as_int(v, l, k); }},
      {"noisy_fraction", [](auto& c, auto& v, int l, auto& k) { c.noisy_fraction = as_double(v, l, k); }},
      {"noise_scale", [](auto& c, auto& v, int l, auto& k) { c.noise_scale = as_double(v, l, k); }},
      {"label_noise_sd", [](auto& c, auto& v, int l, auto& k) { c.label_noise_sd = as_double(v, l, k); }},
      {"task", [](auto& c, auto& v, int l, auto& k) { c.task = as_enum(v, kTasks, l, k); }},
      {"classes", [](auto& c, auto& v, int l, auto& k) { c.classes = as_int(v, l, k); }},
      {"seed", [](auto& c, auto& v, int l, auto& k) { c.seed = as_seed(v, l, k); }},
      {"n_seeds", [](auto& c, auto& v, int l, auto& k) { c.n_seeds = as_int(v, l, k); }},
      {"threads", [](auto& c, auto& v, int l, auto& k) { c.threads = as_int(v, l, k); }},
      {"augmentations",
       [](auto& c, auto& v, int l, auto& k) {
         c.augmentations.clear();
         for (const auto& part : split(v, ';')) {
           const std::string t = trim(part);
           if (t.empty()) {
             continue;
           }
           try {
             c.augmentations.push_back(parse_augmentation(t));
           } catch (const Error& e) {
             fail(l, k, e.what());
           }
         }
       }},
      {"hidden", [](auto& c, auto& v, int l, auto& k) { c.hidden = as_int_list(v, l, k); }},
      {"epochs", [](auto& c, auto& v, int l, auto& k) { c.train.epochs = as_int(v, l, k); }},
      {"batch_size", [](auto& c, auto& v, int l, auto& k) { c.train.batch_size = as_int(v, l, k); }},
      {"learning_rate", [](auto& c, auto& v, int l, auto& k) { c.train.learning_rate = as_double(v, l, k); }},
      {"fit", [](auto& c, auto& v, int l, auto& k) { c.fit = as_enum(v, kFits, l, k); }},
      {"steps", [](auto& c, auto& v, int l, auto& k) { c.steps = as_int(v, l, k); }},
      {"checkpoints", [](auto& c, auto& v, int l, auto& k) { c.checkpoints = as_int_list(v, l, k); }},
      {"moments", [](auto& c, auto& v, int l, auto& k) { c.moments = as_enum(v, kMoments, l, k); }},
      {"moment_samples", [](auto& c, auto& v, int l, auto& k) { c.moment_samples = as_int(v, l, k); }},
      {"test_samples", [](auto& c, auto& v, int l, auto& k) { c.test_samples = as_int(v, l, k); }},
      {"sigma_eps", [](auto& c, auto& v, int l, auto& k) { c.sigma_eps = as_double(v, l, k); }},
      {"prior_beta", [](auto& c, auto& v, int l, auto& k) { c.prior_beta = as_double(v, l, k); }},
      {"prior_dof", [](auto& c, auto& v, int l, auto& k) { c.prior_dof = as_double(v, l, k); }},
      {"advi_learning_rate", [](auto& c, auto& v, int l, auto& k) { c.advi_learning_rate = as_double(v, l, k); }},
      {"advi_mc", [](auto& c, auto& v, int l, auto& k) { c.advi_mc = as_int(v, l, k); }},
      {"metric", [](auto& c, auto& v, int l, auto& k) { c.metric = as_enum(v, kMetrics, l, k); }},
      {"output", [](auto& c, auto& v, int, auto&) { c.output = v; }},
  };
  return table;
}

} // namespace

void ExperimentConfig::validate() const {
  auto check = [](bool ok, const std::string& key, const std::string& what) {
    if (!ok) {
      fail(0, key, what);
    }
  };
  check(dim >= 1, "dim", "must be at least 1");
  check(gamma_shape > 0.0 && gamma_rate > 0.0, "gamma_shape/gamma_rate", "must be positive");
  check(n_train >= 1 && n_calibration >= 1 && n_test >= 1, "n_train/n_calibration/n_test", "sizes must be at least 1");
  check(noisy_fraction >= 0.0 && noisy_fraction <= 1.0, "noisy_fraction", "must lie in [0, 1]");
  check(noise_scale >= 0.0, "noise_scale", "must be nonnegative");
  check(label_noise_sd >= 0.0, "label_noise_sd", "must be nonnegative");
  check(task == Task::regression || classes >= 2, "classes", "classification needs at least two classes");
  check(n_seeds >= 1, "n_seeds", "must be at least 1");
  check(threads >= 0, "threads", "must be nonnegative");
  check(!augmentations.empty(), "augmentations", "at least one augmentation is required");
  for (const auto& a : augmentations) {
    try {
      vbtta::validate(a, dim);
    } catch (const Error& e) {
      fail(0, "augmentations", e.what());
    }
  }
  for (int h : hidden) {
    check(h >= 1, "hidden", "layer sizes must be positive");
  }
  check(train.epochs >= 1, "epochs", "must be at least 1");
  check(train.batch_size >= 1, "batch_size", "must be at least 1");
  check(train.learning_rate >= 0.0, "learning_rate", "must be nonnegative");
  check(steps >= 1, "steps", "must be at least 1");
  for (int c : checkpoints) {
    check(c >= 1 && c <= steps, "checkpoints", "every checkpoint must lie in [1, steps]");
  }
  check(moment_samples >= 2, "moment_samples", "must be at least 2");
  check(test_samples >= 1, "test_samples", "must be at least 1");
  check(sigma_eps >= 0.0, "sigma_eps", "must be nonnegative");
  check(prior_beta > 0.0, "prior_beta", "must be positive");
  check(prior_dof > 0.0, "prior_dof", "must exceed c - 1 = 0");
  check(advi_learning_rate >= 0.0, "advi_learning_rate", "must be nonnegative");
  check(advi_mc >= 1, "advi_mc", "must be at least 1");
  check(task == Task::classification || metric != MetricKind::accuracy, "metric",
        "accuracy needs task = classification");
  check(task == Task::regression || metric == MetricKind::accuracy, "metric",
        "classification reports accuracy");
  check(task == Task::regression || fit == FitMethod::cavi, "fit",
        "classification weights are fitted by EM; use fit = cavi");
}

ExperimentConfig parse_config(std::istream& in) {
  ExperimentConfig config;
  std::string raw;
  int line_no = 0;
  bool metric_set = false;
  while (std::getline(in, raw)) {
    ++line_no;
    const auto hash = raw.find('#');
    const std::string line = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (line.empty()) {
      continue;
    }
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      fail(line_no, line, "expected 'key = value'");
    }
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    const auto it = setters().find(key);
    if (it == setters().end()) {
      fail(line_no, key, "unknown key");
    }
    it->second(config, value, line_no, key);
    metric_set = metric_set || key == "metric";
  }
  if (!metric_set && config.task == Task::classification) {
    config.metric = MetricKind::accuracy;
  }
  config.validate();
  return config;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) {
    throw ConfigError("config: cannot open " + path.string());
  }
  return parse_config(in);
}

std::string format_config(const ExperimentConfig& c) {
  auto list = [](const std::vector<int>& v) {
    std::string out;
    for (std::size_t i = 0; i < v.size(); ++i) {
      out += (i ? "," : "") + std::to_string(v[i]);
    }
    return out;
  };
  std::string augs;
  for (std::size_t i = 0; i < c.augmentations.size(); ++i) {
    augs += (i ? "; " : "") + describe(c.augmentations[i]);
  }
  std::ostringstream out;
  out << "data = " << name_of(c.source, kSources) << '\n'
      << "dim = " << c.dim << '\n'
      << "gamma_shape = " << format_double(c.gamma_shape) << '\n'
      << "gamma_rate = " << format_double(c.gamma_rate) << '\n'
      << "n_train = " << c.n_train << '\n'
      << "n_calibration = " << c.n_calibration << '\n'
      << "n_test = " << c.n_test << '\n'
      << "noisy_fraction = " << format_double(c.noisy_fraction) << '\n'
      << "noise_scale = " << format_double(c.noise_scale) << '\n'
      << "label_noise_sd = " << format_double(c.label_noise_sd) << '\n'
      << "task = " << name_of(c.task, kTasks) << '\n'
      << "classes = " << c.classes << '\n'
      << "seed = " << c.seed << '\n'
      << "n_seeds = " << c.n_seeds << '\n'
      << "threads = " << c.threads << '\n'
      << "augmentations = " << augs << '\n'
      << "hidden = " << list(c.hidden) << '\n'
      << "epochs = " << c.train.epochs << '\n'
      << "batch_size = " << c.train.batch_size << '\n'
      << "learning_rate = " << format_double(c.train.learning_rate) << '\n'
      << "fit = " << name_of(c.fit, kFits) << '\n'
      << "steps = " << c.steps << '\n'
      << "checkpoints = " << list(c.checkpoints) << '\n'
      << "moments = " << name_of(c.moments, kMoments) << '\n'
      << "moment_samples = " << c.moment_samples << '\n'
      << "test_samples = " << c.test_samples << '\n'
      << "sigma_eps = " << format_double(c.sigma_eps) << '\n'
      << "prior_beta = " << format_double(c.prior_beta) << '\n'
      << "prior_dof = " << format_double(c.prior_dof) << '\n'
      << "advi_learning_rate = " << format_double(c.advi_learning_rate) << '\n'
      << "advi_mc = " << c.advi_mc << '\n'
      << "metric = " << name_of(c.metric, kMetrics) << '\n'
      << "output = " << c.output.string() << '\n';
  return out.str();
}

void apply_environment(ExperimentConfig& config) {
  if (const char* env = std::getenv("VBTTA_SEED")) {
    config.seed = as_seed(trim(env), 0, "VBTTA_SEED");
  }
}

} // namespace vbtta
