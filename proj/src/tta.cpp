#include <istream>
#include <ostream>
#include <sstream>

#include "vbtta/error.hpp"
#include "vbtta/text.hpp"
#include "vbtta/vbcore.hpp"

namespace vbtta {

WeightedPrediction combine_components(const Eigen::MatrixXd& outputs,
                                      const SimplexWeights& weights, Task task) {
  if (outputs.rows() != weights.size()) {
    throw DomainError("predict_weighted: one component row per weight required");
  }
  WeightedPrediction out;
  out.combined = outputs.transpose() * weights.values();
  if (task == Task::classification) {
    Eigen::Index best = 0;
    out.combined.maxCoeff(&best);
    out.label = static_cast<int>(best);
  }
  return out;
}

Eigen::MatrixXd component_outputs(const ModelView& model, const Eigen::VectorXd& x,
                                  std::span<const AugmentationSpec> specs, Eigen::Index n_samples,
                                  const Rng& rng, const ReferencePool* pool, Task task) {
  if (specs.empty()) {
    throw DomainError("component_outputs: need at least one augmentation");
  }
  if (n_samples < 1) {
    throw DomainError("component_outputs: n_samples must be at least 1");
  }
  Eigen::MatrixXd rows;
  for (std::size_t k = 0; k < specs.size(); ++k) {
    Rng stream = rng.split(spec_hash(specs[k]));
    const Eigen::MatrixXd draws = induced_distribution_sample(specs[k], x, n_samples, stream, pool);
    Eigen::MatrixXd outputs = model.evaluate_rows(draws);
    if (task == Task::classification) {
      for (Eigen::Index r = 0; r < outputs.rows(); ++r) {
        outputs.row(r) = softmax(outputs.row(r).transpose()).transpose();
      }
    }
    if (k == 0) {
      rows.resize(static_cast<Eigen::Index>(specs.size()), outputs.cols());
    }
    rows.row(static_cast<Eigen::Index>(k)) = outputs.colwise().mean();
  }
  return rows;
}

WeightedPrediction predict_weighted(const ModelView& model, const Eigen::VectorXd& x,
                                    std::span<const AugmentationSpec> specs,
                                    const SimplexWeights& weights, Eigen::Index n_samples,
                                    const Rng& rng, const ReferencePool* pool, Task task) {
  if (static_cast<Eigen::Index>(specs.size()) != weights.size()) {
    throw DomainError("predict_weighted: need one weight per augmentation");
  }
  return combine_components(component_outputs(model, x, specs, n_samples, rng, pool, task), weights, task);
}

namespace {
constexpr const char* kFitMagic = "vbtta-fit";
constexpr int kFitVersion = 1;

std::string hex(std::uint64_t v) {
  std::ostringstream ss;
  ss << std::hex;
  ss.width(16);
  ss.fill('0');
  ss << v;
  return ss.str();
}

std::uint64_t text_hash(const std::string& text) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char ch : text) {
    h ^= ch;
    h *= 0x100000001b3ULL;
  }
  return h;
}

[[noreturn]] void bad(const std::string& what) { throw IoError("fit record: " + what); }
} // namespace

void write_fit_record(std::ostream& out, const FitRecord& record) {
  if (static_cast<Eigen::Index>(record.specs.size()) != record.weights.size()) {
    throw DomainError("fit record: one augmentation per weight required");
  }
  out << kFitMagic << ' ' << kFitVersion << '\n';
  out << "K " << record.weights.size() << '\n';
  for (const auto& s : record.specs) {
    out << "spec " << hex(text_hash(s)) << ' ' << s << '\n';
  }
  out << "weights";
  for (Eigen::Index k = 0; k < record.weights.size(); ++k) {
    out << ' ' << format_double(record.weights[k]);
  }
  out << "\nelbo " << record.elbo_trace.size() << '\n';
  for (double v : record.elbo_trace) {
    out << format_double(v) << '\n';
  }
}

FitRecord read_fit_record(std::istream& in) {
  std::string line;
  if (!std::getline(in, line) || line != std::string(kFitMagic) + ' ' + std::to_string(kFitVersion)) {
    bad("unsupported header");
  }
  if (!std::getline(in, line) || line.rfind("K ", 0) != 0) {
    bad("missing K");
  }
  double kd = 0.0;
  if (!parse_double(trim(line.substr(2)), kd) || kd < 1) {
    bad("bad K");
  }
  const auto k = static_cast<std::size_t>(kd);
  std::vector<std::string> specs;
  for (std::size_t i = 0; i < k; ++i) {
    if (!std::getline(in, line) || line.rfind("spec ", 0) != 0 || line.size() < 23) {
      bad("missing spec line");
    }
    const std::string hash = line.substr(5, 16);
    std::string desc = line.substr(22);
    if (hash != hex(text_hash(desc))) {
      bad("spec hash mismatch for '" + desc + "'");
    }
    specs.push_back(std::move(desc));
  }
  if (!std::getline(in, line) || line.rfind("weights", 0) != 0) {
    bad("missing weights");
  }
  const auto fields = split(trim(line), ' ');
  if (fields.size() != k + 1) {
    bad("weight count does not match K");
  }
  Eigen::VectorXd w(static_cast<Eigen::Index>(k));
  for (std::size_t i = 0; i < k; ++i) {
    if (!parse_double(fields[i + 1], w(static_cast<Eigen::Index>(i)))) {
      bad("bad weight value");
    }
  }
  if (!std::getline(in, line) || line.rfind("elbo ", 0) != 0) {
    bad("missing elbo trace");
  }
  double nd = 0.0;
  if (!parse_double(trim(line.substr(5)), nd) || nd < 0) {
    bad("bad elbo count");
  }
  std::vector<double> trace;
  for (std::size_t i = 0; i < static_cast<std::size_t>(nd); ++i) {
    double v = 0.0;
    if (!std::getline(in, line) || !parse_double(trim(line), v)) {
      bad("truncated elbo trace");
    }
    trace.push_back(v);
  }
  return FitRecord{std::move(specs), SimplexWeights(std::move(w)), std::move(trace)};
}

} // namespace vbtta
