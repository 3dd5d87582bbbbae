#include <algorithm>
#include <array>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

#include "vbtta/bench.hpp"
#include "vbtta/error.hpp"
#include "vbtta/text.hpp"

namespace vbtta {

namespace {

struct Series {
  std::string name;
  std::vector<double> x;
  std::vector<double> y;
};

constexpr double kWidth = 640.0;
constexpr double kHeight = 480.0;
constexpr double kLeft = 70.0;
constexpr double kRight = 150.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;
constexpr std::array<const char*, 8> kPalette = {"#1f77b4", "#d62728", "#2ca02c", "#ff7f0e",
                                                 "#9467bd", "#8c564b", "#e377c2", "#17becf"};

std::string fixed(double v, int digits = 2) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string tick(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
    case '<':
      out += "&lt;";
      break;
    case '>':
      out += "&gt;";
      break;
    case '&':
      out += "&amp;";
      break;
    default:
      out += c;
    }
  }
  return out;
}

std::string svg_plot(const std::string& title, const std::string& x_label, const std::string& y_label,
                     const std::vector<Series>& series) {
  double x0 = 0.0, x1 = 1.0, y0 = 0.0, y1 = 1.0;
  bool any = false;
  for (const auto& s : series) {
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      if (!any) {
        x0 = x1 = s.x[i];
        y0 = y1 = s.y[i];
        any = true;
      }
      x0 = std::min(x0, s.x[i]);
      x1 = std::max(x1, s.x[i]);
      y0 = std::min(y0, s.y[i]);
      y1 = std::max(y1, s.y[i]);
    }
  }
  if (x1 == x0) {
    x0 -= 0.5;
    x1 += 0.5;
  }
  if (y1 == y0) {
    const double pad = y0 == 0.0 ? 0.5 : 0.05 * std::abs(y0);
    y0 -= pad;
    y1 += pad;
  }
  const double pw = kWidth - kLeft - kRight;
  const double ph = kHeight - kTop - kBottom;
  auto px = [&](double x) { return kLeft + (x - x0) / (x1 - x0) * pw; };
  auto py = [&](double y) { return kTop + (y1 - y) / (y1 - y0) * ph; };

  std::ostringstream out;
  out << "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 640 480\" width=\"640\" height=\"480\">\n";
  out << "<rect x=\"0\" y=\"0\" width=\"640\" height=\"480\" fill=\"white\"/>\n";
  out << "<text x=\"" << fixed(kWidth / 2 - kRight / 2) << "\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">"
      << escape(title) << "</text>\n";
  out << "<rect x=\"" << fixed(kLeft) << "\" y=\"" << fixed(kTop) << "\" width=\"" << fixed(pw) << "\" height=\""
      << fixed(ph) << "\" fill=\"none\" stroke=\"black\"/>\n";
  for (int t = 0; t <= 4; ++t) {
    const double xv = x0 + (x1 - x0) * t / 4.0;
    const double yv = y0 + (y1 - y0) * t / 4.0;
    out << "<text x=\"" << fixed(px(xv)) << "\" y=\"" << fixed(kHeight - kBottom + 16)
        << "\" text-anchor=\"middle\" font-size=\"11\">" << tick(xv) << "</text>\n";
    out << "<text x=\"" << fixed(kLeft - 6) << "\" y=\"" << fixed(py(yv) + 4)
        << "\" text-anchor=\"end\" font-size=\"11\">" << tick(yv) << "</text>\n";
  }
  out << "<text x=\"" << fixed(kLeft + pw / 2) << "\" y=\"" << fixed(kHeight - 12)
      << "\" text-anchor=\"middle\" font-size=\"12\">" << escape(x_label) << "</text>\n";
  out << "<text x=\"16\" y=\"" << fixed(kTop + ph / 2) << "\" text-anchor=\"middle\" font-size=\"12\" transform=\"rotate(-90 16 "
      << fixed(kTop + ph / 2) << ")\">" << escape(y_label) << "</text>\n";
  for (std::size_t k = 0; k < series.size(); ++k) {
    const auto& s = series[k];
    const char* colour = kPalette[k % kPalette.size()];
    out << "<polyline fill=\"none\" stroke=\"" << colour << "\" stroke-width=\"1.5\" points=\"";
    for (std::size_t i = 0; i < s.x.size(); ++i) {
      out << (i ? " " : "") << fixed(px(s.x[i])) << ',' << fixed(py(s.y[i]));
    }
    out << "\"/>\n";
    const double ly = kTop + 14.0 + 18.0 * static_cast<double>(k);
    out << "<line x1=\"" << fixed(kWidth - kRight + 10) << "\" y1=\"" << fixed(ly - 4) << "\" x2=\""
        << fixed(kWidth - kRight + 30) << "\" y2=\"" << fixed(ly - 4) << "\" stroke=\"" << colour
        << "\" stroke-width=\"2\"/>\n";
    out << "<text x=\"" << fixed(kWidth - kRight + 34) << "\" y=\"" << fixed(ly) << "\" font-size=\"10\">"
        << escape(s.name) << "</text>\n";
  }
  out << "</svg>\n";
  return out.str();
}

void write_file(const std::filesystem::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) {
    throw IoError("cannot open " + path.string() + " for writing");
  }
  out << content;
  out.flush();
  if (!out) {
    throw IoError("failed writing " + path.string());
  }
}

std::vector<std::vector<std::string>> read_csv(const std::filesystem::path& path, const std::string& header) {
  std::ifstream in(path);
  if (!in) {
    throw IoError("cannot open " + path.string());
  }
  std::string line;
  if (!std::getline(in, line) || trim(line) != header) {
    throw IoError(path.string() + ": expected header '" + header + "'");
  }
  const std::size_t width = split(header, ',').size();
  std::vector<std::vector<std::string>> rows;
  int line_no = 1;
  while (std::getline(in, line)) {
    ++line_no;
    if (trim(line).empty()) {
      continue;
    }
    auto fields = split(trim(line), ',');
    if (fields.size() != width) {
      throw IoError(path.string() + ":" + std::to_string(line_no) + ": expected " + std::to_string(width) + " fields");
    }
    rows.push_back(std::move(fields));
  }
  return rows;
}

double number(const std::string& s, const std::filesystem::path& path) {
  double v = 0.0;
  if (!parse_double(s, v)) {
    throw IoError(path.string() + ": bad number '" + s + "'");
  }
  return v;
}

std::vector<Series> metric_series(const RunReport& report) {
  std::vector<Series> out;
  for (const auto& strategy : report.strategies) {
    Series s{strategy, {}, {}};
    for (const auto& m : report.metrics) {
      if (m.strategy == strategy) {
        s.x.push_back(m.step);
        s.y.push_back(m.mean);
      }
    }
    out.push_back(std::move(s));
  }
  return out;
}

std::vector<Series> weight_series(const RunReport& report) {
  std::vector<Series> out;
  const Eigen::Index k_count = report.weights.empty() ? 0 : report.weights.front().size();
  for (Eigen::Index k = 0; k < k_count; ++k) {
    const auto uk = static_cast<std::size_t>(k);
    Series s{uk < report.augmentations.size() ? report.augmentations[uk] : "w" + std::to_string(k + 1), {}, {}};
    for (std::size_t step = 0; step < report.weights.size(); ++step) {
      s.x.push_back(static_cast<double>(step + 1));
      s.y.push_back(report.weights[step](k));
    }
    out.push_back(std::move(s));
  }
  return out;
}

void write_plots(const RunReport& report, const std::filesystem::path& dir) {
  const std::string metric = report.metric_name.empty() ? "metric" : report.metric_name;
  write_file(dir / "metrics.svg", svg_plot("Test " + metric + " by step", "step", metric, metric_series(report)));
  write_file(dir / "weights.svg", svg_plot("Augmentation weights", "step", "weight", weight_series(report)));
  Series elbo{"negative ELBO", {}, {}};
  for (std::size_t s = 0; s < report.negative_elbo.size(); ++s) {
    elbo.x.push_back(static_cast<double>(s + 1));
    elbo.y.push_back(report.negative_elbo[s]);
  }
  write_file(dir / "elbo.svg", svg_plot("Negative ELBO", "step", "negative ELBO", {elbo}));
}

} // namespace

void emit_report(const RunReport& report, const std::filesystem::path& directory) {
  std::error_code ec;
  std::filesystem::create_directories(directory, ec);
  if (ec) {
    throw IoError("cannot create " + directory.string() + ": " + ec.message());
  }
  std::ostringstream metrics;
  metrics << "strategy,step,mean,std\n";
  for (const auto& m : report.metrics) {
    metrics << m.strategy << ',' << m.step << ',' << format_double(m.mean) << ',' << format_double(m.std) << '\n';
  }
  write_file(directory / "metrics.csv", metrics.str());

  std::ostringstream weights;
  weights << "step,k,w_k\n";
  for (std::size_t s = 0; s < report.weights.size(); ++s) {
    for (Eigen::Index k = 0; k < report.weights[s].size(); ++k) {
      weights << s + 1 << ',' << k + 1 << ',' << format_double(report.weights[s](k)) << '\n';
    }
  }
  write_file(directory / "weights.csv", weights.str());

  std::ostringstream elbo;
  elbo << "step,negative_elbo\n";
  for (std::size_t s = 0; s < report.negative_elbo.size(); ++s) {
    elbo << s + 1 << ',' << format_double(report.negative_elbo[s]) << '\n';
  }
  write_file(directory / "elbo.csv", elbo.str());

  std::ostringstream seeds;
  seeds << "seed,strategy,step,value\n";
  for (const auto& run : report.seeds) {
    for (const auto& strategy : report.strategies) {
      const auto it = run.metric.find(strategy);
      if (it == run.metric.end()) {
        continue;
      }
      for (std::size_t c = 0; c < report.checkpoints.size() && c < it->second.size(); ++c) {
        seeds << run.seed << ',' << strategy << ',' << report.checkpoints[c] << ',' << format_double(it->second[c])
              << '\n';
      }
    }
  }
  write_file(directory / "seeds.csv", seeds.str());

  std::ostringstream augs;
  for (std::size_t k = 0; k < report.augmentations.size(); ++k) {
    augs << k + 1 << ' ' << report.augmentations[k] << '\n';
  }
  write_file(directory / "augmentations.txt", augs.str());
  write_plots(report, directory);
}

RunReport read_report(const std::filesystem::path& directory) {
  RunReport report;
  const auto metrics_path = directory / "metrics.csv";
  for (const auto& row : read_csv(metrics_path, "strategy,step,mean,std")) {
    MetricSummary m{row[0], static_cast<int>(number(row[1], metrics_path)), number(row[2], metrics_path),
                    number(row[3], metrics_path)};
    if (std::find(report.strategies.begin(), report.strategies.end(), m.strategy) == report.strategies.end()) {
      report.strategies.push_back(m.strategy);
    }
    if (std::find(report.checkpoints.begin(), report.checkpoints.end(), m.step) == report.checkpoints.end()) {
      report.checkpoints.push_back(m.step);
    }
    report.metrics.push_back(std::move(m));
  }

  const auto weights_path = directory / "weights.csv";
  std::map<int, std::map<int, double>> by_step;
  for (const auto& row : read_csv(weights_path, "step,k,w_k")) {
    by_step[static_cast<int>(number(row[0], weights_path))][static_cast<int>(number(row[1], weights_path))] =
        number(row[2], weights_path);
  }
  for (const auto& [step, ws] : by_step) {
    Eigen::VectorXd w(static_cast<Eigen::Index>(ws.size()));
    Eigen::Index k = 0;
    for (const auto& [index, value] : ws) {
      w(k++) = value;
    }
    report.weights.push_back(std::move(w));
  }

  const auto elbo_path = directory / "elbo.csv";
  for (const auto& row : read_csv(elbo_path, "step,negative_elbo")) {
    report.negative_elbo.push_back(number(row[1], elbo_path));
  }

  std::ifstream augs(directory / "augmentations.txt");
  std::string line;
  while (std::getline(augs, line)) {
    const auto space = line.find(' ');
    if (space != std::string::npos) {
      report.augmentations.push_back(line.substr(space + 1));
    }
  }
  return report;
}

std::string summarize_report(const std::filesystem::path& directory) {
  const RunReport report = read_report(directory);
  std::ostringstream out;
  out << std::left << std::setw(10) << "strategy" << std::right << std::setw(8) << "step" << std::setw(14) << "mean"
      << std::setw(14) << "std" << '\n';
  for (const auto& m : report.metrics) {
    out << std::left << std::setw(10) << m.strategy << std::right << std::setw(8) << m.step << std::setw(14)
        << tick(m.mean) << std::setw(14) << tick(m.std) << '\n';
  }
  if (!report.weights.empty()) {
    out << "final weights (step " << report.weights.size() << "):\n";
    const auto& w = report.weights.back();
    for (Eigen::Index k = 0; k < w.size(); ++k) {
      const auto uk = static_cast<std::size_t>(k);
      out << "  " << (uk < report.augmentations.size() ? report.augmentations[uk] : "w" + std::to_string(k + 1))
          << " = " << tick(w(k)) << '\n';
    }
  }
  if (!report.negative_elbo.empty()) {
    out << "negative ELBO: " << tick(report.negative_elbo.front()) << " -> " << tick(report.negative_elbo.back())
        << '\n';
  }
  write_plots(report, directory);
  return out.str();
}

} // namespace vbtta
