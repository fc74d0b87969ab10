#include "neq/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "neq/errors.hpp"

namespace neq {

namespace {

std::string num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

std::string short_num(double v) {
  char buf[40];
  std::snprintf(buf, sizeof buf, "%.4g", v);
  return buf;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '&': out += "&amp;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

std::vector<std::string> split_csv(const std::string& line) {
  std::vector<std::string> out;
  std::stringstream ss(line);
  std::string item;
  while (std::getline(ss, item, ',')) out.push_back(item);
  return out;
}

}  // namespace

void validate_log(const std::vector<MetricsRecord>& log) {
  if (log.empty()) throw StateError("metrics log is empty");
  for (std::size_t i = 0; i < log.size(); ++i) {
    if (i > 0 && log[i].epoch <= log[i - 1].epoch) throw StateError("metrics epochs must strictly increase");
    if (!(log[i].updated_fraction >= 0.0 && log[i].updated_fraction <= 1.0)) {
      throw StateError("updated fraction outside [0, 1] at epoch " + std::to_string(log[i].epoch));
    }
  }
}

std::string format_metrics(const std::vector<MetricsRecord>& log) {
  validate_log(log);
  std::string out = kMetricsHeader;
  out += '\n';
  for (const auto& r : log) {
    out += std::to_string(r.epoch) + ',' + num(r.bprop_flops_mean) + ',' + num(r.bprop_flops_std) + ',' +
           std::to_string(r.updated_neurons) + ',' + num(r.updated_fraction) + ',' + num(r.train_loss) + ',' +
           num(r.test_accuracy) + ',' + num(r.lr) + '\n';
  }
  return out;
}

void write_text(const std::filesystem::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot write " + path.string());
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path.string());
}

void write_metrics(const std::vector<MetricsRecord>& log, const std::filesystem::path& path) {
  write_text(path, format_metrics(log));
}

void write_timing(const std::vector<MetricsRecord>& log, const std::filesystem::path& path) {
  validate_log(log);
  std::string out = kTimingHeader;
  out += '\n';
  for (const auto& r : log) out += std::to_string(r.epoch) + ',' + num(r.wall_seconds) + '\n';
  write_text(path, out);
}

std::vector<MetricsRecord> read_metrics(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read " + path.string());
  std::string line;
  if (!std::getline(in, line) || line != kMetricsHeader) {
    throw DataError(path.string() + ": missing or unexpected metrics header");
  }
  std::vector<MetricsRecord> log;
  int lineno = 1;
  while (std::getline(in, line)) {
    ++lineno;
    if (line.empty()) continue;
    const auto f = split_csv(line);
    if (f.size() != 8) throw DataError(path.string() + ":" + std::to_string(lineno) + ": expected 8 fields");
    try {
      MetricsRecord r;
      r.epoch = std::stoi(f[0]);
      r.bprop_flops_mean = std::stod(f[1]);
      r.bprop_flops_std = std::stod(f[2]);
      r.updated_neurons = std::stoll(f[3]);
      r.updated_fraction = std::stod(f[4]);
      r.train_loss = std::stod(f[5]);
      r.test_accuracy = std::stod(f[6]);
      r.lr = std::stod(f[7]);
      log.push_back(r);
    } catch (const std::logic_error&) {
      throw DataError(path.string() + ":" + std::to_string(lineno) + ": malformed number");
    }
  }
  validate_log(log);
  return log;
}

void write_iteration_flops(const std::vector<std::vector<std::int64_t>>& flops, const std::filesystem::path& path) {
  std::string out = "# epoch followed by backward FLOPs of each iteration\n";
  for (std::size_t e = 0; e < flops.size(); ++e) {
    out += std::to_string(e + 1);
    for (auto v : flops[e]) out += ' ' + std::to_string(v);
    out += '\n';
  }
  write_text(path, out);
}

std::string render_plot(const std::vector<MetricsRecord>& log, const std::vector<int>& milestones,
                        const std::string& title) {
  validate_log(log);
  constexpr double W = 720, panel_h = 200, left = 80, right = 20, top = 40, gap = 50;
  const double H = top + 3 * panel_h + 3 * gap;
  const double e0 = log.front().epoch;
  const double e1 = std::max(log.back().epoch, log.front().epoch + 1);
  auto xpos = [&](double e) { return left + (e - e0) / (e1 - e0) * (W - left - right); };

  struct Panel {
    const char* label;
    const char* colour;
    double (*get)(const MetricsRecord&);
    bool unit_range;
  };
  const Panel panels[3] = {
      {"backward FLOPs / iteration", "#d95f02", [](const MetricsRecord& r) { return r.bprop_flops_mean; }, false},
      {"updated neurons (fraction)", "#1b9e77", [](const MetricsRecord& r) { return r.updated_fraction; }, true},
      {"test accuracy", "#d62728", [](const MetricsRecord& r) { return r.test_accuracy; }, true},
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << W << "\" height=\"" << H << "\" viewBox=\"0 0 "
      << W << ' ' << H << "\" font-family=\"sans-serif\" font-size=\"12\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  if (!title.empty()) svg << "<text x=\"" << W / 2 << "\" y=\"22\" text-anchor=\"middle\" font-size=\"14\">" << xml_escape(title) << "</text>\n";

  for (int p = 0; p < 3; ++p) {
    const Panel& panel = panels[p];
    const double y0 = top + p * (panel_h + gap);
    double lo = 0.0, hi = 1.0;
    if (!panel.unit_range) {
      hi = 0.0;
      for (const auto& r : log) hi = std::max(hi, panel.get(r));
      if (hi <= 0.0) hi = 1.0;
      hi *= 1.05;
    }
    auto ypos = [&](double v) { return y0 + panel_h - (v - lo) / (hi - lo) * panel_h; };

    svg << "<g>\n<rect x=\"" << left << "\" y=\"" << y0 << "\" width=\"" << W - left - right << "\" height=\""
        << panel_h << "\" fill=\"none\" stroke=\"#444\"/>\n";
    svg << "<text x=\"" << left << "\" y=\"" << y0 - 6 << "\">" << panel.label << "</text>\n";
    for (int t = 0; t <= 4; ++t) {
      const double v = lo + (hi - lo) * t / 4.0;
      svg << "<text x=\"" << left - 6 << "\" y=\"" << ypos(v) + 4 << "\" text-anchor=\"end\">" << short_num(v)
          << "</text>\n";
    }
    for (int m : milestones) {
      if (m < e0 || m > e1) continue;
      svg << "<line x1=\"" << xpos(m) << "\" y1=\"" << y0 << "\" x2=\"" << xpos(m) << "\" y2=\"" << y0 + panel_h
          << "\" stroke=\"#888\" stroke-dasharray=\"4 3\"/>\n";
    }
    svg << "<polyline fill=\"none\" stroke=\"" << panel.colour << "\" stroke-width=\"1.5\" points=\"";
    for (const auto& r : log) svg << xpos(r.epoch) << ',' << ypos(std::clamp(panel.get(r), lo, hi)) << ' ';
    svg << "\"/>\n";
    svg << "<text x=\"" << left << "\" y=\"" << y0 + panel_h + 16 << "\" text-anchor=\"middle\">" << e0
        << "</text><text x=\"" << W - right << "\" y=\"" << y0 + panel_h + 16 << "\" text-anchor=\"middle\">"
        << log.back().epoch << "</text><text x=\"" << (left + W - right) / 2 << "\" y=\"" << y0 + panel_h + 16
        << "\" text-anchor=\"middle\">epoch</text>\n</g>\n";
  }
  svg << "</svg>\n";
  return svg.str();
}

void emit_plots(const std::vector<MetricsRecord>& log, const std::vector<int>& milestones,
                const std::filesystem::path& path, const std::string& title) {
  write_text(path, render_plot(log, milestones, title));
}

}  // namespace neq
