#include "metacate/report.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <map>
#include <numeric>

namespace metacate {
namespace {

constexpr double kWidth = 800.0;
constexpr double kHeight = 450.0;
constexpr double kLeft = 60.0;
constexpr double kRight = 20.0;
constexpr double kTop = 40.0;
constexpr double kBottom = 50.0;
constexpr double kZ95 = 1.959963984540054;

std::string fmt(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string escape(std::string_view text) {
  std::string out;
  for (char ch : text) {
    switch (ch) {
      case '&':
        out += "&amp;";
        break;
      case '<':
        out += "&lt;";
        break;
      case '>':
        out += "&gt;";
        break;
      case '"':
        out += "&quot;";
        break;
      default:
        out += ch;
    }
  }
  return out;
}

// Maps data values in [lo, hi] to the vertical plot range.
struct YScale {
  double lo;
  double hi;

  double operator()(double v) const {
    return kTop + (hi - v) / (hi - lo) * (kHeight - kTop - kBottom);
  }
};

YScale make_scale(double lo, double hi) {
  if (!(hi > lo)) {
    lo -= 1.0;
    hi += 1.0;
  }
  const double pad = 0.05 * (hi - lo);
  return {lo - pad, hi + pad};
}

std::string header(std::string_view title, std::string_view digest) {
  std::string s = "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 " + fmt(kWidth) + " " +
                  fmt(kHeight) + "\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
                  "\">\n";
  s += "<!-- digest " + escape(digest) + " -->\n";
  s += "<rect x=\"0\" y=\"0\" width=\"" + fmt(kWidth) + "\" height=\"" + fmt(kHeight) +
       "\" fill=\"white\"/>\n";
  s += "<text x=\"" + fmt(kWidth / 2) + "\" y=\"24.00\" text-anchor=\"middle\" font-size=\"16\">" +
       escape(title) + "</text>\n";
  return s;
}

std::string axis(const YScale& y) {
  std::string s;
  const double x0 = kLeft;
  s += "<line class=\"axis\" x1=\"" + fmt(x0) + "\" y1=\"" + fmt(kTop) + "\" x2=\"" + fmt(x0) +
       "\" y2=\"" + fmt(kHeight - kBottom) + "\" stroke=\"black\"/>\n";
  for (int i = 0; i <= 4; ++i) {
    const double v = y.lo + (y.hi - y.lo) * i / 4.0;
    s += "<text x=\"" + fmt(x0 - 6) + "\" y=\"" + fmt(y(v) + 4) +
         "\" text-anchor=\"end\" font-size=\"11\">" + fmt(v) + "</text>\n";
  }
  return s;
}

std::string hline(const YScale& y, double v, std::string_view cls, std::string_view color) {
  return "<line class=\"" + std::string(cls) + "\" x1=\"" + fmt(kLeft) + "\" y1=\"" + fmt(y(v)) +
         "\" x2=\"" + fmt(kWidth - kRight) + "\" y2=\"" + fmt(y(v)) + "\" stroke=\"" +
         std::string(color) + "\" stroke-dasharray=\"4 3\"/>\n";
}

std::string segment(double x, double y1, double y2, std::string_view color, double width) {
  return "<line class=\"interval\" x1=\"" + fmt(x) + "\" y1=\"" + fmt(y1) + "\" x2=\"" + fmt(x) +
         "\" y2=\"" + fmt(y2) + "\" stroke=\"" + std::string(color) + "\" stroke-width=\"" +
         fmt(width) + "\"/>\n";
}

std::string dot(double x, double y, std::string_view color) {
  return "<circle cx=\"" + fmt(x) + "\" cy=\"" + fmt(y) + "\" r=\"2.00\" fill=\"" +
         std::string(color) + "\"/>\n";
}

double interpolate_sorted(const std::vector<double>& v, double prob) {
  const double pos = prob * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(std::floor(pos));
  const auto hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

}  // namespace

BoxStats box_stats(std::vector<double> values) {
  if (values.empty()) throw DomainError("box_stats: empty sample");
  std::sort(values.begin(), values.end());
  return {values.front(), interpolate_sorted(values, 0.25), interpolate_sorted(values, 0.5),
          interpolate_sorted(values, 0.75), values.back()};
}

std::string prediction_interval_svg(std::span<const PredictionRow> rows, std::string_view digest) {
  std::vector<const PredictionRow*> order;
  for (const auto& r : rows) order.push_back(&r);
  std::stable_sort(order.begin(), order.end(), [](const PredictionRow* a, const PredictionRow* b) {
    if (a->tau_pooled != b->tau_pooled) return a->tau_pooled < b->tau_pooled;
    return a->profile_id < b->profile_id;
  });

  double lo = 0.0;
  double hi = 0.0;
  for (const auto* r : order) {
    lo = std::min({lo, r->tau_pooled, r->lower.value_or(r->tau_pooled)});
    hi = std::max({hi, r->tau_pooled, r->upper.value_or(r->tau_pooled)});
  }
  const YScale y = make_scale(lo, hi);
  std::string s = header("Prediction intervals by profile", digest);
  s += axis(y);
  s += hline(y, 0.0, "zero", "gray");
  const double span = kWidth - kLeft - kRight;
  const double step = order.empty() ? 0.0 : span / static_cast<double>(order.size());
  for (std::size_t i = 0; i < order.size(); ++i) {
    const auto* r = order[i];
    const double x = kLeft + step * (static_cast<double>(i) + 0.5);
    if (r->lower && r->upper) s += segment(x, y(*r->upper), y(*r->lower), "steelblue", 1.5);
    s += dot(x, y(r->tau_pooled), "black");
  }
  s += "<text x=\"" + fmt(kLeft + span / 2) + "\" y=\"" + fmt(kHeight - 15) +
       "\" text-anchor=\"middle\" font-size=\"12\">profiles ordered by pooled estimate</text>\n";
  s += "</svg>\n";
  return s;
}

std::string compare_intervals_svg(std::span<const StudyCateEstimate> aggregates,
                                  std::span<const PredictionRow> predictions,
                                  std::span<const int> profile_ids, std::string_view digest) {
  if (profile_ids.empty()) throw InputError("compare-intervals: no profiles selected");
  struct Group {
    int profile_id;
    std::vector<StudyCateEstimate> studies;
    const PredictionRow* pi;
  };
  std::vector<Group> groups;
  double lo = 0.0;
  double hi = 0.0;
  for (int pid : profile_ids) {
    Group g{pid, {}, nullptr};
    for (const auto& e : aggregates) {
      if (e.profile_id == pid) g.studies.push_back(e);
    }
    std::stable_sort(g.studies.begin(), g.studies.end(),
                     [](const auto& a, const auto& b) { return a.study_id < b.study_id; });
    for (const auto& p : predictions) {
      if (p.profile_id == pid) g.pi = &p;
    }
    if (g.studies.empty()) {
      throw InputError("compare-intervals: profile " + std::to_string(pid) + " not in aggregates");
    }
    if (g.pi == nullptr) {
      throw InputError("compare-intervals: profile " + std::to_string(pid) + " not in predictions");
    }
    for (const auto& e : g.studies) {
      const double half = kZ95 * std::sqrt(e.se2);
      lo = std::min(lo, e.tau_hat - half);
      hi = std::max(hi, e.tau_hat + half);
    }
    lo = std::min(lo, g.pi->lower.value_or(g.pi->tau_pooled));
    hi = std::max(hi, g.pi->upper.value_or(g.pi->tau_pooled));
    groups.push_back(std::move(g));
  }

  const YScale y = make_scale(lo, hi);
  std::string s = header("Study confidence intervals and target prediction interval", digest);
  s += axis(y);
  s += hline(y, 0.0, "zero", "gray");
  const double group_width = (kWidth - kLeft - kRight) / static_cast<double>(groups.size());
  for (std::size_t gi = 0; gi < groups.size(); ++gi) {
    const auto& g = groups[gi];
    const double x0 = kLeft + group_width * static_cast<double>(gi);
    const double slots = static_cast<double>(g.studies.size() + 1);
    const double step = group_width / (slots + 1.0);
    s += "<g class=\"profile\" data-profile=\"" + std::to_string(g.profile_id) + "\">\n";
    for (std::size_t k = 0; k < g.studies.size(); ++k) {
      const auto& e = g.studies[k];
      const double half = kZ95 * std::sqrt(e.se2);
      const double x = x0 + step * (static_cast<double>(k) + 1.0);
      s += segment(x, y(e.tau_hat + half), y(e.tau_hat - half), "gray", 1.5);
      s += dot(x, y(e.tau_hat), "gray");
    }
    const double xp = x0 + step * slots;
    if (g.pi->lower && g.pi->upper) {
      s += segment(xp, y(*g.pi->upper), y(*g.pi->lower), "firebrick", 3.0);
    }
    s += dot(xp, y(g.pi->tau_pooled), "firebrick");
    s += "<text x=\"" + fmt(x0 + group_width / 2) + "\" y=\"" + fmt(kHeight - 15) +
         "\" text-anchor=\"middle\" font-size=\"12\">profile " + std::to_string(g.profile_id) +
         "</text>\n";
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

std::string coverage_boxplot_svg(std::span<const MetricsRow> rows, std::string_view scenario,
                                 std::string_view digest) {
  std::vector<std::string> methods;
  std::map<std::string, std::vector<double>> coverage;
  for (const auto& r : rows) {
    auto [it, inserted] = coverage.try_emplace(r.method);
    if (inserted) methods.push_back(r.method);
    it->second.push_back(r.coverage);
  }
  const YScale y{0.0, 1.0};
  std::string s = header("Coverage by profile: " + std::string(scenario), digest);
  s += axis(y);
  s += hline(y, 0.95, "nominal", "firebrick");
  const double group_width =
      methods.empty() ? 0.0 : (kWidth - kLeft - kRight) / static_cast<double>(methods.size());
  for (std::size_t m = 0; m < methods.size(); ++m) {
    const BoxStats b = box_stats(coverage[methods[m]]);
    const double xc = kLeft + group_width * (static_cast<double>(m) + 0.5);
    const double half = std::min(40.0, group_width / 4);
    s += "<g class=\"box\" data-method=\"" + escape(methods[m]) + "\">\n";
    s += "<line x1=\"" + fmt(xc) + "\" y1=\"" + fmt(y(b.max)) + "\" x2=\"" + fmt(xc) + "\" y2=\"" +
         fmt(y(b.min)) + "\" stroke=\"black\"/>\n";
    s += "<rect x=\"" + fmt(xc - half) + "\" y=\"" + fmt(y(b.q3)) + "\" width=\"" + fmt(2 * half) +
         "\" height=\"" + fmt(y(b.q1) - y(b.q3)) + "\" fill=\"lightsteelblue\" stroke=\"black\"/>\n";
    s += "<line x1=\"" + fmt(xc - half) + "\" y1=\"" + fmt(y(b.median)) + "\" x2=\"" +
         fmt(xc + half) + "\" y2=\"" + fmt(y(b.median)) + "\" stroke=\"black\" stroke-width=\"2.00\"/>\n";
    s += "<text x=\"" + fmt(xc) + "\" y=\"" + fmt(kHeight - 15) +
         "\" text-anchor=\"middle\" font-size=\"12\">" + escape(methods[m]) + "</text>\n";
    s += "</g>\n";
  }
  s += "</svg>\n";
  return s;
}

}  // namespace metacate
