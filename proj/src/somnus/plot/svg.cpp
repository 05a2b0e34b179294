#include "somnus/plot/svg.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <sstream>

#include "somnus/common.hpp"

namespace somnus::plot {

namespace {

std::string fmt(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6g", v);
  return buf;
}

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

// Round the raw span to a 1/2/5 tick spacing.
double nice_step(double span, int target_ticks) {
  if (span <= 0.0) return 1.0;
  const double raw = span / std::max(1, target_ticks);
  const double mag = std::pow(10.0, std::floor(std::log10(raw)));
  const double frac = raw / mag;
  double step = 10.0;
  if (frac <= 1.0)
    step = 1.0;
  else if (frac <= 2.0)
    step = 2.0;
  else if (frac <= 5.0)
    step = 5.0;
  return step * mag;
}

std::string xml_escape(const std::string& s) {
  std::string out;
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      default: out += c;
    }
  }
  return out;
}

}  // namespace

std::string line_chart_svg(const std::string& title, const std::string& x_label,
                           const std::string& y_label,
                           const std::vector<Series>& series, int width,
                           int height) {
  if (series.empty()) throw_invalid("line chart needs at least one series");
  double xmin = 1e300, xmax = -1e300, ymin = 1e300, ymax = -1e300;
  for (const auto& s : series) {
    if (s.x.size() != s.y.size())
      throw_invalid("series '" + s.label + "' has ragged x/y");
    for (size_t i = 0; i < s.x.size(); ++i) {
      xmin = std::min(xmin, s.x[i]);
      xmax = std::max(xmax, s.x[i]);
      ymin = std::min(ymin, s.y[i]);
      ymax = std::max(ymax, s.y[i]);
    }
  }
  if (xmin > xmax) throw_invalid("line chart needs at least one point");
  if (xmax == xmin) xmax = xmin + 1.0;
  if (ymax == ymin) {
    ymax += 0.5;
    ymin -= 0.5;
  }
  const double ypad = 0.05 * (ymax - ymin);
  ymin -= ypad;
  ymax += ypad;

  const double ml = 70, mr = 24, mt = 42, mb = 56;
  const double pw = width - ml - mr, ph = height - mt - mb;
  auto px = [&](double v) { return ml + pw * (v - xmin) / (xmax - xmin); };
  auto py = [&](double v) { return mt + ph * (1.0 - (v - ymin) / (ymax - ymin)); };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"24\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"15\">" << xml_escape(title)
      << "</text>\n";

  const double xstep = nice_step(xmax - xmin, 8);
  const double ystep = nice_step(ymax - ymin, 6);
  svg << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (double t = std::ceil(xmin / xstep) * xstep; t <= xmax + 1e-9;
       t += xstep) {
    svg << "<line x1=\"" << fmt2(px(t)) << "\" y1=\"" << fmt2(mt) << "\" x2=\""
        << fmt2(px(t)) << "\" y2=\"" << fmt2(mt + ph)
        << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << fmt2(px(t)) << "\" y=\"" << fmt2(mt + ph + 16)
        << "\" text-anchor=\"middle\">" << fmt(t) << "</text>\n";
  }
  for (double t = std::ceil(ymin / ystep) * ystep; t <= ymax + 1e-9;
       t += ystep) {
    svg << "<line x1=\"" << fmt2(ml) << "\" y1=\"" << fmt2(py(t)) << "\" x2=\""
        << fmt2(ml + pw) << "\" y2=\"" << fmt2(py(t))
        << "\" stroke=\"#e0e0e0\"/>\n";
    svg << "<text x=\"" << fmt2(ml - 6) << "\" y=\"" << fmt2(py(t) + 4)
        << "\" text-anchor=\"end\">" << fmt(t) << "</text>\n";
  }
  svg << "</g>\n";
  svg << "<rect x=\"" << fmt2(ml) << "\" y=\"" << fmt2(mt) << "\" width=\""
      << fmt2(pw) << "\" height=\"" << fmt2(ph)
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 12
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">"
      << xml_escape(x_label) << "</text>\n";
  svg << "<text x=\"18\" y=\"" << height / 2
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\" transform=\"rotate(-90 18 "
      << height / 2 << ")\">" << xml_escape(y_label) << "</text>\n";

  for (const auto& s : series) {
    svg << "<polyline fill=\"none\" stroke=\"" << s.color
        << "\" stroke-width=\"1.6\" points=\"";
    for (size_t i = 0; i < s.x.size(); ++i) {
      if (i) svg << " ";
      svg << fmt2(px(s.x[i])) << "," << fmt2(py(s.y[i]));
    }
    svg << "\"/>\n";
  }

  double ly = mt + 14;
  for (const auto& s : series) {
    svg << "<line x1=\"" << fmt2(ml + pw - 150) << "\" y1=\"" << fmt2(ly - 4)
        << "\" x2=\"" << fmt2(ml + pw - 126) << "\" y2=\"" << fmt2(ly - 4)
        << "\" stroke=\"" << s.color << "\" stroke-width=\"2\"/>\n";
    svg << "<text x=\"" << fmt2(ml + pw - 120) << "\" y=\"" << fmt2(ly)
        << "\" font-family=\"sans-serif\" font-size=\"11\">"
        << xml_escape(s.label) << "</text>\n";
    ly += 16;
  }
  svg << "</svg>\n";
  return svg.str();
}

}  // namespace somnus::plot
