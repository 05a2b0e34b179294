#include "somnus/eval/hypnogram.hpp"

#include <cstdio>
#include <sstream>

#include "somnus/common.hpp"
#include "somnus/signal/pipeline.hpp"

namespace somnus::eval {

namespace {

// Conventional display order, top to bottom.
constexpr int kDisplayRow[signal::kStageCount] = {0, 2, 3, 4, 1};
const char* kRowName[signal::kStageCount] = {"Wake", "REM", "N1", "N2", "N3"};

std::string fmt2(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.2f", v);
  return buf;
}

}  // namespace

HypnogramData hypnogram_data(const std::vector<int>& truth,
                             const std::vector<int>& pred) {
  if (truth.empty()) throw_invalid("hypnogram needs at least one epoch");
  if (truth.size() != pred.size())
    throw_invalid("hypnogram truth and prediction lengths differ");
  for (size_t i = 0; i < truth.size(); ++i)
    if (truth[i] < 0 || truth[i] >= signal::kStageCount || pred[i] < 0 ||
        pred[i] >= signal::kStageCount)
      throw_invalid("hypnogram labels must be stage codes 0..4");
  HypnogramData h;
  h.truth = truth;
  h.pred = pred;
  for (size_t i = 0; i < truth.size(); ++i)
    if (truth[i] != pred[i]) h.mismatches.push_back(i);
  return h;
}

std::string hypnogram_svg(const std::string& subject, const HypnogramData& h) {
  const int width = 960, height = 300;
  const double ml = 64, mr = 20, mt = 40, mb = 44;
  const double pw = width - ml - mr, ph = height - mt - mb;
  const size_t n = h.truth.size();
  auto px = [&](double e) { return ml + pw * e / static_cast<double>(n); };
  auto py = [&](int stage) {
    return mt + ph * (static_cast<double>(kDisplayRow[stage]) + 0.5) /
                    signal::kStageCount;
  };

  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << width
      << "\" height=\"" << height << "\" viewBox=\"0 0 " << width << " "
      << height << "\">\n";
  svg << "<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"22\" text-anchor=\"middle\" "
      << "font-family=\"sans-serif\" font-size=\"14\">Hypnogram " << subject
      << " (" << h.mismatches.size() << " mismatches)</text>\n";

  svg << "<g font-family=\"sans-serif\" font-size=\"11\" fill=\"#333\">\n";
  for (int row = 0; row < signal::kStageCount; ++row) {
    const double y = mt + ph * (row + 0.5) / signal::kStageCount;
    svg << "<line x1=\"" << fmt2(ml) << "\" y1=\"" << fmt2(y) << "\" x2=\""
        << fmt2(ml + pw) << "\" y2=\"" << fmt2(y)
        << "\" stroke=\"#ececec\"/>\n";
    svg << "<text x=\"" << fmt2(ml - 8) << "\" y=\"" << fmt2(y + 4)
        << "\" text-anchor=\"end\">" << kRowName[row] << "</text>\n";
  }
  svg << "</g>\n";
  svg << "<rect x=\"" << fmt2(ml) << "\" y=\"" << fmt2(mt) << "\" width=\""
      << fmt2(pw) << "\" height=\"" << fmt2(ph)
      << "\" fill=\"none\" stroke=\"#333\"/>\n";
  svg << "<text x=\"" << width / 2 << "\" y=\"" << height - 10
      << "\" text-anchor=\"middle\" font-family=\"sans-serif\" "
         "font-size=\"12\">epoch</text>\n";

  svg << "<polyline fill=\"none\" stroke=\"#222\" stroke-width=\"1.4\" "
         "points=\"";
  for (size_t e = 0; e < n; ++e) {
    if (e) svg << " ";
    svg << fmt2(px(static_cast<double>(e))) << "," << fmt2(py(h.truth[e]))
        << " " << fmt2(px(static_cast<double>(e + 1))) << ","
        << fmt2(py(h.truth[e]));
  }
  svg << "\"/>\n";

  for (size_t e : h.mismatches)
    svg << "<circle cx=\"" << fmt2(px(static_cast<double>(e) + 0.5))
        << "\" cy=\"" << fmt2(py(h.pred[e]))
        << "\" r=\"3\" fill=\"#d62728\"/>\n";
  svg << "</svg>\n";
  return svg.str();
}

std::string hypnogram_text(const std::string& subject, const HypnogramData& h) {
  std::ostringstream out;
  out << "subject " << subject << "\n";
  out << "epochs " << h.truth.size() << "\n";
  out << "mismatches " << h.mismatches.size() << "\n";
  out << "epoch\ttrue\tpred\tmatch\n";
  for (size_t e = 0; e < h.truth.size(); ++e)
    out << e << "\t"
        << signal::stage_name(static_cast<signal::Stage>(h.truth[e])) << "\t"
        << signal::stage_name(static_cast<signal::Stage>(h.pred[e])) << "\t"
        << (h.truth[e] == h.pred[e] ? 1 : 0) << "\n";
  return out.str();
}

}  // namespace somnus::eval
