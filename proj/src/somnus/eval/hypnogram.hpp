#pragma once

#include <string>
#include <vector>

namespace somnus::eval {

struct HypnogramData {
  std::vector<int> truth, pred;    // per epoch, stage codes 0..4
  std::vector<size_t> mismatches;  // epoch indices where pred != truth
};

HypnogramData hypnogram_data(const std::vector<int>& truth,
                             const std::vector<int>& pred);

// Step plot of the scored stages in conventional top-to-bottom display order
// (Wake, REM, N1, N2, N3); disagreements are marked with red dots at the
// predicted stage.
std::string hypnogram_svg(const std::string& subject, const HypnogramData& h);

// Structured sidecar: one "epoch true pred match" row per epoch plus a
// mismatch summary line.
std::string hypnogram_text(const std::string& subject, const HypnogramData& h);

}  // namespace somnus::eval
