#include "hnd/baseline.hpp"

namespace hnd {

BaselinePairing baseline_pair(const IoUTable& table, double cutoff) {
  BaselinePairing out;
  out.unit_index = table.unit_index;
  // Same tie rule as assign_region: ascending name wins.
  bool first = true;
  std::string best;
  for (const auto& [name, value] : table.scores) {
    if (first || value > out.top_iou) {
      best = name;
      out.top_iou = value;
      first = false;
    }
  }
  if (!first && out.top_iou >= cutoff) out.top_concept = best;
  return out;
}

}  // namespace hnd
