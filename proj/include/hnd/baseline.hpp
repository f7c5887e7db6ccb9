#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "hnd/stage2_parts.hpp"

namespace hnd {

// IoU-only pairing: the single top concept, if its IoU reaches the cutoff.
struct BaselinePairing {
  std::uint32_t unit_index = 0;
  std::optional<std::string> top_concept;
  double top_iou = 0.0;

  friend bool operator==(const BaselinePairing&, const BaselinePairing&) = default;
};

BaselinePairing baseline_pair(const IoUTable& table, double cutoff = kDefaultIouCutoff);

}  // namespace hnd
