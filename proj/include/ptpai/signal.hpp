#pragma once

#include <cmath>
#include <vector>

#include "ptpai/common.hpp"

namespace ptpai {

// Raw 1-D vibration recording (acceleration, arbitrary units).
struct VibrationSignal {
  std::vector<double> samples;
  double fs = 0.0;  // Hz

  int size() const { return static_cast<int>(samples.size()); }
};

inline void validate(const VibrationSignal& s) {
  require(s.fs > 0.0, ErrorCode::invalid_input, "signal: fs must be > 0");
  for (double v : s.samples) {
    require(std::isfinite(v), ErrorCode::invalid_input,
            "signal: non-finite sample");
  }
}

}  // namespace ptpai
