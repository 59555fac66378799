#pragma once

#include <string>
#include <vector>

#include "rangekit/geo.hpp"
#include "rangekit/model.hpp"

namespace rangekit {

struct LabelPoint {
  double utc = 0.0;
  geo::GeodeticPosition position;
};

// One contiguous recording: time-ordered epochs plus an optional ground-truth
// track sharing the timestamps.
struct Trace {
  std::vector<model::Epoch> epochs;
  std::vector<LabelPoint> labels;
  std::vector<std::string> warnings;
};

}  // namespace rangekit
