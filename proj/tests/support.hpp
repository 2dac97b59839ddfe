#pragma once

#include <string>
#include <vector>

#include "tkr/dataio.hpp"

namespace tkr::test {

// One record per (time, event) pair, subject ids "s0", "s1", ...
inline std::vector<SurvivalRecord> records(const std::vector<double>& times, const std::vector<int>& events) {
  std::vector<SurvivalRecord> out;
  for (std::size_t i = 0; i < times.size(); ++i) {
    out.push_back({"s" + std::to_string(i), Side::left, times[i], events[i] != 0});
  }
  return out;
}

}  // namespace tkr::test
