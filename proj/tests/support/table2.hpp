#pragma once

#include <vector>

#include "sero/corpus.hpp"

namespace testing_support {

/// Published phase-3 trial counts (arm sizes and cases per arm).
inline std::vector<sero::ClinicalTrial> table2_trials() {
  return {{"Pfizer", 1, 21669, 39, 21686, 82},      {"Pfizer", 2, 21669, 11, 21686, 193},
          {"Moderna", 1, 996, 7, 1079, 39},         {"Moderna", 2, 13934, 5, 13883, 90},
          {"AstraZeneca", 1, 9257, 32, 9237, 89},   {"AstraZeneca", 2, 8597, 84, 8581, 248},
          {"Sputnik V", 1, 14999, 30, 4950, 79},    {"Sputnik V", 2, 14094, 13, 4601, 47},
          {"Janssen", 1, 19630, 116, 19691, 348}};
}

}  // namespace testing_support
