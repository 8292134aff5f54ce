#pragma once

#include <string>
#include <vector>

namespace pgpref {

// Dense vector aligned with PolicyParams::theta(). Estimators report ascent
// directions on expected shaped reward.
struct GradientEstimate {
  std::vector<double> values;
  int n_samples = 0;
  std::string method;
};

}  // namespace pgpref
