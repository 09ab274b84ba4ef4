#pragma once

#include <functional>
#include <string>
#include <vector>

#include "p2t/autograd.hpp"

namespace p2t {

enum class GradcheckScope { ops, block, model };

// Throws ConfigError for anything but "ops", "block", "model".
GradcheckScope gradcheck_scope_from_string(const std::string& name);
std::string to_string(GradcheckScope scope);

inline constexpr double kGradcheckTolerance = 1e-4;
inline constexpr double kGradcheckStep = 1e-4;

struct GradcheckCase {
  std::string name;
  double max_rel_error = 0;
  std::size_t checked = 0;  // number of gradient entries compared
  bool passed = false;
};

struct GradcheckReport {
  GradcheckScope scope = GradcheckScope::ops;
  double tolerance = kGradcheckTolerance;
  std::vector<GradcheckCase> cases;

  bool passed() const;
};

// Builds a scalar loss in a fresh graph from the current values of the
// parameters it captures.
using LossBuilder = std::function<Var<double>(Graph<double>&)>;

// Compares backward() against central differences for every listed
// parameter. At most `max_entries` entries per parameter are probed (evenly
// spaced); 0 probes all of them. Entries are compared relative to
// max(|analytic|, |numeric|, floor), where floor is the larger of 1e-3 times
// the parameter's largest numeric entry and 1e-6 times the case's largest.
GradcheckCase check_gradients(const std::string& name, const LossBuilder& loss,
                              const std::vector<Parameter<double>*>& params, std::size_t max_entries = 0,
                              double tolerance = kGradcheckTolerance);

GradcheckReport gradcheck_suite(GradcheckScope scope);

}  // namespace p2t
