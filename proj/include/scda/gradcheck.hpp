#pragma once

// Finite-difference verification of every differentiable op and loss term.
//
// Each check compares the whole gradient (every input, or every model
// parameter) against central differences with step `step`:
//   err = max_k |analytic_k - numeric_k| / max(max_k |analytic_k|, max_k |numeric_k|, kGradcheckFloor)
// Model-level checks run on a 4x4-image model with three feature channels,
// at a parameter point kept at least 1e-3 away from every relu kink.
//
// A GRL makes the taped gradient differ from the derivative of the forward
// value on purpose. For terms routed through one (pdd_ss, pdd_st, adv) the
// expected extractor gradient is -lambda times the finite difference, and the
// total is checked against the matching signed combination of per-term
// differences.

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

namespace scda {

/// Below this a central difference with step 1e-5 is mostly rounding noise.
inline constexpr double kGradcheckFloor = 1e-6;

struct GradcheckOptions {
  std::uint64_t seed = 1;
  double step = 1e-5;
  double op_tolerance = 1e-5;
  double composed_tolerance = 1e-4;
  /// Mutation switch for tests: the graph applies GRL with lambda = -1 while
  /// the oracle still expects a reversal, so GRL-routed checks must fail.
  bool inject_grl_bug = false;
};

struct GradcheckEntry {
  std::string name;
  bool composed = false;  // model-level loss term rather than a single op
  double max_rel_error = 0.0;
  double tolerance = 0.0;
  bool passed() const { return max_rel_error < tolerance; }
};

struct GradcheckReport {
  std::vector<GradcheckEntry> entries;
  double seconds = 0.0;
  bool passed() const;
};

GradcheckReport run_gradcheck(const GradcheckOptions& options = {});

nlohmann::json gradcheck_json(const GradcheckReport& report);
/// One line per entry: "PASS|FAIL  <name>  max_rel_err=<e>  tol=<t>".
std::string gradcheck_text(const GradcheckReport& report);

}  // namespace scda
