#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "rockres/autograd.hpp"

namespace rockres {

/// Names of every differentiable primitive, as recorded on the tape.
const std::vector<std::string>& differentiable_ops();

struct GradcheckOptions {
  double step = 1e-4;
  double tolerance = 1e-3;
  /// Relative error is |a - n| / max(|a|, |n|, floor).
  double floor = 1e-6;
  /// Entries checked per leaf tensor; smaller leaves are checked in full.
  int max_entries = 64;
  /// Entries whose one-sided slopes disagree by more than this (relative) sit
  /// on a kink of relu or max pooling and are skipped.
  double kink_tolerance = 1e-2;
  /// A case fails if more than this fraction of its entries are skipped.
  double max_skipped_fraction = 0.1;
  std::uint64_t seed = 0;
};

/// One finite-difference case in 64-bit arithmetic. `forward` recomputes the
/// output from the current values of `leaves`; the check compares the
/// gradient of <R, forward()> for a fixed random R.
struct GradCase {
  std::string name;
  /// Primitive that must appear on the recorded graph; empty for composites.
  std::string op;
  std::vector<Tensor<double>> leaves;
  std::function<Tensor<double>()> forward;
};

struct CaseResult {
  std::string name;
  std::string op;
  double max_rel_error = 0.0;
  std::int64_t checked = 0;
  std::int64_t skipped = 0;
  bool covered = true;  // `op` found on the graph
  bool passed = false;
  std::string worst;  // leaf and flat index of the worst entry
};

CaseResult run_case(const GradCase& c, const GradcheckOptions& options);

enum class GradcheckScope { op, block, model };
GradcheckScope parse_scope(const std::string& s);

/// Ops and blocks use step 1e-4. Whole networks use step 1e-6 and fewer
/// entries per leaf: at depth 34 a 1e-4 step crosses relu and max-pool kinks
/// that the one-sided slope test does not resolve.
GradcheckOptions default_options(GradcheckScope scope);

/// Exactly one case per entry of differentiable_ops(), with small shapes
/// drawn from `seed`. `inject_fault` appends a case whose backward rule is
/// deliberately wrong.
std::vector<GradCase> op_cases(std::uint64_t seed, bool inject_fault = false);
/// Every block variant, with all parameters and the input as leaves.
std::vector<GradCase> block_cases(std::uint64_t seed);
/// Reduced-width networks for the baseline, the full kernel modification
/// ladder and the attention layouts, through the cross-entropy loss.
std::vector<GradCase> model_cases(std::uint64_t seed);

struct GradcheckReport {
  std::vector<CaseResult> cases;
  bool passed() const;
  /// One line per case: name, worst relative error, entries, status.
  std::string to_text() const;
};

GradcheckReport run_gradcheck(const std::vector<GradCase>& cases, const GradcheckOptions& options,
                              const std::function<void(const CaseResult&)>& on_case = {});
GradcheckReport run_gradcheck(GradcheckScope scope, const GradcheckOptions& options,
                              bool inject_fault = false,
                              const std::function<void(const CaseResult&)>& on_case = {});

}  // namespace rockres
