#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "mvw/tensor.hpp"
#include "mvw/triplet.hpp"

namespace mvw {

// Test-support reference implementations, deliberately independent of the
// production code paths they check. Exposed as a library surface so the
// oracle-check CLI command can run them outside the test binaries.

/// Exhaustive (anchor, positive, negative) enumeration of the weak-label
/// latent loss: per (class, frame) slice, the hardest candidate per anchor,
/// hinge, mean over valid anchors, mean over all C*T slices.
double bruteForceWeakLatentLoss(const std::vector<Matd>& batch, const Mati& bags,
                                const TripletParams& params);

/// Quadratic-time PR-curve average precision with all-points interpolation;
/// returns -1 when undefined (no positives).
double bruteForceAveragePrecision(const Vecd& scores, const Veci& labels);

struct OracleCheckResult {
  bool ok = true;
  std::vector<std::string> failures;
  double worst_loss_gap = 0.0;
  double worst_ap_gap = 0.0;
  double latent_grad_err = 0.0;
  double probe_grad_err = 0.0;
};

/// Runs the loss-equivalence sweep, the AP sweep and both gradient checks.
OracleCheckResult runOracleChecks(int loss_instances, int ap_instances, std::uint64_t seed);

}  // namespace mvw
