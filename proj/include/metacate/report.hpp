#pragma once

// Static SVG figures. Markup is emitted directly with a fixed viewBox and
// fixed-precision coordinates, so identical inputs give identical bytes.
// Each interval is drawn as one <line class="interval"> element.

#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "metacate/core.hpp"
#include "metacate/io.hpp"

namespace metacate {

struct BoxStats {
  double min = 0.0;
  double q1 = 0.0;
  double median = 0.0;
  double q3 = 0.0;
  double max = 0.0;
};

/// Five-number summary with linearly interpolated quartiles. Throws
/// DomainError on an empty sample.
BoxStats box_stats(std::vector<double> values);

/// Prediction intervals, one vertical segment per profile, profiles ordered
/// by pooled estimate, with a horizontal zero line. Profiles without an
/// interval are drawn as a point only.
std::string prediction_interval_svg(std::span<const PredictionRow> rows, std::string_view digest);

/// Per selected profile: the K study confidence intervals
/// tau_hat +/- 1.96 sqrt(se2) followed by the prediction interval. Throws
/// InputError for a profile id missing from either input.
std::string compare_intervals_svg(std::span<const StudyCateEstimate> aggregates,
                                  std::span<const PredictionRow> predictions,
                                  std::span<const int> profile_ids, std::string_view digest);

/// One box of per-profile coverage per method, with a 0.95 reference line.
std::string coverage_boxplot_svg(std::span<const MetricsRow> rows, std::string_view scenario,
                                 std::string_view digest);

}  // namespace metacate
