#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "json.hpp"

namespace har {

/// Half-open interval of raw sample indices.
struct Interval {
    std::size_t begin = 0;
    std::size_t end = 0;  // exclusive
    bool operator==(const Interval&) const = default;
};

/// Sliding-window sum of compatibility scores. values[i] (0-based) sums the
/// scores whose 1-based index j satisfies max(1, i+1-w/2) <= j <= min(n, i+1+w/2).
struct DensityCurve {
    std::vector<double> values;
    std::size_t window_w = 0;        // slide-window width, even
    std::size_t level = 0;           // attention level the scores came from
    std::size_t stride_to_raw = 1;   // feature-index -> raw-sample stride
};

struct LocalizationResult {
    std::vector<std::size_t> peaks;       // feature coordinates
    std::vector<double> peak_scores;      // density at each peak
    std::vector<Interval> windows;        // raw-sample activity areas
    std::size_t sequence_len = 0;
};

struct LocalizationMetrics {
    double hit_rate = 0.0;       // predicted-window centers inside some ground-truth segment
    double mean_best_iou = 0.0;  // mean over predictions of best IoU vs ground truth
    std::size_t num_predictions = 0;
};

/// Throws std::invalid_argument unless w is even, >= 2 and < 2n.
DensityCurve density(const std::vector<double>& scores, std::size_t w, std::size_t level = 0,
                     std::size_t stride_to_raw = 1);

/// Strict local maxima; endpoints qualify against their single neighbor,
/// plateaus yield nothing. A one-point curve has its only point as the peak.
std::vector<std::size_t> find_peaks(const DensityCurve& curve);

/// Maps peaks to raw-coordinate activity windows of width w*stride_to_raw
/// centered on the peak, clamped to [0, sequence_len).
LocalizationResult to_raw_windows(const std::vector<std::size_t>& peaks, const DensityCurve& curve,
                                  std::size_t sequence_len);

/// Scores predictions against ground truth. Empty predictions give zeros;
/// malformed intervals (end <= begin) throw.
LocalizationMetrics localization_metrics(const std::vector<Interval>& windows,
                                         const std::vector<Interval>& gt_segments);

double interval_iou(const Interval& a, const Interval& b);

/// CSV rows (feature_index, score, density, raw_center) for one sequence.
void write_density_csv(const std::string& path, const std::vector<double>& scores,
                       const DensityCurve& curve);

nlohmann::json to_json(const LocalizationResult& result);

}  // namespace har
