#include "har/localization.hpp"

#include <algorithm>
#include <fstream>
#include <stdexcept>

namespace har {

DensityCurve density(const std::vector<double>& scores, std::size_t w, std::size_t level,
                     std::size_t stride_to_raw) {
    const std::size_t n = scores.size();
    if (n < 1) throw std::invalid_argument("density: empty score array");
    if (w < 2 || w % 2 != 0) {
        throw std::invalid_argument("density: window width must be even and >= 2, got " +
                                    std::to_string(w));
    }
    if (w >= 2 * n) {
        throw std::invalid_argument("density: window width " + std::to_string(w) +
                                    " too large for " + std::to_string(n) + " locations");
    }
    if (stride_to_raw < 1) throw std::invalid_argument("density: stride_to_raw must be >= 1");

    DensityCurve curve;
    curve.window_w = w;
    curve.level = level;
    curve.stride_to_raw = stride_to_raw;
    curve.values.resize(n);
    const std::size_t half = w / 2;
    for (std::size_t i = 0; i < n; ++i) {
        // 1-based window [i+1-w/2, i+1+w/2] clamped to [1, n]
        const std::size_t lo = i >= half ? i - half : 0;
        const std::size_t hi = std::min(n - 1, i + half);
        double s = 0.0;
        for (std::size_t j = lo; j <= hi; ++j) s += scores[j];
        curve.values[i] = s;
    }
    return curve;
}

std::vector<std::size_t> find_peaks(const DensityCurve& curve) {
    const std::vector<double>& d = curve.values;
    const std::size_t n = d.size();
    std::vector<std::size_t> peaks;
    if (n == 0) return peaks;
    if (n == 1) return {0};
    for (std::size_t i = 0; i < n; ++i) {
        const bool left_ok = i == 0 || d[i] > d[i - 1];
        const bool right_ok = i == n - 1 || d[i] > d[i + 1];
        if (left_ok && right_ok) peaks.push_back(i);
    }
    return peaks;
}

LocalizationResult to_raw_windows(const std::vector<std::size_t>& peaks, const DensityCurve& curve,
                                  std::size_t sequence_len) {
    if (curve.stride_to_raw < 1) {
        throw std::invalid_argument("to_raw_windows: stride_to_raw must be >= 1");
    }
    LocalizationResult res;
    res.sequence_len = sequence_len;
    const std::size_t half_raw = (curve.window_w / 2) * curve.stride_to_raw;
    for (std::size_t p : peaks) {
        if (p >= curve.values.size()) {
            throw std::invalid_argument("to_raw_windows: peak index " + std::to_string(p) +
                                        " outside curve of length " +
                                        std::to_string(curve.values.size()));
        }
        const std::size_t center = p * curve.stride_to_raw;
        const std::size_t begin = center >= half_raw ? center - half_raw : 0;
        const std::size_t end = std::min<std::size_t>(sequence_len, center + half_raw);
        res.peaks.push_back(p);
        res.peak_scores.push_back(curve.values[p]);
        res.windows.push_back({begin, end});
    }
    return res;
}

double interval_iou(const Interval& a, const Interval& b) {
    if (a.end <= a.begin || b.end <= b.begin) {
        throw std::invalid_argument("interval_iou: malformed interval (end <= begin)");
    }
    const std::size_t ib = std::max(a.begin, b.begin);
    const std::size_t ie = std::min(a.end, b.end);
    const double inter = ie > ib ? static_cast<double>(ie - ib) : 0.0;
    const double uni = static_cast<double>((a.end - a.begin) + (b.end - b.begin)) - inter;
    return inter / uni;
}

LocalizationMetrics localization_metrics(const std::vector<Interval>& windows,
                                         const std::vector<Interval>& gt_segments) {
    for (const Interval& w : windows) {
        if (w.end <= w.begin) {
            throw std::invalid_argument("localization_metrics: malformed predicted interval");
        }
    }
    for (const Interval& g : gt_segments) {
        if (g.end <= g.begin) {
            throw std::invalid_argument("localization_metrics: malformed ground-truth interval");
        }
    }
    LocalizationMetrics m;
    m.num_predictions = windows.size();
    if (windows.empty()) return m;

    std::size_t hits = 0;
    double iou_sum = 0.0;
    for (const Interval& w : windows) {
        const double center = (static_cast<double>(w.begin) + static_cast<double>(w.end)) / 2.0;
        double best = 0.0;
        bool hit = false;
        for (const Interval& g : gt_segments) {
            best = std::max(best, interval_iou(w, g));
            if (center >= static_cast<double>(g.begin) && center < static_cast<double>(g.end)) {
                hit = true;
            }
        }
        if (hit) ++hits;
        iou_sum += best;
    }
    m.hit_rate = static_cast<double>(hits) / static_cast<double>(windows.size());
    m.mean_best_iou = iou_sum / static_cast<double>(windows.size());
    return m;
}

void write_density_csv(const std::string& path, const std::vector<double>& scores,
                       const DensityCurve& curve) {
    if (scores.size() != curve.values.size()) {
        throw std::invalid_argument("write_density_csv: score/density length mismatch");
    }
    std::ofstream out(path);
    if (!out) throw std::runtime_error("write_density_csv: cannot open " + path);
    out << "feature_index,score,density,raw_center\n";
    out.precision(17);
    for (std::size_t i = 0; i < scores.size(); ++i) {
        out << i << ',' << scores[i] << ',' << curve.values[i] << ',' << i * curve.stride_to_raw
            << '\n';
    }
    if (!out) throw std::runtime_error("write_density_csv: write failed for " + path);
}

nlohmann::json to_json(const LocalizationResult& result) {
    nlohmann::json windows = nlohmann::json::array();
    for (const Interval& w : result.windows) {
        windows.push_back({{"start", w.begin}, {"end", w.end}});
    }
    return {{"peaks", result.peaks},
            {"peak_scores", result.peak_scores},
            {"windows", windows},
            {"sequence_len", result.sequence_len}};
}

}  // namespace har
