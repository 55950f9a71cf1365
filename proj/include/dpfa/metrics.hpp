#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace dpfa {

// Confusion-matrix derived segmentation metrics plus forward-latency stats.
// Confusion rows are ground truth, columns predictions.
struct MetricsReport {
    int64_t num_classes = 0;
    std::vector<int64_t> confusion;  // C x C row-major
    double oa = 0.0;
    std::vector<double> per_class_iou;   // only meaningful where iou_valid
    std::vector<uint8_t> iou_valid;      // 0: no TP+FP+FN, class skipped from miou
    double miou = 0.0;
    int64_t points = 0;
    double latency_mean_ms = 0.0;
    double latency_p95_ms = 0.0;

    int64_t at(int64_t truth, int64_t pred) const { return confusion[static_cast<size_t>(truth * num_classes + pred)]; }

    std::string to_table(const std::vector<std::string>& class_names) const;
    std::string to_kv() const;  // machine-readable `key=value` lines
};

MetricsReport metrics_from_confusion(std::vector<int64_t> confusion, int64_t num_classes);

struct LatencyStats {
    double mean_ms = 0.0;
    double p95_ms = 0.0;
    double median_ms = 0.0;
};

LatencyStats latency_stats(std::vector<double> millis);

}  // namespace dpfa
