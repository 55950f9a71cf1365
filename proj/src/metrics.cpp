#include "dpfa/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <iomanip>
#include <sstream>
#include <stdexcept>

namespace dpfa {

MetricsReport metrics_from_confusion(std::vector<int64_t> confusion, int64_t num_classes) {
    if (static_cast<int64_t>(confusion.size()) != num_classes * num_classes)
        throw std::invalid_argument("metrics: confusion size " + std::to_string(confusion.size()) +
                                    " does not match " + std::to_string(num_classes) + " classes");
    MetricsReport r;
    r.num_classes = num_classes;
    r.confusion = std::move(confusion);

    int64_t total = 0, correct = 0;
    for (int64_t t = 0; t < num_classes; ++t)
        for (int64_t p = 0; p < num_classes; ++p) {
            const int64_t v = r.at(t, p);
            total += v;
            if (t == p) correct += v;
        }
    r.points = total;
    r.oa = total > 0 ? static_cast<double>(correct) / static_cast<double>(total) : 0.0;

    r.per_class_iou.assign(static_cast<size_t>(num_classes), 0.0);
    r.iou_valid.assign(static_cast<size_t>(num_classes), 0);
    double iou_sum = 0.0;
    int64_t iou_count = 0;
    for (int64_t c = 0; c < num_classes; ++c) {
        const int64_t tp = r.at(c, c);
        int64_t fp = 0, fn = 0;
        for (int64_t o = 0; o < num_classes; ++o) {
            if (o == c) continue;
            fp += r.at(o, c);
            fn += r.at(c, o);
        }
        const int64_t denom = tp + fp + fn;
        if (denom == 0) continue;  // class absent from both truth and prediction
        r.per_class_iou[static_cast<size_t>(c)] =
            static_cast<double>(tp) / static_cast<double>(denom);
        r.iou_valid[static_cast<size_t>(c)] = 1;
        iou_sum += r.per_class_iou[static_cast<size_t>(c)];
        ++iou_count;
    }
    r.miou = iou_count > 0 ? iou_sum / static_cast<double>(iou_count) : 0.0;
    return r;
}

std::string MetricsReport::to_table(const std::vector<std::string>& class_names) const {
    std::ostringstream os;
    os << std::fixed << std::setprecision(2);
    os << "points " << points << "  OA " << 100.0 * oa << "%  mIoU " << 100.0 * miou << "%\n";
    for (int64_t c = 0; c < num_classes; ++c) {
        const std::string name = c < static_cast<int64_t>(class_names.size())
                                     ? class_names[static_cast<size_t>(c)]
                                     : ("class" + std::to_string(c));
        os << "  " << std::setw(12) << std::left << name << std::right;
        if (iou_valid[static_cast<size_t>(c)])
            os << " IoU " << std::setw(6) << 100.0 * per_class_iou[static_cast<size_t>(c)] << "%";
        else
            os << " IoU      -";
        os << "\n";
    }
    if (latency_mean_ms > 0.0)
        os << "  latency/block mean " << std::setprecision(3) << latency_mean_ms << " ms, p95 "
           << latency_p95_ms << " ms\n";
    return os.str();
}

std::string MetricsReport::to_kv() const {
    std::ostringstream os;
    os << std::setprecision(10);
    os << "metric.points=" << points << "\n";
    os << "metric.oa=" << oa << "\n";
    os << "metric.miou=" << miou << "\n";
    for (int64_t c = 0; c < num_classes; ++c)
        if (iou_valid[static_cast<size_t>(c)])
            os << "metric.iou." << c << "=" << per_class_iou[static_cast<size_t>(c)] << "\n";
    if (latency_mean_ms > 0.0) {
        os << "metric.latency_mean_ms=" << latency_mean_ms << "\n";
        os << "metric.latency_p95_ms=" << latency_p95_ms << "\n";
    }
    return os.str();
}

LatencyStats latency_stats(std::vector<double> millis) {
    LatencyStats s;
    if (millis.empty()) return s;
    double sum = 0.0;
    for (double v : millis) sum += v;
    s.mean_ms = sum / static_cast<double>(millis.size());
    std::sort(millis.begin(), millis.end());
    const size_t n = millis.size();
    const size_t p95 = std::min(n - 1, static_cast<size_t>(std::ceil(0.95 * static_cast<double>(n))) - 1);
    s.p95_ms = millis[p95];
    s.median_ms = millis[n / 2];
    return s;
}

}  // namespace dpfa
