#pragma once

#include <iosfwd>

#include "dpfa/checkpoint.hpp"
#include "dpfa/config.hpp"
#include "dpfa/data.hpp"
#include "dpfa/metrics.hpp"

namespace dpfa {

// Blocks of one split plus the class table they were labeled against.
struct Dataset {
    std::vector<PointCloudBlock> blocks;
    std::vector<std::string> class_table;
};

// One classification sample: a whole cloud resampled to a fixed cardinality,
// centered and scaled to the unit ball, labeled by its majority point label.
struct ClsSample {
    int64_t n = 0;
    std::vector<double> features;  // n x 6: x, y, z, r, g, b
    int32_t label = 0;
};

struct ClsDataset {
    std::vector<ClsSample> samples;
    std::vector<std::string> class_table;
};

// Loads every *.txt under `dir` (sorted), splits into sampled blocks.
Dataset load_seg_dataset(const std::filesystem::path& dir, const RunConfig& cfg);
ClsDataset load_cls_dataset(const std::filesystem::path& dir, const RunConfig& cfg);

struct TrainResult {
    MetricsReport final_test;
    MetricsReport best_test;
    int64_t best_epoch = -1;
    double best_miou = -1.0;
    std::vector<double> epoch_losses;
    std::filesystem::path best_checkpoint;
    std::filesystem::path last_checkpoint;
    std::vector<std::string> class_table;
};

// Segmentation (or first-stage background/foreground) training per the run
// config; writes best.ckpt / last.ckpt under cfg.out_dir and logs one line
// per epoch.
template <typename T>
TrainResult train_seg_run(const RunConfig& cfg, TrainTask task, std::ostream& log);

template <typename T>
TrainResult train_cls_run(const RunConfig& cfg, std::ostream& log);

// Evaluates a seg checkpoint on cfg.test_dir.
template <typename T>
MetricsReport eval_seg_checkpoint(const std::filesystem::path& ckpt, const RunConfig& cfg,
                                  std::ostream& log);

// Per-point prediction over a whole cloud: every grid cell is forwarded with
// all of its member points (no sampling), so each point gets a label.
template <typename T>
LabeledCloud predict_cloud(const std::filesystem::path& ckpt, const RunConfig& cfg,
                           const LabeledCloud& cloud);

struct BenchReport {
    int64_t points = 0;
    int warmup = 5;
    int runs = 30;
    LatencyStats stats;
    std::string to_kv() const;
};

// Forward-only latency on one block: warm cache, then `runs` timed passes.
template <typename T>
BenchReport bench_run(const RunConfig& cfg, const std::filesystem::path& ckpt_or_empty,
                      int warmup, int runs, std::ostream& log);

// Dispatch helpers keyed on cfg.precision (32 -> float, 64 -> double).
TrainResult train_seg_any(const RunConfig& cfg, TrainTask task, std::ostream& log);
TrainResult train_cls_any(const RunConfig& cfg, std::ostream& log);
MetricsReport eval_seg_any(const std::filesystem::path& ckpt, const RunConfig& cfg, std::ostream& log);
LabeledCloud predict_any(const std::filesystem::path& ckpt, const RunConfig& cfg,
                         const LabeledCloud& cloud);
BenchReport bench_any(const RunConfig& cfg, const std::filesystem::path& ckpt_or_empty, int warmup,
                      int runs, std::ostream& log);

}  // namespace dpfa
