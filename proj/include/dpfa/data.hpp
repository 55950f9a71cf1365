#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "dpfa/tensor.hpp"

namespace dpfa {

// A labeled point cloud in meters, colors in [0, 1].
struct LabeledCloud {
    std::vector<std::array<double, 3>> coords;
    std::vector<std::array<double, 3>> colors;
    std::vector<int32_t> labels;
    std::vector<std::string> class_table;

    size_t size() const { return coords.size(); }
};

// One network input: a fixed-cardinality sample of a 1m x 1m column, rows of
// (x_r, y_r, z_r, r, g, b, x_b, y_b, z_b).
struct PointCloudBlock {
    static constexpr int64_t kFeatureWidth = 9;

    int64_t n = 0;
    std::vector<double> features;  // n x 9 row-major
    std::vector<int32_t> labels;
    std::array<double, 2> origin = {0.0, 0.0};  // XY anchor of the block footprint

    double feature(int64_t i, int64_t c) const {
        return features[static_cast<size_t>(i * kFeatureWidth + c)];
    }
};

struct BlockOptions {
    double block_size = 1.0;
    int64_t samples = 4096;
    int64_t min_points = 32;
    uint64_t seed = 0;
};

// Grid assignment of point indices to non-overlapping footprint cells over
// the XY bounding box, row-major cell order. Cells below min_points are kept
// here (filtering happens in split_blocks) so coverage can be audited.
std::vector<std::vector<int64_t>> assign_blocks(const LabeledCloud& cloud, double block_size);

// Splits a cloud into fixed-size sampled blocks. Cells with at least
// `min_points` members yield exactly `samples` points each: without
// replacement when the cell is large enough, with replacement otherwise.
std::vector<PointCloudBlock> split_blocks(const LabeledCloud& cloud, const BlockOptions& opts);

// Whole-cloud inference blocks: every non-empty cell with all of its member
// points (no sampling), plus the source index of each row.
struct PredictionBlock {
    PointCloudBlock block;
    std::vector<int64_t> sources;
};

std::vector<PredictionBlock> prediction_blocks(const LabeledCloud& cloud, double block_size);

// Text format: header `pointcloud v1 classes=<comma-list>`, then one point
// per line: `x y z r g b label_id`. Round-trips 64-bit coordinates exactly.
LabeledCloud load_cloud(const std::filesystem::path& path);
void save_cloud(const LabeledCloud& cloud, const std::filesystem::path& path);

template <typename T>
Tensor<T> block_features_tensor(const PointCloudBlock& block) {
    Tensor<T> t({block.n, PointCloudBlock::kFeatureWidth});
    for (size_t i = 0; i < block.features.size(); ++i) t.data[i] = static_cast<T>(block.features[i]);
    return t;
}

}  // namespace dpfa
