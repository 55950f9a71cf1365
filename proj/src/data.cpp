#include "dpfa/data.hpp"

#include <cmath>
#include <fstream>
#include <limits>
#include <sstream>

#include "dpfa/rng.hpp"

namespace dpfa {

namespace {

struct BlockGrid {
    double min_x = 0, min_y = 0, min_z = 0;
    double height = 1.0;
    double block_size = 1.0;
    int64_t nx = 0, ny = 0;
    std::vector<std::vector<int64_t>> cells;  // row-major, cx * ny + cy

    std::array<double, 2> origin(int64_t cell) const {
        const int64_t cx = cell / ny;
        const int64_t cy = cell % ny;
        return {min_x + static_cast<double>(cx) * block_size,
                min_y + static_cast<double>(cy) * block_size};
    }
};

BlockGrid build_grid(const LabeledCloud& cloud, double block_size) {
    if (block_size <= 0.0) throw std::invalid_argument("split_blocks: block_size must be positive");
    BlockGrid grid;
    grid.block_size = block_size;
    if (cloud.size() == 0) return grid;

    double max_x = cloud.coords[0][0], max_y = cloud.coords[0][1], max_z = cloud.coords[0][2];
    grid.min_x = max_x;
    grid.min_y = max_y;
    grid.min_z = max_z;
    for (const auto& p : cloud.coords) {
        grid.min_x = std::min(grid.min_x, p[0]);
        max_x = std::max(max_x, p[0]);
        grid.min_y = std::min(grid.min_y, p[1]);
        max_y = std::max(max_y, p[1]);
        grid.min_z = std::min(grid.min_z, p[2]);
        max_z = std::max(max_z, p[2]);
    }
    grid.height = std::max(max_z - grid.min_z, 1e-9);
    grid.nx = std::max<int64_t>(1, static_cast<int64_t>(std::ceil((max_x - grid.min_x) / block_size)));
    grid.ny = std::max<int64_t>(1, static_cast<int64_t>(std::ceil((max_y - grid.min_y) / block_size)));

    grid.cells.resize(static_cast<size_t>(grid.nx * grid.ny));
    for (size_t i = 0; i < cloud.size(); ++i) {
        int64_t cx = static_cast<int64_t>((cloud.coords[i][0] - grid.min_x) / block_size);
        int64_t cy = static_cast<int64_t>((cloud.coords[i][1] - grid.min_y) / block_size);
        cx = std::min(cx, grid.nx - 1);  // max-boundary points fall into the last cell
        cy = std::min(cy, grid.ny - 1);
        grid.cells[static_cast<size_t>(cx * grid.ny + cy)].push_back(static_cast<int64_t>(i));
    }
    return grid;
}

PointCloudBlock fill_block(const LabeledCloud& cloud, const std::vector<int64_t>& chosen,
                           std::array<double, 2> origin, const BlockGrid& grid) {
    PointCloudBlock blk;
    blk.n = static_cast<int64_t>(chosen.size());
    blk.origin = origin;
    blk.features.resize(static_cast<size_t>(blk.n * PointCloudBlock::kFeatureWidth));
    blk.labels.resize(static_cast<size_t>(blk.n));
    for (int64_t i = 0; i < blk.n; ++i) {
        const size_t src = static_cast<size_t>(chosen[static_cast<size_t>(i)]);
        double* f = blk.features.data() + i * PointCloudBlock::kFeatureWidth;
        f[0] = cloud.coords[src][0];
        f[1] = cloud.coords[src][1];
        f[2] = cloud.coords[src][2];
        f[3] = cloud.colors[src][0];
        f[4] = cloud.colors[src][1];
        f[5] = cloud.colors[src][2];
        f[6] = std::clamp((f[0] - origin[0]) / grid.block_size, 0.0, 1.0);
        f[7] = std::clamp((f[1] - origin[1]) / grid.block_size, 0.0, 1.0);
        f[8] = std::clamp((f[2] - grid.min_z) / grid.height, 0.0, 1.0);
        blk.labels[static_cast<size_t>(i)] = cloud.labels[src];
    }
    return blk;
}

// Partial Fisher-Yates: first `take` entries of a random permutation.
std::vector<int64_t> sample_without_replacement(const std::vector<int64_t>& pool, int64_t take,
                                                Rng& rng) {
    std::vector<int64_t> scratch = pool;
    std::vector<int64_t> out;
    out.reserve(static_cast<size_t>(take));
    for (int64_t i = 0; i < take; ++i) {
        const int64_t j = i + rng.uniform_int(static_cast<int64_t>(scratch.size()) - i);
        std::swap(scratch[static_cast<size_t>(i)], scratch[static_cast<size_t>(j)]);
        out.push_back(scratch[static_cast<size_t>(i)]);
    }
    return out;
}

}  // namespace

std::vector<std::vector<int64_t>> assign_blocks(const LabeledCloud& cloud, double block_size) {
    return build_grid(cloud, block_size).cells;
}

std::vector<PointCloudBlock> split_blocks(const LabeledCloud& cloud, const BlockOptions& opts) {
    if (opts.samples < 1) throw std::invalid_argument("split_blocks: samples must be >= 1");
    if (cloud.size() == 0) return {};

    const BlockGrid grid = build_grid(cloud, opts.block_size);
    std::vector<PointCloudBlock> blocks;
    Rng rng(Rng::mix(opts.seed, 0x626c6f636bULL));

    for (size_t cell = 0; cell < grid.cells.size(); ++cell) {
        const auto& members = grid.cells[cell];
        if (static_cast<int64_t>(members.size()) < opts.min_points) continue;

        std::vector<int64_t> chosen;
        if (static_cast<int64_t>(members.size()) >= opts.samples) {
            chosen = sample_without_replacement(members, opts.samples, rng);
        } else {
            chosen.reserve(static_cast<size_t>(opts.samples));
            for (int64_t i = 0; i < opts.samples; ++i)
                chosen.push_back(
                    members[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(members.size())))]);
        }
        blocks.push_back(fill_block(cloud, chosen, grid.origin(static_cast<int64_t>(cell)), grid));
    }
    return blocks;
}

std::vector<PredictionBlock> prediction_blocks(const LabeledCloud& cloud, double block_size) {
    if (cloud.size() == 0) return {};
    const BlockGrid grid = build_grid(cloud, block_size);
    std::vector<PredictionBlock> blocks;
    for (size_t cell = 0; cell < grid.cells.size(); ++cell) {
        const auto& members = grid.cells[cell];
        if (members.empty()) continue;
        PredictionBlock pb;
        pb.block = fill_block(cloud, members, grid.origin(static_cast<int64_t>(cell)), grid);
        pb.sources = members;
        blocks.push_back(std::move(pb));
    }
    return blocks;
}

namespace {

[[noreturn]] void parse_fail(const std::filesystem::path& path, int64_t line, const std::string& what) {
    throw std::runtime_error(path.string() + ":" + std::to_string(line) + ": " + what);
}

}  // namespace

LabeledCloud load_cloud(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path.string());

    std::string line;
    if (!std::getline(in, line)) parse_fail(path, 1, "empty file, expected header");
    std::istringstream header(line);
    std::string magic, version, classes_field;
    header >> magic >> version >> classes_field;
    if (magic != "pointcloud" || version != "v1" || classes_field.rfind("classes=", 0) != 0)
        parse_fail(path, 1, "bad header, expected 'pointcloud v1 classes=<comma-list>'");

    LabeledCloud cloud;
    {
        std::string names = classes_field.substr(std::string("classes=").size());
        std::string item;
        std::istringstream cs(names);
        while (std::getline(cs, item, ',')) {
            if (item.empty()) parse_fail(path, 1, "empty class name in header");
            for (const auto& existing : cloud.class_table)
                if (existing == item) parse_fail(path, 1, "duplicate class name '" + item + "'");
            cloud.class_table.push_back(item);
        }
        if (cloud.class_table.empty()) parse_fail(path, 1, "header lists no classes");
    }

    int64_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        std::istringstream ls(line);
        double x, y, z, r, g, b;
        int64_t label;
        if (!(ls >> x >> y >> z >> r >> g >> b >> label))
            parse_fail(path, lineno, "expected 7 fields 'x y z r g b label_id'");
        std::string extra;
        if (ls >> extra) parse_fail(path, lineno, "trailing field '" + extra + "'");
        if (label < 0 || label >= static_cast<int64_t>(cloud.class_table.size()))
            parse_fail(path, lineno,
                       "label " + std::to_string(label) + " outside the declared class table");
        cloud.coords.push_back({x, y, z});
        cloud.colors.push_back({r, g, b});
        cloud.labels.push_back(static_cast<int32_t>(label));
    }
    return cloud;
}

void save_cloud(const LabeledCloud& cloud, const std::filesystem::path& path) {
    if (cloud.class_table.empty()) throw std::invalid_argument("save_cloud: empty class table");
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot write " + path.string());
    out << "pointcloud v1 classes=";
    for (size_t i = 0; i < cloud.class_table.size(); ++i)
        out << (i ? "," : "") << cloud.class_table[i];
    out << '\n';
    out.precision(std::numeric_limits<double>::max_digits10);
    for (size_t i = 0; i < cloud.size(); ++i) {
        out << cloud.coords[i][0] << ' ' << cloud.coords[i][1] << ' ' << cloud.coords[i][2] << ' '
            << cloud.colors[i][0] << ' ' << cloud.colors[i][1] << ' ' << cloud.colors[i][2] << ' '
            << cloud.labels[i] << '\n';
    }
    if (!out) throw std::runtime_error("write failed for " + path.string());
}

}  // namespace dpfa
