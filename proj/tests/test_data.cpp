#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <set>

#include "dpfa/data.hpp"
#include "dpfa/rng.hpp"
#include "dpfa/synthetic.hpp"

using dpfa::BlockOptions;
using dpfa::LabeledCloud;
using dpfa::SceneSpec;

namespace {

namespace fs = std::filesystem;

LabeledCloud uniform_room(double w, double l, int64_t count, uint64_t seed) {
    dpfa::Rng rng(seed);
    LabeledCloud cloud;
    cloud.class_table = {"a", "b"};
    for (int64_t i = 0; i < count; ++i) {
        cloud.coords.push_back({rng.uniform(0, w), rng.uniform(0, l), rng.uniform(0, 2.5)});
        cloud.colors.push_back({rng.uniform(), rng.uniform(), rng.uniform()});
        cloud.labels.push_back(static_cast<int32_t>(rng.uniform_int(2)));
    }
    return cloud;
}

fs::path temp_file(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "dpfa_data_tests";
    fs::create_directories(dir);
    return dir / name;
}

}  // namespace

TEST_CASE("a 2m x 1m room splits into two blocks") {
    const auto cloud = uniform_room(2.0, 1.0, 4000, 1);
    BlockOptions opts;
    opts.samples = 64;
    const auto blocks = dpfa::split_blocks(cloud, opts);
    CHECK(blocks.size() == 2);
    for (const auto& b : blocks) CHECK(b.n == 64);
}

TEST_CASE("large blocks sample distinct points, small ones sample with replacement") {
    const auto cloud = uniform_room(1.0, 1.0, 10000, 2);
    BlockOptions opts;
    opts.samples = 4096;
    const auto blocks = dpfa::split_blocks(cloud, opts);
    REQUIRE(blocks.size() == 1);
    std::set<std::array<double, 2>> seen;
    for (int64_t i = 0; i < blocks[0].n; ++i)
        seen.insert({blocks[0].feature(i, 0), blocks[0].feature(i, 1)});
    CHECK(seen.size() == 4096);  // without replacement: all sampled rows distinct

    // 50 source points resampled to 4096: every source point appears
    for (uint64_t seed : {3ULL, 4ULL, 5ULL}) {
        const auto tiny = uniform_room(1.0, 1.0, 50, seed);
        BlockOptions o2;
        o2.samples = 4096;
        o2.min_points = 32;
        o2.seed = seed;
        const auto blown = dpfa::split_blocks(tiny, o2);
        REQUIRE(blown.size() == 1);
        std::set<std::array<double, 2>> found;
        for (int64_t i = 0; i < blown[0].n; ++i)
            found.insert({blown[0].feature(i, 0), blown[0].feature(i, 1)});
        CHECK(found.size() == 50);
    }
}

TEST_CASE("blocks below min_points are skipped, empty cloud yields nothing") {
    auto cloud = uniform_room(1.0, 1.0, 10, 6);
    BlockOptions opts;
    opts.samples = 64;
    opts.min_points = 32;
    CHECK(dpfa::split_blocks(cloud, opts).empty());

    LabeledCloud empty;
    empty.class_table = {"a"};
    CHECK(dpfa::split_blocks(empty, opts).empty());
    CHECK(dpfa::assign_blocks(empty, 1.0).empty());
    CHECK_THROWS(dpfa::assign_blocks(cloud, 0.0));
}

TEST_CASE("normalized features stay in the unit cube and inside the footprint") {
    const auto cloud = uniform_room(3.3, 2.2, 30000, 7);
    BlockOptions opts;
    opts.samples = 256;
    const auto blocks = dpfa::split_blocks(cloud, opts);
    CHECK(blocks.size() >= 6);
    for (const auto& b : blocks) {
        for (int64_t i = 0; i < b.n; ++i) {
            CHECK(b.feature(i, 6) >= 0.0);
            CHECK(b.feature(i, 6) <= 1.0);
            CHECK(b.feature(i, 7) >= 0.0);
            CHECK(b.feature(i, 7) <= 1.0);
            CHECK(b.feature(i, 8) >= 0.0);
            CHECK(b.feature(i, 8) <= 1.0);
            CHECK(b.feature(i, 0) >= b.origin[0] - 1e-12);
            CHECK(b.feature(i, 0) <= b.origin[0] + opts.block_size + 1e-12);
            CHECK(b.feature(i, 1) >= b.origin[1] - 1e-12);
            CHECK(b.feature(i, 1) <= b.origin[1] + opts.block_size + 1e-12);
        }
    }
}

TEST_CASE("grid assignment covers every point exactly once") {
    const auto cloud = uniform_room(2.7, 1.9, 5000, 8);
    const auto cells = dpfa::assign_blocks(cloud, 1.0);
    std::vector<int> hit(cloud.size(), 0);
    for (const auto& cell : cells)
        for (int64_t idx : cell) ++hit[static_cast<size_t>(idx)];
    for (int h : hit) CHECK(h == 1);

    const auto pred = dpfa::prediction_blocks(cloud, 1.0);
    std::vector<int> covered(cloud.size(), 0);
    for (const auto& pb : pred) {
        CHECK(pb.block.n == static_cast<int64_t>(pb.sources.size()));
        for (int64_t idx : pb.sources) ++covered[static_cast<size_t>(idx)];
    }
    for (int h : covered) CHECK(h == 1);
}

TEST_CASE("cloud file round-trips exactly") {
    auto cloud = uniform_room(1.0, 1.0, 200, 9);
    cloud.coords[0] = {-1.25e-13, 3.33333333333333315, 1e17};
    const auto path = temp_file("roundtrip.txt");
    dpfa::save_cloud(cloud, path);
    const auto loaded = dpfa::load_cloud(path);
    CHECK(loaded.class_table == cloud.class_table);
    CHECK(loaded.coords == cloud.coords);
    CHECK(loaded.colors == cloud.colors);
    CHECK(loaded.labels == cloud.labels);
}

TEST_CASE("empty cloud with a valid header loads as empty") {
    const auto path = temp_file("empty.txt");
    std::ofstream(path) << "pointcloud v1 classes=x,y\n";
    const auto loaded = dpfa::load_cloud(path);
    CHECK(loaded.size() == 0);
    CHECK(loaded.class_table == std::vector<std::string>{"x", "y"});
}

TEST_CASE("malformed files fail with the line number") {
    const auto path = temp_file("bad_fields.txt");
    std::ofstream(path) << "pointcloud v1 classes=x\n0 0 0 1 1 1 0\n1 2 3 4 5 6\n";
    try {
        dpfa::load_cloud(path);
        FAIL("expected a parse error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find(":3") != std::string::npos);
    }

    const auto bad_label = temp_file("bad_label.txt");
    std::ofstream(bad_label) << "pointcloud v1 classes=x\n0 0 0 1 1 1 4\n";
    CHECK_THROWS(dpfa::load_cloud(bad_label));

    const auto bad_header = temp_file("bad_header.txt");
    std::ofstream(bad_header) << "cloud v2\n";
    CHECK_THROWS(dpfa::load_cloud(bad_header));

    const auto dup = temp_file("dup_class.txt");
    std::ofstream(dup) << "pointcloud v1 classes=x,x\n";
    CHECK_THROWS(dpfa::load_cloud(dup));

    const auto trailing = temp_file("trailing.txt");
    std::ofstream(trailing) << "pointcloud v1 classes=x\n0 0 0 1 1 1 0 9\n";
    CHECK_THROWS(dpfa::load_cloud(trailing));
}

TEST_CASE("scene synthesis is seed-deterministic") {
    SceneSpec spec = SceneSpec::with_defaults();
    spec.seed = 42;
    const auto a = dpfa::synthesize_scene(spec);
    const auto b = dpfa::synthesize_scene(spec);
    CHECK(a.coords == b.coords);
    CHECK(a.colors == b.colors);
    CHECK(a.labels == b.labels);

    spec.seed = 43;
    const auto c = dpfa::synthesize_scene(spec);
    CHECK(a.coords != c.coords);
}

TEST_CASE("scene without foreground holds only background labels") {
    SceneSpec spec = SceneSpec::with_defaults();
    spec.seed = 5;
    spec.boxes = 0;
    spec.cylinders = 0;
    const auto cloud = dpfa::synthesize_scene(spec);
    CHECK(cloud.size() > 1000);
    for (int32_t l : cloud.labels) CHECK(l <= 2);
}

TEST_CASE("background points sit on their generating planes") {
    SceneSpec spec = SceneSpec::with_defaults();
    spec.seed = 6;
    const auto cloud = dpfa::synthesize_scene(spec);
    const double w = spec.room_w, l = spec.room_l, h = spec.room_h;
    for (size_t i = 0; i < cloud.size(); ++i) {
        const auto& p = cloud.coords[i];
        if (cloud.labels[i] == 0) CHECK(std::abs(p[2] - h) < 1e-6);  // ceiling
        if (cloud.labels[i] == 1) CHECK(std::abs(p[2]) < 1e-6);      // floor
        if (cloud.labels[i] == 2) {                                  // one of the four walls
            const double d = std::min(std::min(std::abs(p[0]), std::abs(p[0] - w)),
                                      std::min(std::abs(p[1]), std::abs(p[1] - l)));
            CHECK(d < 1e-6);
        }
    }
}

TEST_CASE("per-surface point counts follow density times area") {
    SceneSpec spec = SceneSpec::with_defaults();
    spec.seed = 7;
    spec.boxes = 0;
    spec.cylinders = 0;
    spec.background_density = 123.0;
    const auto cloud = dpfa::synthesize_scene(spec);

    const double w = spec.room_w, l = spec.room_l, h = spec.room_h;
    auto count_on = [&](auto&& pred) {
        int64_t n = 0;
        for (size_t i = 0; i < cloud.size(); ++i)
            if (pred(cloud.coords[i])) ++n;
        return n;
    };
    const auto near = [](double a, double b) { return std::abs(a - b) < 1e-9; };
    CHECK(std::abs(count_on([&](const auto& p) { return near(p[2], h); }) -
                   std::llround(123.0 * w * l)) <= 1);
    CHECK(std::abs(count_on([&](const auto& p) { return near(p[2], 0.0); }) -
                   std::llround(123.0 * w * l)) <= 1);
    CHECK(std::abs(count_on([&](const auto& p) { return near(p[0], 0.0) && !near(p[2], 0) && !near(p[2], h); }) -
                   std::llround(123.0 * l * h)) <= 1);

    // a single box: per-face counts sum over five faces
    dpfa::LabeledCloud box;
    box.class_table = dpfa::synthetic_class_table();
    dpfa::Rng rng(1);
    dpfa::sample_box_surfaces({1.0, 1.0, 0.5}, {0.2, 0.3, 0.5}, 200.0, 5, {0.5, 0.5, 0.5}, 0.0,
                              rng, box);
    const int64_t expect = std::llround(200.0 * 0.4 * 0.6)        // top
                           + 2 * std::llround(200.0 * 0.6 * 1.0)  // x faces
                           + 2 * std::llround(200.0 * 1.0 * 0.4); // y faces
    CHECK(static_cast<int64_t>(box.size()) == expect);
}

TEST_CASE("degenerate scene specs are rejected") {
    SceneSpec spec = SceneSpec::with_defaults();
    spec.room_w = 0.0;
    CHECK_THROWS_AS(dpfa::synthesize_scene(spec), std::invalid_argument);
    spec.room_w = 2.0;
    spec.boxes = -1;
    CHECK_THROWS_AS(dpfa::synthesize_scene(spec), std::invalid_argument);
}
