#pragma once

#include <iosfwd>

#include "dpfa/config.hpp"
#include "dpfa/synthetic.hpp"

namespace dpfa {

// Batch of synthetic scenes written as `<out>/<split>/scene_###.txt`.
// Room extents and object counts are drawn per scene from the base seed.
struct DatasetSpec {
    uint64_t seed = 1;
    int train_scenes = 40;
    int test_scenes = 10;
    double room_min = 2.0;
    double room_max = 2.6;
    double room_height = 2.5;
    int boxes_min = 4;
    int boxes_max = 8;
    int cylinders_min = 2;
    int cylinders_max = 5;
    double background_density = 350.0;
    double foreground_density = 700.0;
    double color_noise = 0.05;

    static DatasetSpec from_kv(const KeyValueFile& kv);
    static DatasetSpec from_file(const std::filesystem::path& path);
};

void generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                      std::ostream& log);

}  // namespace dpfa
