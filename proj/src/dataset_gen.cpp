#include "dpfa/dataset_gen.hpp"

#include <iomanip>
#include <ostream>
#include <sstream>

namespace dpfa {

namespace {

const std::vector<std::string>& dataset_spec_keys() {
    static const std::vector<std::string> keys = {
        "seed",          "train_scenes",       "test_scenes",        "room_min",
        "room_max",      "room_height",        "boxes_min",          "boxes_max",
        "cylinders_min", "cylinders_max",      "background_density", "foreground_density",
        "color_noise",
    };
    return keys;
}

}  // namespace

DatasetSpec DatasetSpec::from_kv(const KeyValueFile& kv) {
    kv.require_known(dataset_spec_keys());
    DatasetSpec s;
    s.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(s.seed)));
    s.train_scenes = static_cast<int>(kv.get_int("train_scenes", s.train_scenes));
    s.test_scenes = static_cast<int>(kv.get_int("test_scenes", s.test_scenes));
    s.room_min = kv.get_double("room_min", s.room_min);
    s.room_max = kv.get_double("room_max", s.room_max);
    s.room_height = kv.get_double("room_height", s.room_height);
    s.boxes_min = static_cast<int>(kv.get_int("boxes_min", s.boxes_min));
    s.boxes_max = static_cast<int>(kv.get_int("boxes_max", s.boxes_max));
    s.cylinders_min = static_cast<int>(kv.get_int("cylinders_min", s.cylinders_min));
    s.cylinders_max = static_cast<int>(kv.get_int("cylinders_max", s.cylinders_max));
    s.background_density = kv.get_double("background_density", s.background_density);
    s.foreground_density = kv.get_double("foreground_density", s.foreground_density);
    s.color_noise = kv.get_double("color_noise", s.color_noise);
    if (s.train_scenes < 0 || s.test_scenes < 0)
        throw std::runtime_error("dataset spec: scene counts must be non-negative");
    if (s.room_min <= 0 || s.room_max < s.room_min)
        throw std::runtime_error("dataset spec: want 0 < room_min <= room_max");
    if (s.boxes_max < s.boxes_min || s.cylinders_max < s.cylinders_min)
        throw std::runtime_error("dataset spec: object count ranges are inverted");
    return s;
}

DatasetSpec DatasetSpec::from_file(const std::filesystem::path& path) {
    return from_kv(KeyValueFile::parse_file(path));
}

void generate_dataset(const DatasetSpec& spec, const std::filesystem::path& out_dir,
                      std::ostream& log) {
    int scene_index = 0;
    for (const auto& [split, count] :
         {std::pair<const char*, int>{"train", spec.train_scenes}, {"test", spec.test_scenes}}) {
        const auto dir = out_dir / split;
        std::filesystem::create_directories(dir);
        for (int i = 0; i < count; ++i, ++scene_index) {
            Rng draw(Rng::mix(spec.seed, 0x7363656eULL + static_cast<uint64_t>(scene_index)));
            SceneSpec scene = SceneSpec::with_defaults();
            scene.seed = Rng::mix(spec.seed, 0x636c6f75ULL + static_cast<uint64_t>(scene_index));
            scene.room_w = draw.uniform(spec.room_min, spec.room_max);
            scene.room_l = draw.uniform(spec.room_min, spec.room_max);
            scene.room_h = spec.room_height;
            scene.boxes = spec.boxes_min +
                          static_cast<int>(draw.uniform_int(spec.boxes_max - spec.boxes_min + 1));
            scene.cylinders =
                spec.cylinders_min +
                static_cast<int>(draw.uniform_int(spec.cylinders_max - spec.cylinders_min + 1));
            scene.background_density = spec.background_density;
            scene.foreground_density = spec.foreground_density;
            scene.color_noise = spec.color_noise;

            const LabeledCloud cloud = synthesize_scene(scene);
            std::ostringstream name;
            name << "scene_" << std::setw(3) << std::setfill('0') << i << ".txt";
            save_cloud(cloud, dir / name.str());
            log << split << "/" << name.str() << ": " << cloud.size() << " points\n";
        }
    }
}

}  // namespace dpfa
