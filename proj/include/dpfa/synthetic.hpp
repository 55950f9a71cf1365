#pragma once

#include "dpfa/data.hpp"
#include "dpfa/rng.hpp"

namespace dpfa {

// Class appearance: base color plus per-scene Gaussian noise.
struct ClassAppearance {
    std::string name;
    std::array<double, 3> color;
};

// Deterministic indoor scene: floor, ceiling and four walls as planar
// background surfaces, plus boxes and cylinders standing on the floor as
// foreground objects. Every quantity is drawn from the seed.
struct SceneSpec {
    uint64_t seed = 1;
    double room_w = 2.0;  // x extent, meters
    double room_l = 2.0;  // y extent
    double room_h = 2.5;  // z extent
    int boxes = 6;
    int cylinders = 4;
    double background_density = 350.0;  // points per m^2
    double foreground_density = 700.0;
    double color_noise = 0.05;
    std::vector<ClassAppearance> appearances;  // defaults to synthetic_class_table()

    static SceneSpec with_defaults();
};

// Fixed 8-class table: ids 0..2 are the background (ceiling, floor, wall).
const std::vector<std::string>& synthetic_class_table();
const std::vector<ClassAppearance>& synthetic_appearances();

LabeledCloud synthesize_scene(const SceneSpec& spec);

// Surface samplers used by the generator; exposed for building object-only
// test clouds. Counts follow llround(density * area) per surface.
void sample_box_surfaces(std::array<double, 3> center, std::array<double, 3> half_extents,
                         double density, int32_t label, std::array<double, 3> color,
                         double color_noise, Rng& rng, LabeledCloud& out);
void sample_cylinder_surfaces(std::array<double, 2> center_xy, double z0, double radius,
                              double height, bool cap_top, double density, int32_t label,
                              std::array<double, 3> color, double color_noise, Rng& rng,
                              LabeledCloud& out);

}  // namespace dpfa
