#include "dpfa/synthetic.hpp"

#include <cmath>
#include <numbers>

namespace dpfa {

namespace {

constexpr int32_t kCeiling = 0;
constexpr int32_t kFloor = 1;
constexpr int32_t kWall = 2;

std::array<double, 3> noisy_color(std::array<double, 3> base, double sigma, Rng& rng) {
    std::array<double, 3> c;
    for (int i = 0; i < 3; ++i) c[i] = std::clamp(base[i] + sigma * rng.normal(), 0.0, 1.0);
    return c;
}

void emit(LabeledCloud& out, std::array<double, 3> p, std::array<double, 3> color, int32_t label) {
    out.coords.push_back(p);
    out.colors.push_back(color);
    out.labels.push_back(label);
}

// Uniform points on an axis-aligned rectangle; `fixed_axis` holds `level`.
void sample_plane(LabeledCloud& out, int fixed_axis, double level, std::array<double, 2> lo,
                  std::array<double, 2> hi, double density, int32_t label,
                  std::array<double, 3> color, double sigma, Rng& rng) {
    const double area = (hi[0] - lo[0]) * (hi[1] - lo[1]);
    const int64_t count = std::llround(density * area);
    for (int64_t i = 0; i < count; ++i) {
        const double u = rng.uniform(lo[0], hi[0]);
        const double v = rng.uniform(lo[1], hi[1]);
        std::array<double, 3> p;
        p[static_cast<size_t>(fixed_axis)] = level;
        p[static_cast<size_t>((fixed_axis + 1) % 3)] = u;
        p[static_cast<size_t>((fixed_axis + 2) % 3)] = v;
        emit(out, p, noisy_color(color, sigma, rng), label);
    }
}

struct ObjectClass {
    int32_t label;
    bool is_box;
    // half-extent / radius and height ranges, meters
    double min_a, max_a;
    double min_h, max_h;
    bool full_height;  // columns span floor to ceiling
};

// Foreground classes 3..7 of the fixed table; sizes chosen so objects read
// as plausible desk-scale furniture.
const std::vector<ObjectClass>& object_classes() {
    static const std::vector<ObjectClass> kinds = {
        {3, true, 0.30, 0.55, 0.55, 0.80, false},   // table: wide and low
        {4, true, 0.20, 0.35, 1.20, 1.90, false},   // cabinet: tall box
        {5, true, 0.12, 0.25, 0.25, 0.55, false},   // crate: small box
        {6, false, 0.22, 0.35, 0.60, 1.00, false},  // barrel: thick cylinder
        {7, false, 0.06, 0.14, 0.0, 0.0, true},     // column: floor-to-ceiling cylinder
    };
    return kinds;
}

}  // namespace

const std::vector<std::string>& synthetic_class_table() {
    static const std::vector<std::string> names = {"ceiling", "floor",  "wall",   "table",
                                                   "cabinet", "crate",  "barrel", "column"};
    return names;
}

const std::vector<ClassAppearance>& synthetic_appearances() {
    static const std::vector<ClassAppearance> table = {
        {"ceiling", {0.88, 0.88, 0.86}}, {"floor", {0.45, 0.38, 0.30}},
        {"wall", {0.72, 0.70, 0.62}},    {"table", {0.55, 0.35, 0.18}},
        {"cabinet", {0.25, 0.32, 0.45}}, {"crate", {0.78, 0.55, 0.20}},
        {"barrel", {0.55, 0.12, 0.12}},  {"column", {0.58, 0.60, 0.62}},
    };
    return table;
}

SceneSpec SceneSpec::with_defaults() {
    SceneSpec s;
    s.appearances = synthetic_appearances();
    return s;
}

void sample_box_surfaces(std::array<double, 3> center, std::array<double, 3> half, double density,
                         int32_t label, std::array<double, 3> color, double sigma, Rng& rng,
                         LabeledCloud& out) {
    const double x0 = center[0] - half[0], x1 = center[0] + half[0];
    const double y0 = center[1] - half[1], y1 = center[1] + half[1];
    const double z0 = center[2] - half[2], z1 = center[2] + half[2];
    // top plus the four side faces; the bottom face sits on the floor
    sample_plane(out, 2, z1, {x0, y0}, {x1, y1}, density, label, color, sigma, rng);
    sample_plane(out, 0, x0, {y0, z0}, {y1, z1}, density, label, color, sigma, rng);
    sample_plane(out, 0, x1, {y0, z0}, {y1, z1}, density, label, color, sigma, rng);
    sample_plane(out, 1, y0, {z0, x0}, {z1, x1}, density, label, color, sigma, rng);
    sample_plane(out, 1, y1, {z0, x0}, {z1, x1}, density, label, color, sigma, rng);
}

void sample_cylinder_surfaces(std::array<double, 2> center_xy, double z0, double radius,
                              double height, bool cap_top, double density, int32_t label,
                              std::array<double, 3> color, double sigma, Rng& rng,
                              LabeledCloud& out) {
    const double lateral_area = 2.0 * std::numbers::pi * radius * height;
    const int64_t lateral = std::llround(density * lateral_area);
    for (int64_t i = 0; i < lateral; ++i) {
        const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
        const double z = rng.uniform(z0, z0 + height);
        emit(out,
             {center_xy[0] + radius * std::cos(phi), center_xy[1] + radius * std::sin(phi), z},
             noisy_color(color, sigma, rng), label);
    }
    if (cap_top) {
        const double cap_area = std::numbers::pi * radius * radius;
        const int64_t cap = std::llround(density * cap_area);
        for (int64_t i = 0; i < cap; ++i) {
            // uniform over the disk
            const double r = radius * std::sqrt(rng.uniform());
            const double phi = rng.uniform(0.0, 2.0 * std::numbers::pi);
            emit(out,
                 {center_xy[0] + r * std::cos(phi), center_xy[1] + r * std::sin(phi), z0 + height},
                 noisy_color(color, sigma, rng), label);
        }
    }
}

LabeledCloud synthesize_scene(const SceneSpec& spec) {
    if (spec.room_w <= 0.0 || spec.room_l <= 0.0 || spec.room_h <= 0.0)
        throw std::invalid_argument("synthesize_scene: room extents must be positive");
    if (spec.boxes < 0 || spec.cylinders < 0)
        throw std::invalid_argument("synthesize_scene: object counts must be non-negative");

    const auto& appearances = spec.appearances.empty() ? synthetic_appearances() : spec.appearances;
    if (appearances.size() != synthetic_class_table().size())
        throw std::invalid_argument("synthesize_scene: appearance table must list all classes");

    Rng rng(spec.seed);
    LabeledCloud cloud;
    for (const auto& a : appearances) cloud.class_table.push_back(a.name);

    const double w = spec.room_w, l = spec.room_l, h = spec.room_h;
    const double bg = spec.background_density;
    const double sigma = spec.color_noise;

    sample_plane(cloud, 2, h, {0, 0}, {w, l}, bg, kCeiling, appearances[kCeiling].color, sigma, rng);
    sample_plane(cloud, 2, 0, {0, 0}, {w, l}, bg, kFloor, appearances[kFloor].color, sigma, rng);
    sample_plane(cloud, 0, 0, {0, 0}, {l, h}, bg, kWall, appearances[kWall].color, sigma, rng);
    sample_plane(cloud, 0, w, {0, 0}, {l, h}, bg, kWall, appearances[kWall].color, sigma, rng);
    sample_plane(cloud, 1, 0, {0, 0}, {h, w}, bg, kWall, appearances[kWall].color, sigma, rng);
    sample_plane(cloud, 1, l, {0, 0}, {h, w}, bg, kWall, appearances[kWall].color, sigma, rng);

    std::vector<const ObjectClass*> box_kinds, cyl_kinds;
    for (const auto& k : object_classes()) (k.is_box ? box_kinds : cyl_kinds).push_back(&k);

    auto place = [&](const ObjectClass& kind) {
        const double a = rng.uniform(kind.min_a, kind.max_a);
        const double height = kind.full_height ? h : rng.uniform(kind.min_h, kind.max_h);
        const double margin = a + 0.05;
        if (2.0 * margin >= w || 2.0 * margin >= l) return;  // object cannot fit; skip
        const double cx = rng.uniform(margin, w - margin);
        const double cy = rng.uniform(margin, l - margin);
        const auto color = appearances[static_cast<size_t>(kind.label)].color;
        if (kind.is_box) {
            sample_box_surfaces({cx, cy, height / 2.0}, {a, rng.uniform(kind.min_a, kind.max_a), height / 2.0},
                                spec.foreground_density, kind.label, color, sigma, rng, cloud);
        } else {
            sample_cylinder_surfaces({cx, cy}, 0.0, a, height, !kind.full_height,
                                     spec.foreground_density, kind.label, color, sigma, rng, cloud);
        }
    };

    for (int i = 0; i < spec.boxes; ++i)
        place(*box_kinds[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(box_kinds.size())))]);
    for (int i = 0; i < spec.cylinders; ++i)
        place(*cyl_kinds[static_cast<size_t>(rng.uniform_int(static_cast<int64_t>(cyl_kinds.size())))]);

    return cloud;
}

}  // namespace dpfa
