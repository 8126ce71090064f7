// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Procedural multi-view RGBA + depth data. Images come from an analytic
// ray-ellipsoid tracer that shares no code with the splat rasterizer.

#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "splatterlab/core.hpp"
#include "splatterlab/roi.hpp"

namespace splatterlab {

inline constexpr const char *kDatasetFormat = "splatterlab-ds/1";

struct Ellipsoid {
    Vec3 center = Vec3::Zero();
    Vec3 semi_axes = Vec3::Constant(0.1);
    Mat3 rotation = Mat3::Identity(); // world from local
    Vec3 albedo = Vec3::Constant(0.5);
    std::uint64_t texture_seed = 0;
    double texture_frequency = 20.0; // lattice cells per meter at the first octave
};

struct ProceduralScene {
    std::vector<Ellipsoid> primitives; // primitives[0] is the head
    double ambient = 0.3;
    double diffuse = 0.7;
    Vec3 light_dir = Vec3(0.0, 0.0, -1.0); // unit vector toward the light
    std::uint64_t seed = 0;

    const Ellipsoid &head() const { return primitives.front(); }
    // The face looks along -z; world "up" is -y.
    static Vec3 head_forward() { return Vec3(0.0, 0.0, -1.0); }
    double bounding_radius() const;
};

ProceduralScene build_scene(std::uint64_t seed);

// Three-octave value noise in [0, 1].
double value_noise(const Vec3 &p, std::uint64_t seed);

Vec3 shade_albedo(const Ellipsoid &e, const Vec3 &p_world);

struct TraceResult {
    Image rgba;  // premultiplied, 2x2 supersampled
    Image depth; // camera-frame z, zero unless all subsamples hit
};

TraceResult raytrace_view(const ProceduralScene &scene, const Camera &cam);

// Nearest positive ray parameter for a unit-direction ray, or a negative value on miss.
double intersect_ellipsoid(const Ellipsoid &e, const Vec3 &origin, const Vec3 &dir);

struct DatasetConfig {
    int sample_count = 4;
    int input_width = 96;
    int input_height = 64;
    int supervision_width = 64;
    int supervision_height = 64;
    double min_distance = 0.4;
    double max_distance = 1.0;
    double cap_angle_deg = 45.0;
    double max_face_angle_deg = 30.0;
    double supervision_distance = 0.35;
    double input_hfov_deg = 60.0;
    double supervision_fov_deg = 50.0;
    int supervision_views = 10;
    int heldout_views = 4;
    std::uint64_t seed = 0;

    void validate() const;
};

nlohmann::json dataset_config_to_json(const DatasetConfig &cfg);
DatasetConfig dataset_config_from_json(const nlohmann::json &j);

struct SampleCameras {
    Camera input;
    std::vector<Camera> supervision;
    std::vector<Camera> heldout;
};

// Throws RejectionExhausted when no valid input placement is found in 1000 tries.
SampleCameras sample_cameras(const ProceduralScene &scene, const DatasetConfig &cfg, std::uint64_t sample_seed);

// Projected bounding square of the head ellipsoid, enlarged by `margin`.
FaceBox head_face_box(const ProceduralScene &scene, const Camera &cam, double margin = 1.2);

// Cameras orbiting the head center at `distance`, in the horizontal plane of
// `reference`, at the given yaw angles relative to the reference direction.
std::vector<Camera> orbit_cameras(const Vec3 &target, const Camera &reference, double distance,
                                  const std::vector<double> &angles_deg, int width, int height, double fov_deg);

Mat3 look_at_rotation(const Vec3 &eye, const Vec3 &target);

struct View {
    Camera camera;
    Image rgba;  // 4 channels, 8-bit quantized, premultiplied
    Image depth; // 1 channel, f32 quantized
    Image mask;  // 1 channel, alpha > 0.5
};

struct MultiViewSample {
    std::string name;
    View input;
    FaceBox face_box;
    std::vector<View> supervision; // N_v - 1 views
    std::vector<View> heldout;
    Vec3 background = Vec3::Constant(0.5);
    std::uint64_t scene_seed = 0;
    std::uint64_t sample_seed = 0;
    Vec3 head_center = Vec3::Zero();
    Vec3 head_forward = ProceduralScene::head_forward();

    int view_count() const { return 1 + static_cast<int>(supervision.size()); }
};

MultiViewSample generate_sample(const DatasetConfig &cfg, int index);

void write_sample(const std::filesystem::path &dir, const MultiViewSample &s);
MultiViewSample load_sample(const std::filesystem::path &dir);

// Writes `sample_count` sample directories plus manifest.json.
void generate_dataset(const DatasetConfig &cfg, const std::filesystem::path &out_dir);

struct ValidationReport {
    int samples_checked = 0;
    std::vector<std::string> violations;
    bool ok() const { return violations.empty() && samples_checked > 0; }
};

// Checks the manifest, per-sample file completeness, camera protocol bounds,
// mask/alpha agreement and depth/alpha consistency.
ValidationReport validate_dataset(const std::filesystem::path &dir);

} // namespace splatterlab
