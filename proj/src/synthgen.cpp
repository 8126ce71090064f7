// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/synthgen.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <sstream>

#include "splatterlab/image_io.hpp"
#include "splatterlab/random.hpp"

namespace splatterlab {

namespace {

constexpr double kDegToRad = std::numbers::pi / 180.0;

Vec3 cap_direction(Rng &rng, const Vec3 &axis, double cap_rad) {
    const double cos_t = 1.0 - rng.uniform() * (1.0 - std::cos(cap_rad));
    const double sin_t = std::sqrt(std::max(0.0, 1.0 - cos_t * cos_t));
    const double phi = 2.0 * std::numbers::pi * rng.uniform();
    const Vec3 helper = std::abs(axis.x()) < 0.9 ? Vec3::UnitX() : Vec3::UnitY();
    const Vec3 b1 = axis.cross(helper).normalized();
    const Vec3 b2 = axis.cross(b1);
    return (cos_t * axis + sin_t * (std::cos(phi) * b1 + std::sin(phi) * b2)).normalized();
}

double lattice(int ix, int iy, int iz, std::uint64_t seed) {
    const std::uint64_t h = mix_seed(seed, static_cast<std::uint64_t>(static_cast<std::uint32_t>(ix)) |
                                                (static_cast<std::uint64_t>(static_cast<std::uint32_t>(iy)) << 32),
                                     static_cast<std::uint32_t>(iz));
    return static_cast<double>(h >> 11) * 0x1.0p-53;
}

double smooth(double t) { return t * t * (3.0 - 2.0 * t); }

double noise_octave(const Vec3 &p, std::uint64_t seed) {
    const double fx = std::floor(p.x()), fy = std::floor(p.y()), fz = std::floor(p.z());
    const int ix = static_cast<int>(fx), iy = static_cast<int>(fy), iz = static_cast<int>(fz);
    const double tx = smooth(p.x() - fx), ty = smooth(p.y() - fy), tz = smooth(p.z() - fz);
    double acc = 0.0;
    for (int dz = 0; dz <= 1; ++dz)
        for (int dy = 0; dy <= 1; ++dy)
            for (int dx = 0; dx <= 1; ++dx) {
                const double w = (dx ? tx : 1 - tx) * (dy ? ty : 1 - ty) * (dz ? tz : 1 - tz);
                acc += w * lattice(ix + dx, iy + dy, iz + dz, seed);
            }
    return acc;
}

Camera make_camera(const Vec3 &eye, const Mat3 &rotation, int width, int height, double focal) {
    Camera cam;
    cam.rotation = rotation;
    cam.center = eye;
    cam.focal = focal;
    cam.principal_point = Vec2(width / 2.0, height / 2.0);
    cam.width = width;
    cam.height = height;
    return cam;
}

double focal_for_fov(int extent, double fov_deg) { return (extent / 2.0) / std::tan(fov_deg * kDegToRad / 2.0); }

std::vector<Camera> cap_cameras(Rng &rng, const Vec3 &head, const Vec3 &axis, int count, const DatasetConfig &cfg) {
    std::vector<Camera> cams;
    const double f = focal_for_fov(cfg.supervision_width, cfg.supervision_fov_deg);
    for (int v = 0; v < count; ++v) {
        const Vec3 dir = cap_direction(rng, axis, cfg.cap_angle_deg * kDegToRad);
        const Vec3 eye = head + cfg.supervision_distance * dir;
        cams.push_back(make_camera(eye, look_at_rotation(eye, head), cfg.supervision_width, cfg.supervision_height, f));
    }
    return cams;
}

double quantize8(double v) { return std::round(std::clamp(v, 0.0, 1.0) * 255.0) / 255.0; }

View make_view(const ProceduralScene &scene, const Camera &cam) {
    TraceResult tr = raytrace_view(scene, cam);
    View v;
    v.camera = cam;
    for (double &x : tr.rgba.data) x = quantize8(x);
    for (double &x : tr.depth.data) x = static_cast<float>(x);
    v.rgba = std::move(tr.rgba);
    v.depth = std::move(tr.depth);
    v.mask = Image(cam.width, cam.height, 1);
    for (std::size_t p = 0; p < v.mask.pixel_count(); ++p) v.mask.data[p] = v.rgba.data[p * 4 + 3] > 0.5 ? 1.0 : 0.0;
    return v;
}

nlohmann::json vec_json(const Vec3 &v) { return {v.x(), v.y(), v.z()}; }
Vec3 vec_from_json(const nlohmann::json &j) {
    const auto a = j.get<std::vector<double>>();
    if (a.size() != 3) throw Error(ErrorCode::InvalidArgument, "expected a 3-vector");
    return Vec3(a[0], a[1], a[2]);
}

void write_view(const std::filesystem::path &dir, const std::string &prefix, const View &v) {
    write_png(dir / (prefix + ".png"), v.rgba);
    write_pfm(dir / (prefix + "_depth.pfm"), v.depth);
    write_png(dir / (prefix + "_mask.png"), v.mask);
}

View read_view(const std::filesystem::path &dir, const std::string &prefix, const Camera &cam) {
    View v;
    v.camera = cam;
    v.rgba = read_png(dir / (prefix + ".png"));
    v.depth = read_pfm(dir / (prefix + "_depth.pfm"));
    v.mask = read_png(dir / (prefix + "_mask.png")).slice_channels(0, 1);
    if (v.rgba.width != cam.width || v.rgba.height != cam.height || !v.depth.same_size(v.rgba) ||
        !v.mask.same_size(v.rgba)) {
        throw Error(ErrorCode::ShapeMismatch, "view '" + prefix + "' does not match its camera");
    }
    return v;
}

void write_json(const std::filesystem::path &path, const nlohmann::json &j) {
    std::ofstream os(path);
    if (!os) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    os << std::setw(2) << j << "\n";
}

nlohmann::json read_json(const std::filesystem::path &path) {
    std::ifstream is(path);
    if (!is) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(is);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
    }
}

double angle_between(const Vec3 &a, const Vec3 &b) {
    return std::atan2(a.cross(b).norm(), a.dot(b));
}

} // namespace

double ProceduralScene::bounding_radius() const {
    double r = 0.0;
    for (const auto &e : primitives) r = std::max(r, (e.center - head().center).norm() + e.semi_axes.maxCoeff());
    return r;
}

Mat3 look_at_rotation(const Vec3 &eye, const Vec3 &target) {
    const Vec3 z = (target - eye).normalized();
    const Vec3 down(0.0, 1.0, 0.0);
    const Vec3 x = down.cross(z).normalized();
    const Vec3 y = z.cross(x);
    Mat3 r;
    r.col(0) = x;
    r.col(1) = y;
    r.col(2) = z;
    return r;
}

ProceduralScene build_scene(std::uint64_t seed) {
    Rng rng(mix_seed(seed, 0x5ce7e));
    ProceduralScene scene;
    scene.seed = seed;

    Ellipsoid head;
    head.semi_axes = Vec3(rng.uniform(0.09, 0.11), rng.uniform(0.09, 0.11), rng.uniform(0.09, 0.11));
    head.albedo = Vec3(rng.uniform(0.55, 0.85), rng.uniform(0.4, 0.65), rng.uniform(0.3, 0.55));
    head.texture_seed = mix_seed(seed, 1);
    head.texture_frequency = rng.uniform(15.0, 25.0);
    scene.primitives.push_back(head);

    const int features = rng.integer(2, 5);
    for (int f = 0; f < features; ++f) {
        // Attach on the front half so the features show up in the input view.
        const Vec3 dir = cap_direction(rng, ProceduralScene::head_forward(), 95.0 * kDegToRad);
        const Vec3 scaled(dir.x() / head.semi_axes.x(), dir.y() / head.semi_axes.y(), dir.z() / head.semi_axes.z());
        const double t = 1.0 / scaled.norm();
        Ellipsoid e;
        e.center = head.center + 0.92 * t * dir;
        e.semi_axes = Vec3(rng.uniform(0.015, 0.035), rng.uniform(0.015, 0.035), rng.uniform(0.015, 0.035));
        e.rotation = Eigen::AngleAxisd(rng.uniform(0.0, std::numbers::pi), dir).toRotationMatrix();
        e.albedo = Vec3(rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9), rng.uniform(0.1, 0.9));
        e.texture_seed = mix_seed(seed, 2 + f);
        e.texture_frequency = rng.uniform(30.0, 60.0);
        scene.primitives.push_back(e);
    }
    scene.light_dir = Vec3(rng.uniform(-0.6, 0.6), rng.uniform(-0.8, -0.2), -1.0).normalized();
    return scene;
}

double value_noise(const Vec3 &p, std::uint64_t seed) {
    double acc = 0.0, amp = 1.0, norm = 0.0, freq = 1.0;
    for (int octave = 0; octave < 3; ++octave) {
        acc += amp * noise_octave(p * freq, mix_seed(seed, octave));
        norm += amp;
        amp *= 0.5;
        freq *= 2.0;
    }
    return acc / norm;
}

Vec3 shade_albedo(const Ellipsoid &e, const Vec3 &p_world) {
    const double n = value_noise((p_world - e.center) * e.texture_frequency, e.texture_seed);
    return e.albedo * (0.5 + 0.8 * (n - 0.5));
}

double intersect_ellipsoid(const Ellipsoid &e, const Vec3 &origin, const Vec3 &dir) {
    const Vec3 inv_axes = e.semi_axes.cwiseInverse();
    const Vec3 o = (e.rotation.transpose() * (origin - e.center)).cwiseProduct(inv_axes);
    const Vec3 d = (e.rotation.transpose() * dir).cwiseProduct(inv_axes);
    const double a = d.squaredNorm(), b = o.dot(d), c = o.squaredNorm() - 1.0;
    const double disc = b * b - a * c;
    if (disc < 0.0) return -1.0;
    const double sq = std::sqrt(disc);
    const double t0 = (-b - sq) / a;
    if (t0 > 1e-9) return t0;
    const double t1 = (-b + sq) / a;
    return t1 > 1e-9 ? t1 : -1.0;
}

TraceResult raytrace_view(const ProceduralScene &scene, const Camera &cam) {
    TraceResult out{Image(cam.width, cam.height, 4), Image(cam.width, cam.height, 1)};
    const Vec3 forward = cam.rotation.col(2);

    struct Hit {
        bool hit = false;
        double depth = 0.0;
        Vec3 color = Vec3::Zero();
    };
    auto trace = [&](const Vec2 &pixel) {
        const Vec3 dir = camera_ray(cam, pixel);
        Hit h;
        double best = std::numeric_limits<double>::infinity();
        int best_idx = -1;
        for (std::size_t i = 0; i < scene.primitives.size(); ++i) {
            const double t = intersect_ellipsoid(scene.primitives[i], cam.center, dir);
            if (t > 0.0 && t < best) {
                best = t;
                best_idx = static_cast<int>(i);
            }
        }
        if (best_idx < 0) return h;
        const Ellipsoid &e = scene.primitives[best_idx];
        const Vec3 p = cam.center + best * dir;
        const Vec3 local = e.rotation.transpose() * (p - e.center);
        const Vec3 n = (e.rotation * local.cwiseQuotient(e.semi_axes.cwiseProduct(e.semi_axes))).normalized();
        const double lambert = std::max(0.0, n.dot(scene.light_dir));
        h.hit = true;
        h.depth = best * dir.dot(forward);
        h.color = (shade_albedo(e, p) * (scene.ambient + scene.diffuse * lambert)).cwiseMin(1.0).cwiseMax(0.0);
        return h;
    };

#pragma omp parallel for schedule(static)
    for (int y = 0; y < cam.height; ++y) {
        for (int x = 0; x < cam.width; ++x) {
            Vec3 color = Vec3::Zero();
            int hits = 0;
            double sub_depth = 0.0;
            for (int sy = 0; sy < 2; ++sy)
                for (int sx = 0; sx < 2; ++sx) {
                    const Hit h = trace(Vec2(x + 0.25 + 0.5 * sx, y + 0.25 + 0.5 * sy));
                    if (!h.hit) continue;
                    ++hits;
                    color += h.color;
                    sub_depth += h.depth;
                }
            for (int c = 0; c < 3; ++c) out.rgba.at(x, y, c) = color[c] / 4.0;
            out.rgba.at(x, y, 3) = hits / 4.0;
            if (hits == 4) {
                const Hit center = trace(Vec2(x + 0.5, y + 0.5));
                out.depth.at(x, y) = center.hit ? center.depth : sub_depth / 4.0;
            }
        }
    }
    return out;
}

void DatasetConfig::validate() const {
    if (sample_count < 1 || input_width < 1 || input_height < 1 || supervision_width < 1 || supervision_height < 1)
        throw Error(ErrorCode::InvalidArgument, "dataset sizes must be positive");
    if (!(min_distance > 0.0) || !(max_distance >= min_distance) || !(supervision_distance > 0.0))
        throw Error(ErrorCode::InvalidArgument, "distances must be positive and ordered");
    if (!(cap_angle_deg > 0.0 && cap_angle_deg <= 90.0))
        throw Error(ErrorCode::InvalidArgument, "cap angle must lie in (0, 90] degrees");
    if (!(max_face_angle_deg >= 0.0 && max_face_angle_deg < 90.0))
        throw Error(ErrorCode::InvalidArgument, "face angle must lie in [0, 90) degrees");
    if (supervision_views < 1 || heldout_views < 0)
        throw Error(ErrorCode::InvalidArgument, "view counts must be positive");
}

nlohmann::json dataset_config_to_json(const DatasetConfig &c) {
    return {{"sample_count", c.sample_count},
            {"input_width", c.input_width},
            {"input_height", c.input_height},
            {"supervision_width", c.supervision_width},
            {"supervision_height", c.supervision_height},
            {"min_distance", c.min_distance},
            {"max_distance", c.max_distance},
            {"cap_angle_deg", c.cap_angle_deg},
            {"max_face_angle_deg", c.max_face_angle_deg},
            {"supervision_distance", c.supervision_distance},
            {"input_hfov_deg", c.input_hfov_deg},
            {"supervision_fov_deg", c.supervision_fov_deg},
            {"supervision_views", c.supervision_views},
            {"heldout_views", c.heldout_views},
            {"seed", c.seed}};
}

DatasetConfig dataset_config_from_json(const nlohmann::json &j) {
    DatasetConfig c;
    for (auto it = j.begin(); it != j.end(); ++it) {
        const std::string &k = it.key();
        const auto &v = it.value();
        if (k == "sample_count") c.sample_count = v.get<int>();
        else if (k == "input_width") c.input_width = v.get<int>();
        else if (k == "input_height") c.input_height = v.get<int>();
        else if (k == "supervision_width") c.supervision_width = v.get<int>();
        else if (k == "supervision_height") c.supervision_height = v.get<int>();
        else if (k == "min_distance") c.min_distance = v.get<double>();
        else if (k == "max_distance") c.max_distance = v.get<double>();
        else if (k == "cap_angle_deg") c.cap_angle_deg = v.get<double>();
        else if (k == "max_face_angle_deg") c.max_face_angle_deg = v.get<double>();
        else if (k == "supervision_distance") c.supervision_distance = v.get<double>();
        else if (k == "input_hfov_deg") c.input_hfov_deg = v.get<double>();
        else if (k == "supervision_fov_deg") c.supervision_fov_deg = v.get<double>();
        else if (k == "supervision_views") c.supervision_views = v.get<int>();
        else if (k == "heldout_views") c.heldout_views = v.get<int>();
        else if (k == "seed") c.seed = v.get<std::uint64_t>();
        else throw Error(ErrorCode::InvalidArgument, "unknown dataset key '" + k + "'");
    }
    c.validate();
    return c;
}

FaceBox head_face_box(const ProceduralScene &scene, const Camera &cam, double margin) {
    const Ellipsoid &head = scene.head();
    double x0 = 1e300, x1 = -1e300, y0 = 1e300, y1 = -1e300;
    constexpr int kLat = 48, kLon = 96;
    for (int a = 0; a <= kLat; ++a) {
        const double theta = std::numbers::pi * a / kLat;
        for (int b = 0; b < kLon; ++b) {
            const double phi = 2.0 * std::numbers::pi * b / kLon;
            const Vec3 unit(std::sin(theta) * std::cos(phi), std::sin(theta) * std::sin(phi), std::cos(theta));
            const Vec3 p = head.center + head.rotation * unit.cwiseProduct(head.semi_axes);
            const Projection pr = camera_project(cam, p);
            x0 = std::min(x0, pr.pixel.x());
            x1 = std::max(x1, pr.pixel.x());
            y0 = std::min(y0, pr.pixel.y());
            y1 = std::max(y1, pr.pixel.y());
        }
    }
    return {Vec2(0.5 * (x0 + x1), 0.5 * (y0 + y1)), margin * std::max(x1 - x0, y1 - y0)};
}

SampleCameras sample_cameras(const ProceduralScene &scene, const DatasetConfig &cfg, std::uint64_t sample_seed) {
    Rng rng(mix_seed(cfg.seed, sample_seed, 0xCA3));
    const Vec3 head = scene.head().center;
    const double f_in = focal_for_fov(cfg.input_width, cfg.input_hfov_deg);

    SampleCameras out;
    bool placed = false;
    for (int attempt = 0; attempt < 1000 && !placed; ++attempt) {
        const Vec3 view_dir = cap_direction(rng, ProceduralScene::head_forward(), cfg.max_face_angle_deg * kDegToRad);
        const double dist = rng.uniform(cfg.min_distance, cfg.max_distance);
        const Vec2 target(rng.uniform(0.2, 0.8) * cfg.input_width, rng.uniform(0.2, 0.8) * cfg.input_height);
        const Vec3 eye = head + dist * view_dir;

        Camera cam = make_camera(eye, Mat3::Identity(), cfg.input_width, cfg.input_height, f_in);
        // Aim so the head center lands on `target`.
        const Vec3 r = camera_ray_local(cam, target);
        const Vec3 x = Vec3(0.0, 1.0, 0.0).cross(r).normalized();
        Mat3 m;
        m.col(0) = x;
        m.col(1) = r.cross(x);
        m.col(2) = r;
        cam.rotation = orthonormalize(look_at_rotation(eye, head) * m.transpose());

        FaceBox tight;
        try {
            tight = head_face_box(scene, cam, 1.0);
        } catch (const Error &e) {
            if (e.code() != ErrorCode::NonPositiveDepth) throw;
            continue; // part of the head is behind the camera
        }
        const double half = tight.size / 2.0;
        if (tight.center.x() - half < 0.0 || tight.center.x() + half > cfg.input_width ||
            tight.center.y() - half < 0.0 || tight.center.y() + half > cfg.input_height)
            continue;
        out.input = cam;
        placed = true;
    }
    if (!placed) throw Error(ErrorCode::RejectionExhausted, "no valid input camera after 1000 attempts");

    const Vec3 axis = (out.input.center - head).normalized();
    out.supervision = cap_cameras(rng, head, axis, cfg.supervision_views, cfg);
    out.heldout = cap_cameras(rng, head, axis, cfg.heldout_views, cfg);
    return out;
}

std::vector<Camera> orbit_cameras(const Vec3 &target, const Camera &reference, double distance,
                                  const std::vector<double> &angles_deg, int width, int height, double fov_deg) {
    const Vec3 dir = (reference.center - target).normalized();
    const Vec3 up = -reference.rotation.col(1);
    std::vector<Camera> cams;
    for (double a : angles_deg) {
        const Vec3 d = Eigen::AngleAxisd(a * kDegToRad, up) * dir;
        const Vec3 eye = target + distance * d;
        cams.push_back(make_camera(eye, look_at_rotation(eye, target), width, height, focal_for_fov(width, fov_deg)));
    }
    return cams;
}

MultiViewSample generate_sample(const DatasetConfig &cfg, int index) {
    cfg.validate();
    MultiViewSample s;
    std::ostringstream name;
    name << "sample_" << std::setw(4) << std::setfill('0') << index;
    s.name = name.str();
    s.scene_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(index), 0xA);
    s.sample_seed = mix_seed(cfg.seed, static_cast<std::uint64_t>(index), 0xB);
    const ProceduralScene scene = build_scene(s.scene_seed);
    s.head_center = scene.head().center;
    const SampleCameras cams = sample_cameras(scene, cfg, s.sample_seed);

    s.input = make_view(scene, cams.input);
    s.face_box = head_face_box(scene, cams.input, 1.2);
    for (const auto &c : cams.supervision) s.supervision.push_back(make_view(scene, c));
    for (const auto &c : cams.heldout) s.heldout.push_back(make_view(scene, c));
    Rng bg(mix_seed(s.sample_seed, 0xB6));
    s.background = Vec3(bg.uniform(), bg.uniform(), bg.uniform());
    return s;
}

void write_sample(const std::filesystem::path &dir, const MultiViewSample &s) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + dir.string());
    nlohmann::json cams;
    cams["input"] = camera_to_json(s.input.camera);
    cams["supervision"] = nlohmann::json::array();
    for (const auto &v : s.supervision) cams["supervision"].push_back(camera_to_json(v.camera));
    cams["heldout"] = nlohmann::json::array();
    for (const auto &v : s.heldout) cams["heldout"].push_back(camera_to_json(v.camera));
    cams["background"] = vec_json(s.background);
    cams["scene_seed"] = s.scene_seed;
    cams["sample_seed"] = s.sample_seed;
    cams["head_center"] = vec_json(s.head_center);
    cams["head_forward"] = vec_json(s.head_forward);
    write_json(dir / "cameras.json", cams);
    write_json(dir / "face_box.json", face_box_to_json(s.face_box));

    write_view(dir, "input", s.input);
    for (std::size_t k = 0; k < s.supervision.size(); ++k)
        write_view(dir, "view_" + std::to_string(k + 1), s.supervision[k]);
    for (std::size_t k = 0; k < s.heldout.size(); ++k)
        write_view(dir, "heldout_" + std::to_string(k + 1), s.heldout[k]);
}

MultiViewSample load_sample(const std::filesystem::path &dir) {
    const nlohmann::json cams = read_json(dir / "cameras.json");
    MultiViewSample s;
    s.name = dir.filename().string();
    try {
        s.input = read_view(dir, "input", camera_from_json(cams.at("input")));
        int k = 1;
        for (const auto &c : cams.at("supervision")) s.supervision.push_back(read_view(dir, "view_" + std::to_string(k++), camera_from_json(c)));
        k = 1;
        for (const auto &c : cams.at("heldout")) s.heldout.push_back(read_view(dir, "heldout_" + std::to_string(k++), camera_from_json(c)));
        s.background = vec_from_json(cams.at("background"));
        s.scene_seed = cams.at("scene_seed").get<std::uint64_t>();
        s.sample_seed = cams.at("sample_seed").get<std::uint64_t>();
        s.head_center = vec_from_json(cams.at("head_center"));
        s.head_forward = vec_from_json(cams.at("head_forward"));
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, (dir / "cameras.json").string() + ": " + e.what());
    }
    s.face_box = face_box_from_json(read_json(dir / "face_box.json"));
    return s;
}

void generate_dataset(const DatasetConfig &cfg, const std::filesystem::path &out_dir) {
    cfg.validate();
    std::error_code ec;
    std::filesystem::create_directories(out_dir, ec);
    if (ec) throw Error(ErrorCode::IoError, "cannot create " + out_dir.string());

    std::vector<std::string> names(cfg.sample_count);
    std::vector<std::string> errors(cfg.sample_count);
#pragma omp parallel for schedule(dynamic)
    for (int i = 0; i < cfg.sample_count; ++i) {
        try {
            const MultiViewSample s = generate_sample(cfg, i);
            write_sample(out_dir / s.name, s);
            names[i] = s.name;
        } catch (const std::exception &e) {
            errors[i] = e.what();
        }
    }
    for (const auto &e : errors)
        if (!e.empty()) throw Error(ErrorCode::IoError, e);

    nlohmann::json manifest;
    manifest["format"] = kDatasetFormat;
    manifest["config"] = dataset_config_to_json(cfg);
    manifest["seed"] = cfg.seed;
    manifest["samples"] = names;
    write_json(out_dir / "manifest.json", manifest);
}

ValidationReport validate_dataset(const std::filesystem::path &dir) {
    ValidationReport rep;
    auto fail = [&](const std::string &where, const std::string &what) { rep.violations.push_back(where + ": " + what); };

    nlohmann::json manifest;
    try {
        manifest = read_json(dir / "manifest.json");
    } catch (const Error &e) {
        fail("manifest", e.what());
        return rep;
    }
    if (manifest.value("format", std::string()) != kDatasetFormat) fail("manifest", "unexpected format version");
    DatasetConfig cfg;
    try {
        cfg = dataset_config_from_json(manifest.at("config"));
    } catch (const std::exception &e) {
        fail("manifest", std::string("bad config echo: ") + e.what());
        return rep;
    }
    const auto names = manifest.value("samples", std::vector<std::string>{});
    if (static_cast<int>(names.size()) != cfg.sample_count) fail("manifest", "sample count differs from config");

    constexpr double kEps = 1e-9;
    for (const auto &name : names) {
        MultiViewSample s;
        try {
            s = load_sample(dir / name);
        } catch (const std::exception &e) {
            fail(name, e.what());
            continue;
        }
        ++rep.samples_checked;
        if (s.view_count() != 1 + cfg.supervision_views) fail(name, "wrong number of supervision views");

        const Vec3 in_dir = s.input.camera.center - s.head_center;
        const double dist = in_dir.norm();
        if (dist < cfg.min_distance - kEps || dist > cfg.max_distance + kEps)
            fail(name, "input distance " + std::to_string(dist) + " out of range");
        const double face_angle = angle_between(s.head_forward, in_dir) / kDegToRad;
        if (face_angle > cfg.max_face_angle_deg + kEps) fail(name, "face angle " + std::to_string(face_angle));
        if (s.face_box.center.x() < 0 || s.face_box.center.x() > s.input.camera.width || s.face_box.center.y() < 0 ||
            s.face_box.center.y() > s.input.camera.height)
            fail(name, "face box center outside the input image");

        std::vector<const View *> all{&s.input};
        for (const auto &v : s.supervision) all.push_back(&v);
        for (const auto &v : s.heldout) all.push_back(&v);
        for (std::size_t vi = 0; vi < all.size(); ++vi) {
            const View &v = *all[vi];
            const std::string where = name + " view " + std::to_string(vi);
            if (vi > 0) {
                const Vec3 d = v.camera.center - s.head_center;
                const double cap = angle_between(in_dir, d) / kDegToRad;
                if (cap > cfg.cap_angle_deg + kEps) fail(where, "outside the spherical cap (" + std::to_string(cap) + " deg)");
                if (angle_between(v.camera.rotation.col(2), -d) > 1e-6) fail(where, "not aimed at the head center");
            }
            bool sees = false;
            for (std::size_t p = 0; p < v.mask.pixel_count(); ++p) {
                const double a = v.rgba.data[p * 4 + 3];
                const bool m = v.mask.data[p] > 0.5;
                if (m != (a > 0.5)) {
                    fail(where, "mask disagrees with alpha at pixel " + std::to_string(p));
                    break;
                }
                if ((v.depth.data[p] > 0.0) != (a == 1.0)) {
                    fail(where, "depth/alpha inconsistency at pixel " + std::to_string(p));
                    break;
                }
                sees = sees || a > 0.0;
            }
            if (!sees) fail(where, "camera sees no primitive");
        }
    }
    if (rep.samples_checked == 0) fail("dataset", "no samples");
    return rep;
}

} // namespace splatterlab
