// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

// Acceptance run: one PASS/FAIL line per criterion. Tolerances and budgets
// are fixed below; none of them are taken from the command line.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <iostream>
#include <map>
#include <numbers>
#include <set>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "splatterlab/eval.hpp"
#include "splatterlab/gradcheck.hpp"
#include "splatterlab/losses.hpp"
#include "splatterlab/parallel.hpp"
#include "splatterlab/rasterizer.hpp"
#include "splatterlab/roi.hpp"
#include "splatterlab/synthgen.hpp"
#include "splatterlab/training.hpp"
#include "support/reference.hpp"

using namespace splatterlab;
using namespace splatterlab::testing;
namespace fs = std::filesystem;

namespace {

// 1: gradient suite
constexpr int kGradCases = 100;
constexpr double kGradRelTol = 1e-3;
constexpr double kGradAbsTol = 1e-6;
constexpr double kGradSeconds = 300.0;
// 2: oracle equivalence
constexpr int kOracleScenes = 50;
constexpr int kOracleMaxGaussians = 32;
constexpr double kOracleTol = 1e-5;
// 3: scale correction
constexpr double kScaleTol = 1e-6;
// 4: homography
constexpr double kThirdTol = 1e-9;
constexpr double kRoundTripDb = 40.0;
constexpr int kRayPixels = 1000;
constexpr double kRayTolPx = 1e-6;
// 5: fit regression on the toy sample
constexpr int kToyIterations = 2000;
constexpr int kToyGrid = 64;
constexpr double kToyMinGainDb = 10.0;
constexpr double kToyMaxGapDb = 6.0;
constexpr double kToyPinTolDb = 0.1;
constexpr double kToySeconds = 600.0;
// Recorded on the first complete run (the held-out gap check did not pass).
constexpr double kPinnedInputPsnr = 35.201;
constexpr double kPinnedHeldoutPsnr = 19.551;
// 6, 7: ablations, equal budgets per arm
constexpr int kAblationSeeds = 10;
constexpr int kAblationIterations = 300;
constexpr int kAblationGrid = 32;
constexpr int kJitterMinWins = 7;
constexpr double kJitterMaxPsnrDropDb = 0.5;
// 8: loss closed forms
constexpr double kExact = 1e-12;
// 9: dataset protocol
constexpr int kProtocolSamples = 100;

struct Outcome {
    bool pass = false;
    std::string detail;
};

std::string fmt(const char *f, auto... args) {
    char buf[512];
    std::snprintf(buf, sizeof buf, f, args...);
    return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

Outcome gradient_suite() {
    GradcheckOptions opt;
    opt.cases = kGradCases;
    opt.rel_tol = kGradRelTol;
    opt.abs_tol = kGradAbsTol;
    const auto t0 = std::chrono::steady_clock::now();
    const std::vector<GradcheckReport> reps = run_gradcheck(opt);
    const double secs = seconds_since(t0);
    bool ok = secs <= kGradSeconds;
    std::string failed;
    double worst = 0.0;
    for (const auto &r : reps) {
        ok = ok && r.ok() && r.cases == kGradCases;
        if (!r.ok()) failed += " " + r.op;
        worst = std::max(worst, r.worst_rel);
    }
    return {ok, fmt("%zu ops x %d cases, worst rel %.2e, %.0fs%s%s", reps.size(), kGradCases, worst, secs,
                    failed.empty() ? "" : ", failing:", failed.c_str())};
}

Outcome oracle_equivalence() {
    Rng rng(0xacc2);
    double worst = 0.0;
    for (int n = 0; n < kOracleScenes; ++n) {
        const Camera cam = simple_camera(rng.integer(16, 48), rng.integer(16, 48), rng.uniform(20.0, 60.0));
        const std::vector<Gaussian3D> items = random_scene(rng, cam, kOracleMaxGaussians);
        const RenderOutput got = render(GaussianSet(items), cam);
        const ReferenceRender want = reference_render(items, cam);
        for (std::size_t i = 0; i < got.color.data.size(); ++i)
            worst = std::max(worst, std::abs(got.color.data[i] - want.color.data[i]));
        for (std::size_t i = 0; i < got.alpha.data.size(); ++i)
            worst = std::max(worst, std::abs(got.alpha.data[i] - want.alpha.data[i]));
    }
    return {worst <= kOracleTol, fmt("%d scenes, max channel error %.2e (tol %.0e)", kOracleScenes, worst, kOracleTol)};
}

Outcome scale_correction() {
    Rng rng(0xacc3);
    double worst_s = 0.0, worst_color = 0.0, worst_depth = 0.0;
    for (double s_star : {0.5, 0.9, 2.0}) {
        // synthetic depth field with a partial mask and some invalid depth
        const int w = 40, h = 30;
        Image gt(w, h, 1), pred(w, h, 1), alpha(w, h, 1, 1.0), mask(w, h, 1, 1.0);
        for (int y = 0; y < h; ++y)
            for (int x = 0; x < w; ++x) {
                gt.at(x, y) = 0.5 + 0.3 * std::sin(0.2 * x) * std::cos(0.15 * y) + 0.1 * rng.uniform();
                pred.at(x, y) = gt.at(x, y) / s_star;
                if ((x + y) % 7 == 0) mask.at(x, y) = 0.0;
                if ((x * y) % 11 == 3) alpha.at(x, y) = 0.2;
                if (x == y) {
                    gt.at(x, y) = 0.0;
                    pred.at(x, y) = 5.0;
                }
            }
        const ScaleCorrection corr = solve_scale(pred, alpha, gt, mask);
        worst_s = std::max(worst_s, std::abs(corr.s - s_star));

        const Camera cam = simple_camera(48, 40, 50.0);
        const std::vector<Gaussian3D> items = random_scene(rng, cam, 32);
        const GaussianSet gs(items);
        ScaleCorrection about_camera;
        about_camera.s = s_star;
        about_camera.pivot = cam.center;
        const RenderOutput a = render(gs, cam), b = render(apply_scale(gs, about_camera), cam);
        for (std::size_t i = 0; i < a.color.data.size(); ++i)
            worst_color = std::max(worst_color, std::abs(a.color.data[i] - b.color.data[i]));
        for (std::size_t p = 0; p < a.alpha.data.size(); ++p)
            if (a.alpha.data[p] > 0.0)
                worst_depth = std::max(worst_depth, std::abs(b.depth_norm.data[p] - s_star * a.depth_norm.data[p]));
    }
    const bool ok = worst_s <= kScaleTol && worst_color <= kScaleTol && worst_depth <= kScaleTol;
    return {ok, fmt("s* in {0.5, 0.9, 2.0}: |s - s*| %.1e, color change %.1e, depth_norm vs s*.depth %.1e", worst_s,
                    worst_color, worst_depth)};
}

Vec2 apply_h(const Mat3 &h, const Vec2 &p) {
    const Vec3 q = h * Vec3(p.x(), p.y(), 1.0);
    return q.head<2>() / q.z();
}

Outcome homography_properties() {
    Rng rng(0xacc4);
    Camera src = simple_camera(96, 64, 48.0 / std::tan(std::numbers::pi / 6));
    src.rotation = quat_to_matrix(Quat(0.98, 0.1, -0.15, 0.05).normalized());
    src.center = Vec3(0.1, -0.2, 0.3);
    auto random_box = [&] {
        return FaceBox{Vec2(rng.uniform(0.1, 0.9) * src.width, rng.uniform(0.1, 0.9) * src.height),
                       rng.uniform(5.0, 40.0)};
    };

    // third rule, with both angles measured from the cameras themselves
    double worst_third = 0.0;
    for (int n = 0; n < 200; ++n) {
        const FaceBox box = random_box();
        const RoiMapping m = build_roi_camera(src, box, 64);
        const double face = 2.0 * std::atan(box.size / (2.0 * src.focal));
        const double fov = 2.0 * std::atan(0.5 * m.cam_roi.width / m.cam_roi.focal);
        worst_third = std::max(worst_third, std::abs(face / fov - 1.0 / 3.0));
    }

    // round trip of a smooth image through the ROI and back
    Image pattern(96, 64, 3);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 96; ++x) {
            const double u = (x + 0.5) / 96, v = (y + 0.5) / 64;
            pattern.at(x, y, 0) = 0.5 + 0.4 * std::sin(2.0 * u + 1.0 * v);
            pattern.at(x, y, 1) = 0.5 + 0.4 * std::cos(1.5 * v - 0.7 * u);
            pattern.at(x, y, 2) = 0.3 + 0.5 * u * v;
        }
    const Camera flat = simple_camera(96, 64, 83.0);
    const RoiMapping rt = build_roi_camera(flat, {Vec2(50, 30), 40.0}, 64);
    const Mat3 inv = rt.homography.inverse();
    const Image back = warp_homography(warp_homography(pattern, rt.homography, 64, 64), inv, 96, 64);
    Image mask(96, 64, 1);
    for (int y = 0; y < 64; ++y)
        for (int x = 0; x < 96; ++x) {
            const Vec2 u = apply_h(inv, Vec2(x + 0.5, y + 0.5));
            if (!(u.x() > 1.5 && u.y() > 1.5 && u.x() < 62.5 && u.y() < 62.5)) continue;
            bool inside = true;
            for (double dy : {-1.0, 1.0})
                for (double dx : {-1.0, 1.0}) {
                    const Vec2 q = apply_h(rt.homography, u + Vec2(dx, dy));
                    inside = inside && q.x() > 1.0 && q.y() > 1.0 && q.x() < 95.0 && q.y() < 63.0;
                }
            if (inside) mask.at(x, y) = 1.0;
        }
    const double round_trip = psnr(back, pattern, &mask);

    // homography against explicit ray casting
    double worst_px = 0.0;
    int checked = 0;
    while (checked < kRayPixels) {
        const RoiMapping m = build_roi_camera(src, random_box(), 64);
        const Vec2 u(rng.uniform(0, 64), rng.uniform(0, 64));
        const Vec3 dir = camera_ray(m.cam_roi, u);
        if (src.to_camera(src.center + dir).z() <= 1e-3) continue;
        const Vec2 want = camera_project(src, src.center + dir).pixel;
        worst_px = std::max(worst_px, (apply_h(m.homography, u) - want).norm());
        ++checked;
    }
    const bool ok = worst_third <= kThirdTol && round_trip >= kRoundTripDb && worst_px <= kRayTolPx;
    return {ok, fmt("third rule err %.1e, round trip %.1f dB, rays vs homography %.1e px over %d pixels",
                    worst_third, round_trip, worst_px, kRayPixels)};
}

Outcome fit_regression(const fs::path &work) {
    // the shipped toy sample is generated on demand: dataset seed 0, first sample
    DatasetConfig dcfg;
    dcfg.sample_count = 1;
    dcfg.seed = 0;
    const fs::path data = work / "toy";
    generate_dataset(dcfg, data);
    const MultiViewSample sample = load_sample(data / "sample_0000");

    FitConfig cfg;
    cfg.iterations = kToyIterations;
    cfg.grid_size = kToyGrid;
    cfg.layers = 2;
    cfg.weights.lambda_j = 0.0;
    cfg.jitter_pairing = false;
    cfg.perturbation = 0.0;

    const MetricsReport before = evaluate_fit(initial_grid(sample, cfg), sample, cfg);
    const auto t0 = std::chrono::steady_clock::now();
    const FitResult res = fit(sample, cfg);
    const double secs = seconds_since(t0);
    const MetricsReport after = evaluate_fit(res.grid, sample, cfg);

    const double gain = after.input_psnr - before.input_psnr;
    const double gap = after.input_psnr - after.mean_heldout_psnr;
    const bool pinned = !std::isnan(kPinnedInputPsnr) && !std::isnan(kPinnedHeldoutPsnr);
    const bool match = pinned && std::abs(after.input_psnr - kPinnedInputPsnr) <= kToyPinTolDb &&
                       std::abs(after.mean_heldout_psnr - kPinnedHeldoutPsnr) <= kToyPinTolDb;
    const bool ok = gain >= kToyMinGainDb && gap <= kToyMaxGapDb && match && secs <= kToySeconds;
    return {ok, fmt("input %.3f dB (init %.3f, gain %.2f), held-out %.3f dB (gap %.2f), pins %s, fit %.0fs on %d "
                    "threads",
                    after.input_psnr, before.input_psnr, gain, after.mean_heldout_psnr, gap,
                    !pinned ? "unset" : (match ? "match" : "MISMATCH"), secs, worker_count())};
}

// Fits shared by the two ablation criteria.
class AblationRuns {
public:
    struct Arm {
        int layers;
        double lambda_j;
        bool operator<(const Arm &o) const { return std::tie(layers, lambda_j) < std::tie(o.layers, o.lambda_j); }
    };

    const std::vector<MetricsReport> &get(const Arm &arm) {
        auto it = cache_.find(arm);
        if (it != cache_.end()) return it->second;
        std::vector<MetricsReport> out;
        for (int i = 0; i < kAblationSeeds; ++i) {
            const MultiViewSample &s = sample(i);
            FitConfig cfg;
            cfg.iterations = kAblationIterations;
            cfg.grid_size = kAblationGrid;
            cfg.layers = arm.layers;
            cfg.seed = static_cast<std::uint64_t>(i);
            cfg.weights.lambda_j = arm.lambda_j;
            // with lambda_j = 0 the twin contributes nothing, so it is not rendered
            cfg.jitter_pairing = arm.lambda_j > 0.0;
            const FitResult res = fit(s, cfg);
            out.push_back(evaluate_fit(res.grid, s, cfg));
        }
        return cache_.emplace(arm, std::move(out)).first->second;
    }

private:
    const MultiViewSample &sample(int i) {
        while (static_cast<int>(samples_.size()) <= i)
            samples_.push_back(generate_sample(DatasetConfig{}, static_cast<int>(samples_.size())));
        return samples_[i];
    }
    std::vector<MultiViewSample> samples_;
    std::map<Arm, std::vector<MetricsReport>> cache_;
};

double mean_of(const std::vector<MetricsReport> &v, double MetricsReport::*field) {
    double sum = 0.0;
    for (const auto &r : v) sum += r.*field;
    return sum / v.size();
}

Outcome multi_layer_benefit(AblationRuns &runs) {
    const auto &k1 = runs.get({1, 0.0});
    const auto &k2 = runs.get({2, 0.0});
    const double m1 = mean_of(k1, &MetricsReport::mean_heldout_psnr);
    const double m2 = mean_of(k2, &MetricsReport::mean_heldout_psnr);
    return {m2 >= m1, fmt("mean held-out PSNR K=2 %.3f dB vs K=1 %.3f dB over %d seeds, %d iterations each", m2, m1,
                          kAblationSeeds, kAblationIterations)};
}

Outcome jitter_direction(AblationRuns &runs) {
    const auto &off = runs.get({2, 0.0});
    const auto &on = runs.get({2, 1.0});
    int wins = 0;
    for (int i = 0; i < kAblationSeeds; ++i) wins += on[i].jitter < off[i].jitter;
    const double j_on = mean_of(on, &MetricsReport::jitter), j_off = mean_of(off, &MetricsReport::jitter);
    const double drop = mean_of(off, &MetricsReport::input_psnr) - mean_of(on, &MetricsReport::input_psnr);
    const bool ok = j_on < j_off && wins >= kJitterMinWins && drop <= kJitterMaxPsnrDropDb;
    return {ok, fmt("mean jitter %.5f (lambda_j=1) vs %.5f (lambda_j=0), wins %d/%d, input PSNR drop %.3f dB", j_on,
                    j_off, wins, kAblationSeeds, drop)};
}

Outcome loss_closed_forms() {
    std::vector<std::string> failed;
    auto check = [&](const std::string &name, double got, double want) {
        if (!(std::abs(got - want) <= kExact)) failed.push_back(name + fmt("=%.17g", got));
    };
    Rng rng(0xacc8);

    const Image x = random_image(rng, 12, 9, 3), y = random_image(rng, 12, 9, 3);
    check("L_e(X,X)", loss_euclidean_rgb(x, x).value, 0.0);
    Image shifted = x;
    for (std::size_t p = 0; p < shifted.pixel_count(); ++p) shifted.data[p * 3] += 1.0;
    check("L_e unit residual", loss_euclidean_rgb(shifted, x).value, 1.0);
    const Mat3 q = quat_to_matrix(Quat(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1)).normalized());
    Image qx = x, qy = y;
    for (std::size_t p = 0; p < x.pixel_count(); ++p) {
        const Vec3 mid = 0.5 * (Vec3(x.data[p * 3], x.data[p * 3 + 1], x.data[p * 3 + 2]) +
                                Vec3(y.data[p * 3], y.data[p * 3 + 1], y.data[p * 3 + 2]));
        for (Image *img : {&qx, &qy}) {
            const Vec3 v(img->data[p * 3], img->data[p * 3 + 1], img->data[p * 3 + 2]);
            const Vec3 r = mid + q * (v - mid);
            for (int c = 0; c < 3; ++c) img->data[p * 3 + c] = r[c];
        }
    }
    if (!(std::abs(loss_euclidean_rgb(qx, qy).value - loss_euclidean_rgb(x, y).value) <= 1e-9))
        failed.push_back("L_e rotation invariance");
    check("L_p(X,X)", loss_perceptual_surrogate(x, x).value, 0.0);

    check("L_m all zero", loss_opacity_mean({0.0, 0.0}, 50.0).value, 1.0);
    check("L_m one, tau 50", loss_opacity_mean({1.0}, 50.0).value, std::exp(-50.0));
    check("L_m (0,1)", loss_opacity_mean({0.0, 1.0}, 50.0).value, 0.5 * (1.0 + std::exp(-50.0)));
    check("L_sigma ones", loss_opacity_bias({1.0, 1.0}).value, 0.0);
    check("L_sigma zeros", loss_opacity_bias({0.0, 0.0}).value, 1.0);
    check("L_sigma (0.25,0.75)", loss_opacity_bias({0.25, 0.75}).value, 0.5);
    check("L_c(1)", loss_scale_reg(1.0).value, 0.0);
    check("L_c(e)", loss_scale_reg(std::numbers::e).value, 1.0);
    check("L_c(1/e)", loss_scale_reg(1.0 / std::numbers::e).value, 1.0);

    const Image a(5, 4, 3, 0.3);
    Image b = a;
    for (std::size_t p = 0; p < b.pixel_count(); ++p) b.data[p * 3 + 1] += 0.1;
    check("L_j identical", loss_jitter({a, a}, {a, a}).value, 0.0);
    check("L_j 0.1 on one channel", loss_jitter({a}, {b}).value, 0.01 / 3.0);

    const LossWeights w;
    check("total zero", total_loss(LossBreakdown{}, w).total, 0.0);
    LossBreakdown only_m;
    only_m.L_m = 1.0;
    check("total L_m=1", total_loss(only_m, w).total, 5.0);
    LossBreakdown only_sigma;
    only_sigma.L_sigma = 1.0;
    check("total L_sigma=1", total_loss(only_sigma, w).total, 1e-4);

    const Image rgba_half = [] {
        Image im(2, 2, 4);
        for (std::size_t p = 0; p < im.pixel_count(); ++p) {
            im.data[p * 4] = 0.5;
            im.data[p * 4 + 3] = 0.5;
        }
        return im;
    }();
    const Image comp = composite_over_background(rgba_half, Vec3(0, 0, 1));
    check("composite r", comp.data[0], 0.5);
    check("composite b", comp.data[2], 0.5);

    std::string detail = "24 examples";
    for (const auto &f : failed) detail += "; failed " + f;
    return {failed.empty(), detail};
}

Outcome dataset_protocol(const fs::path &work) {
    DatasetConfig cfg;
    cfg.sample_count = kProtocolSamples;
    cfg.seed = 0;
    const fs::path a = work / "protocol_a", b = work / "protocol_b";
    generate_dataset(cfg, a);
    const ValidationReport rep = validate_dataset(a);
    // training views: input plus the supervision set
    const int views = 1 + cfg.supervision_views;

    generate_dataset(cfg, b);
    int files = 0, differing = 0;
    for (const auto &e : fs::recursive_directory_iterator(a)) {
        if (!e.is_regular_file()) continue;
        const fs::path twin = b / fs::relative(e.path(), a);
        ++files;
        if (!fs::exists(twin) || file_bytes(e.path()) != file_bytes(twin)) ++differing;
    }
    const bool ok = rep.ok() && rep.samples_checked == kProtocolSamples && views == 11 && differing == 0 && files > 0;
    std::string detail = fmt("%d samples, %zu violations, N_v %d, %d files compared, %d differ", rep.samples_checked,
                             rep.violations.size(), views, files, differing);
    if (!rep.violations.empty()) detail += "; first: " + rep.violations.front();
    return {ok, detail};
}

} // namespace

int main(int argc, char **argv) {
    CLI::App app{"splatterlab acceptance run"};
    std::vector<int> only;
    std::string work_dir;
    app.add_option("--only", only, "Criteria to run (default: all)")->check(CLI::Range(1, 9));
    app.add_option("--work", work_dir, "Scratch directory (default: a fresh temporary directory)");
    CLI11_PARSE(app, argc, argv);
    configure_threads();

    std::unique_ptr<TempDir> scratch;
    fs::path work = work_dir;
    if (work.empty()) {
        scratch = std::make_unique<TempDir>("acceptance");
        work = scratch->path();
    } else {
        fs::create_directories(work);
    }

    AblationRuns runs;
    const std::vector<std::pair<std::string, std::function<Outcome()>>> criteria = {
        {"gradient suite", gradient_suite},
        {"rasterizer oracle equivalence", oracle_equivalence},
        {"scale-correction exactness", scale_correction},
        {"homography properties", homography_properties},
        {"fit regression", [&] { return fit_regression(work); }},
        {"multi-layer benefit", [&] { return multi_layer_benefit(runs); }},
        {"jitter direction", [&] { return jitter_direction(runs); }},
        {"loss closed forms", loss_closed_forms},
        {"dataset protocol", [&] { return dataset_protocol(work); }},
    };
    const std::set<int> selected(only.begin(), only.end());
    bool all = true;
    for (std::size_t i = 0; i < criteria.size(); ++i) {
        const int id = static_cast<int>(i) + 1;
        if (!selected.empty() && !selected.count(id)) continue;
        const auto t0 = std::chrono::steady_clock::now();
        Outcome o;
        try {
            o = criteria[i].second();
        } catch (const std::exception &e) {
            o = {false, std::string("exception: ") + e.what()};
        }
        std::cout << (o.pass ? "PASS" : "FAIL") << " criterion " << id << " (" << criteria[i].first
                  << "): " << o.detail << fmt(" [%.0fs]", seconds_since(t0)) << std::endl;
        all = all && o.pass;
    }
    return all ? 0 : 1;
}
