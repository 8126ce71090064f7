// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/cli.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <iomanip>
#include <numbers>
#include <optional>
#include <ostream>
#include <sstream>

#include "CLI11.hpp"

#include "splatterlab/eval.hpp"
#include "splatterlab/gradcheck.hpp"
#include "splatterlab/image_io.hpp"
#include "splatterlab/parallel.hpp"

namespace splatterlab {

namespace fs = std::filesystem;

namespace {

constexpr const char *kGridFormat = "splatterlab-grid/1";

nlohmann::json read_json(const fs::path &path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorCode::IoError, "cannot open " + path.string());
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception &e) {
        throw Error(ErrorCode::IoError, path.string() + ": " + e.what());
    }
}

void write_json(const fs::path &path, const nlohmann::json &j) {
    std::ofstream out(path);
    if (!out) throw Error(ErrorCode::IoError, "cannot write " + path.string());
    out << j.dump(2) << '\n';
}

fs::path sidecar_path(const fs::path &grid) {
    fs::path p = grid;
    p.replace_extension(".json");
    return p;
}

// A fitted grid plus what is needed to place it: the sample it was fitted on
// and the fit configuration.
struct LoadedGrid {
    SplatterImage grid;
    MultiViewSample sample;
    FitConfig fit;
};

LoadedGrid load_grid(const fs::path &grid_path, const std::optional<fs::path> &sample_override) {
    LoadedGrid g;
    g.grid = load_splatter(grid_path);
    const nlohmann::json side = read_json(sidecar_path(grid_path));
    if (side.value("format", "") != kGridFormat)
        throw Error(ErrorCode::IoError, "unexpected grid sidecar format in " + sidecar_path(grid_path).string());
    g.fit = fit_config_from_json(side.at("fit"));
    g.sample = load_sample(sample_override ? *sample_override : fs::path(side.at("sample").get<std::string>()));
    if (g.grid.layers != g.fit.layers || g.grid.width != g.fit.grid_size || g.grid.height != g.fit.grid_size)
        throw Error(ErrorCode::DimensionMismatch, "grid blob does not match its sidecar configuration");
    return g;
}

std::vector<std::string> dataset_samples(const fs::path &data) {
    const nlohmann::json manifest = read_json(data / "manifest.json");
    return manifest.at("samples").get<std::vector<std::string>>();
}

double fov_deg(const Camera &cam) {
    return 2.0 * std::atan(0.5 * cam.width / cam.focal) * 180.0 / std::numbers::pi;
}

std::vector<Camera> sweep_cameras(const MultiViewSample &s) {
    const Camera &ref = s.supervision.empty() ? s.input.camera : s.supervision.front().camera;
    const double distance = (ref.center - s.head_center).norm();
    return orbit_cameras(s.head_center, s.input.camera, distance,
                         std::vector<double>(std::begin(kSweepAngles), std::end(kSweepAngles)), ref.width,
                         ref.height, fov_deg(ref));
}

void load_config_file(const std::string &path, RunConfig &cfg) {
    if (!path.empty()) cfg = run_config_from_json(read_json(path));
}

int run_gen(const std::string &config, std::optional<int> n, std::optional<std::uint64_t> seed,
            const std::string &out_dir, std::ostream &out) {
    RunConfig cfg;
    load_config_file(config, cfg);
    if (n) cfg.dataset.sample_count = *n;
    if (seed) cfg.dataset.seed = *seed;
    if (!out_dir.empty()) cfg.out = out_dir;
    if (cfg.out.empty()) throw Error(ErrorCode::InvalidArgument, "gen needs an output directory");
    cfg.dataset.validate();
    generate_dataset(cfg.dataset, cfg.out);
    out << "wrote " << cfg.dataset.sample_count << " samples to " << cfg.out.string() << '\n';
    return kExitOk;
}

int run_validate(const std::string &dir, std::ostream &out, std::ostream &err) {
    const ValidationReport rep = validate_dataset(dir);
    for (const auto &v : rep.violations) err << "violation: " << v << '\n';
    out << "checked " << rep.samples_checked << " samples, " << rep.violations.size() << " violations\n";
    return rep.ok() ? kExitOk : kExitDomainError;
}

void write_fit_outputs(const fs::path &dir, const fs::path &sample_dir, const MultiViewSample &sample,
                       const FitConfig &cfg, const FitResult &res, std::ostream &out) {
    fs::create_directories(dir);
    const fs::path grid_path = dir / "grid.bin";
    save_splatter(grid_path, res.grid);
    write_json(sidecar_path(grid_path), {{"format", kGridFormat},
                                         {"sample", fs::absolute(sample_dir).string()},
                                         {"fit", fit_config_to_json(cfg)},
                                         {"final_scale", res.final_scale.s},
                                         {"empty_overlap_iterations", res.empty_overlap_iterations}});
    {
        std::ofstream trace(dir / "trace.jsonl");
        if (!trace) throw Error(ErrorCode::IoError, "cannot write trace.jsonl");
        for (std::size_t i = 0; i < res.trace.size(); ++i)
            trace << loss_breakdown_to_json(res.trace[i], static_cast<int>(i)).dump() << '\n';
    }
    MetricsReport metrics = evaluate_fit(res.grid, sample, cfg);
    const Vec3 &bg = sample.background;
    auto emit = [&](const std::string &name, const Camera &cam) {
        const std::string file = "render_" + name + ".png";
        write_png(dir / file, render_composited(res.final_gaussians, cam, bg));
        metrics.renders.push_back(file);
    };
    emit("input", sample.input.camera);
    for (std::size_t v = 0; v < sample.supervision.size(); ++v) emit("view_" + std::to_string(v + 1), sample.supervision[v].camera);
    for (std::size_t v = 0; v < sample.heldout.size(); ++v) emit("heldout_" + std::to_string(v + 1), sample.heldout[v].camera);
    write_json(dir / "metrics.json", metrics_to_json(metrics));
    out << sample.name << ": input PSNR " << std::fixed << std::setprecision(3) << metrics.input_psnr
        << " dB, held-out PSNR " << metrics.mean_heldout_psnr << " dB, jitter " << std::setprecision(6)
        << metrics.jitter << ", scale " << res.final_scale.s << '\n';
    if (res.empty_overlap_iterations > 0)
        out << sample.name << ": scale step skipped (empty overlap) on " << res.empty_overlap_iterations
            << " iterations\n";
}

struct FitFlags {
    std::string config;
    std::string data;
    std::string sample;
    std::string out;
    std::optional<int> iterations;
    std::optional<int> layers;
    std::optional<int> grid_size;
    std::optional<std::uint64_t> seed;
    std::optional<double> lambda_j;
    std::optional<double> perturbation;
    bool no_pairing = false;
    int log_every = 100;
};

int run_fit(const FitFlags &f, std::ostream &out) {
    RunConfig cfg;
    load_config_file(f.config, cfg);
    if (!f.data.empty()) cfg.data = f.data;
    if (!f.out.empty()) cfg.out = f.out;
    if (f.iterations) cfg.fit.iterations = *f.iterations;
    if (f.layers) cfg.fit.layers = *f.layers;
    if (f.grid_size) cfg.fit.grid_size = *f.grid_size;
    if (f.seed) cfg.fit.seed = *f.seed;
    if (f.lambda_j) cfg.fit.weights.lambda_j = *f.lambda_j;
    if (f.perturbation) cfg.fit.perturbation = *f.perturbation;
    if (f.no_pairing) cfg.fit.jitter_pairing = false;
    cfg.fit.validate();
    if (cfg.data.empty() || cfg.out.empty()) throw Error(ErrorCode::InvalidArgument, "fit needs --data and --out");

    const std::vector<std::string> names = f.sample.empty() ? dataset_samples(cfg.data) : std::vector{f.sample};
    for (const std::string &name : names) {
        const fs::path sample_dir = cfg.data / name;
        const MultiViewSample sample = load_sample(sample_dir);
        FitProgress progress;
        if (f.log_every > 0)
            progress = [&](int it, const LossBreakdown &b) {
                if (it % f.log_every == 0 || it == cfg.fit.iterations)
                    out << name << " it " << it << " total " << std::setprecision(6) << b.total << " L_d " << b.L_d
                        << " L_j " << b.L_j << '\n';
            };
        const FitResult res = fit(sample, cfg.fit, progress);
        write_fit_outputs(cfg.out / name, sample_dir, sample, cfg.fit, res, out);
    }
    return kExitOk;
}

GaussianSet reconstruct_loaded(const LoadedGrid &g) {
    const RoiInput roi = prepare_roi_input(g.sample, g.sample.face_box, g.fit.grid_size);
    return reconstruct(g.grid, g.sample, roi, g.fit.decode).final;
}

fs::path default_out(const std::string &flag, const fs::path &grid) {
    return flag.empty() ? grid.parent_path() : fs::path(flag);
}

int run_render(const std::string &grid, const std::string &sample, bool sweep, const std::string &out_flag,
               std::ostream &out) {
    const LoadedGrid g = load_grid(grid, sample.empty() ? std::nullopt : std::optional<fs::path>(sample));
    const GaussianSet gs = reconstruct_loaded(g);
    const fs::path dir = default_out(out_flag, grid);
    fs::create_directories(dir);
    const Vec3 &bg = g.sample.background;
    if (sweep) {
        const std::vector<Camera> cams = sweep_cameras(g.sample);
        for (std::size_t k = 0; k < cams.size(); ++k) {
            const fs::path p = dir / sweep_file_name(kSweepAngles[k]);
            write_png(p, render_composited(gs, cams[k], bg));
            out << p.string() << '\n';
        }
        return kExitOk;
    }
    write_png(dir / "render_input.png", render_composited(gs, g.sample.input.camera, bg));
    for (std::size_t v = 0; v < g.sample.heldout.size(); ++v)
        write_png(dir / ("render_heldout_" + std::to_string(v + 1) + ".png"),
                  render_composited(gs, g.sample.heldout[v].camera, bg));
    out << "wrote " << 1 + g.sample.heldout.size() << " renders to " << dir.string() << '\n';
    return kExitOk;
}

int run_geo(const std::string &grid, const std::string &sample, const std::string &out_flag, std::ostream &out) {
    const LoadedGrid g = load_grid(grid, sample.empty() ? std::nullopt : std::optional<fs::path>(sample));
    const GaussianSet gs = reconstruct_loaded(g);
    const fs::path dir = default_out(out_flag, grid);
    fs::create_directories(dir);
    std::vector<std::pair<std::string, Camera>> cams{{"geo_input.png", g.sample.input.camera}};
    const std::vector<Camera> sweep = sweep_cameras(g.sample);
    for (std::size_t k = 0; k < sweep.size(); ++k) cams.emplace_back("geo_" + sweep_file_name(kSweepAngles[k]), sweep[k]);
    for (const auto &[name, cam] : cams) {
        write_png(dir / name, geometry_render(gs, cam).shade);
        out << (dir / name).string() << '\n';
    }
    return kExitOk;
}

int run_eval(const std::string &grid, const std::string &sample, const std::string &out_flag, int draws,
             std::ostream &out) {
    const LoadedGrid g = load_grid(grid, sample.empty() ? std::nullopt : std::optional<fs::path>(sample));
    const MetricsReport rep = evaluate_fit(g.grid, g.sample, g.fit, draws);
    const fs::path path = out_flag.empty() ? fs::path(grid).parent_path() / "metrics.json" : fs::path(out_flag);
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    write_json(path, metrics_to_json(rep));
    out << "input PSNR " << std::fixed << std::setprecision(3) << rep.input_psnr << " dB, SSIM "
        << rep.input_ssim << "; held-out PSNR " << rep.mean_heldout_psnr << " dB, SSIM " << rep.mean_heldout_ssim
        << "; jitter " << std::setprecision(6) << rep.jitter << '\n';
    return kExitOk;
}

int run_gradcheck_cmd(const GradcheckOptions &opt, std::ostream &out) {
    const std::vector<GradcheckReport> reps = run_gradcheck(opt);
    bool ok = true;
    double seconds = 0.0;
    for (const auto &r : reps) {
        char line[256];
        std::snprintf(line, sizeof line, "%-4s %-20s %3d/%-3d worst_rel %.2e worst_abs %.2e redrawn %d (%.1fs)",
                      r.ok() ? "PASS" : "FAIL", r.op.c_str(), r.passed, r.cases, r.worst_rel, r.worst_abs,
                      r.redrawn, r.seconds);
        out << line << '\n';
        ok = ok && r.ok();
        seconds += r.seconds;
    }
    out << (ok ? "all operations passed" : "gradient check FAILED") << " in " << std::fixed << std::setprecision(1)
        << seconds << "s\n";
    return ok ? kExitOk : kExitDomainError;
}

template <class T> void check_keys(const nlohmann::json &j, const T &allowed, const std::string &where) {
    for (auto it = j.begin(); it != j.end(); ++it)
        if (std::find(std::begin(allowed), std::end(allowed), it.key()) == std::end(allowed))
            throw Error(ErrorCode::InvalidArgument, "unknown key '" + it.key() + "' in " + where);
}

} // namespace

std::string sweep_file_name(double angle_deg) {
    const long a = std::lround(angle_deg);
    if (a == 0) return "sweep_0.png";
    return std::string("sweep_") + (a < 0 ? "m" : "p") + std::to_string(std::labs(a)) + ".png";
}

RunConfig run_config_from_json(const nlohmann::json &j) {
    if (!j.is_object()) throw Error(ErrorCode::InvalidArgument, "config must be a JSON object");
    static const std::string keys[] = {"dataset", "fit", "data", "out"};
    check_keys(j, keys, "run config");
    RunConfig cfg;
    if (j.contains("dataset")) cfg.dataset = dataset_config_from_json(j.at("dataset"));
    if (j.contains("fit")) cfg.fit = fit_config_from_json(j.at("fit"));
    if (j.contains("data")) cfg.data = j.at("data").get<std::string>();
    if (j.contains("out")) cfg.out = j.at("out").get<std::string>();
    return cfg;
}

nlohmann::json run_config_to_json(const RunConfig &cfg) {
    return {{"dataset", dataset_config_to_json(cfg.dataset)},
            {"fit", fit_config_to_json(cfg.fit)},
            {"data", cfg.data.string()},
            {"out", cfg.out.string()}};
}

int dispatch(int argc, const char *const *argv, std::ostream &out, std::ostream &err) {
    CLI::App app{"splatterlab: splatter-image fitting, rendering and evaluation"};
    app.name("splatterlab");
    app.require_subcommand(1, 1);

    std::string config;
    std::optional<int> gen_n;
    std::optional<std::uint64_t> gen_seed;
    std::string gen_out;
    auto *gen = app.add_subcommand("gen", "Generate a procedural multi-view dataset");
    gen->add_option("--config", config, "JSON run configuration")->check(CLI::ExistingFile);
    gen->add_option("--n", gen_n, "Number of samples");
    gen->add_option("--seed", gen_seed, "Dataset seed");
    gen->add_option("--out", gen_out, "Output directory");

    std::string vd_dir;
    auto *vd = app.add_subcommand("validate-ds", "Check a dataset against the capture protocol");
    vd->add_option("dir", vd_dir, "Dataset directory")->required();

    FitFlags ff;
    auto *fitc = app.add_subcommand("fit", "Fit splatter images to one sample or all samples");
    fitc->add_option("--config", ff.config, "JSON run configuration")->check(CLI::ExistingFile);
    fitc->add_option("--data", ff.data, "Dataset directory");
    fitc->add_option("--sample", ff.sample, "Sample name (default: every sample in the manifest)");
    fitc->add_option("--out", ff.out, "Output directory");
    fitc->add_option("--iterations", ff.iterations, "Optimizer iterations");
    fitc->add_option("--layers", ff.layers, "Gaussians per pixel (K)");
    fitc->add_option("--grid-size", ff.grid_size, "Splatter image side length");
    fitc->add_option("--seed", ff.seed, "Fit seed");
    fitc->add_option("--lambda-j", ff.lambda_j, "Weight of the twin stability term");
    fitc->add_option("--perturbation", ff.perturbation, "Face-box perturbation magnitude");
    fitc->add_flag("--no-pairing", ff.no_pairing, "Disable the perturbed twin");
    fitc->add_option("--log-every", ff.log_every, "Print the loss every N iterations (0: never)");

    std::string grid, sample, out_dir;
    bool sweep = false;
    auto *rend = app.add_subcommand("render", "Render a fitted grid");
    rend->add_option("--grid", grid, "Fitted grid blob")->required()->check(CLI::ExistingFile);
    rend->add_option("--sample", sample, "Sample directory (default: from the grid sidecar)");
    rend->add_flag("--sweep", sweep, "Orbit sweep at -40, -20, 0, +20 and +40 degrees");
    rend->add_option("--out", out_dir, "Output directory (default: next to the grid)");

    auto *geo = app.add_subcommand("geo", "Shaded geometry renders of a fitted grid");
    geo->add_option("--grid", grid, "Fitted grid blob")->required()->check(CLI::ExistingFile);
    geo->add_option("--sample", sample, "Sample directory (default: from the grid sidecar)");
    geo->add_option("--out", out_dir, "Output directory (default: next to the grid)");

    int draws = 4;
    auto *ev = app.add_subcommand("eval", "Write a metrics report for a fitted grid");
    ev->add_option("--grid", grid, "Fitted grid blob")->required()->check(CLI::ExistingFile);
    ev->add_option("--sample", sample, "Sample directory (default: from the grid sidecar)");
    ev->add_option("--out", out_dir, "Metrics JSON path (default: metrics.json next to the grid)");
    ev->add_option("--jitter-draws", draws, "Perturbed face boxes for the jitter metric");

    GradcheckOptions gopt;
    std::string ops;
    auto *gc = app.add_subcommand("gradcheck", "Finite-difference check of every backward pass");
    gc->add_option("--cases", gopt.cases, "Random cases per operation");
    gc->add_option("--tol", gopt.rel_tol, "Relative tolerance");
    gc->add_option("--abs-tol", gopt.abs_tol, "Absolute tolerance near zero");
    gc->add_option("--seed", gopt.seed, "Seed");
    gc->add_option("--ops", ops, "Comma-separated subset of operations");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp &e) {
        out << app.help();
        return kExitOk;
    } catch (const CLI::CallForAllHelp &e) {
        out << app.help("", CLI::AppFormatMode::All);
        return kExitOk;
    } catch (const CLI::ParseError &e) {
        err << "error: " << e.what() << "\n\n" << app.help();
        return kExitUsage;
    }

    configure_threads();
    try {
        if (gen->parsed()) return run_gen(config, gen_n, gen_seed, gen_out, out);
        if (vd->parsed()) return run_validate(vd_dir, out, err);
        if (fitc->parsed()) return run_fit(ff, out);
        if (rend->parsed()) return run_render(grid, sample, sweep, out_dir, out);
        if (geo->parsed()) return run_geo(grid, sample, out_dir, out);
        if (ev->parsed()) return run_eval(grid, sample, out_dir, draws, out);
        if (gc->parsed()) {
            std::stringstream ss(ops);
            for (std::string op; std::getline(ss, op, ',');)
                if (!op.empty()) gopt.ops.push_back(op);
            return run_gradcheck_cmd(gopt, out);
        }
    } catch (const Error &e) {
        err << "error: " << e.what() << '\n';
        return kExitDomainError;
    } catch (const nlohmann::json::exception &e) {
        err << "error: malformed JSON input: " << e.what() << '\n';
        return kExitDomainError;
    } catch (const std::exception &e) {
        err << "error: " << e.what() << '\n';
        return kExitDomainError;
    }
    err << app.help();
    return kExitUsage;
}

} // namespace splatterlab
