// Copyright Contributors to the splatterlab project
// SPDX-License-Identifier: Apache-2.0

#include "splatterlab/gradcheck.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <map>
#include <memory>
#include <numeric>

#include "splatterlab/error.hpp"
#include "splatterlab/losses.hpp"
#include "splatterlab/random.hpp"
#include "splatterlab/rasterizer.hpp"
#include "splatterlab/roi.hpp"
#include "splatterlab/splatter.hpp"
#include "splatterlab/synthgen.hpp"
#include "splatterlab/training.hpp"

namespace splatterlab {

namespace {

constexpr double kStep = 1e-5;
constexpr int kMaxRedraws = 20;

// A scalar function of a flat parameter vector together with its analytic
// gradient at `x`.
struct Instance {
    std::vector<double> x;
    std::vector<double> grad;
    std::function<double(const std::vector<double> &)> f;
};

using Generator = std::function<Instance(Rng &)>;

enum class Verdict { Pass, Fail, Kink };

struct Check {
    Verdict verdict = Verdict::Pass;
    double worst_rel = 0.0;
    double worst_abs = 0.0;
};

double central_difference(const Instance &in, std::size_t i, double h) {
    std::vector<double> x = in.x;
    x[i] = in.x[i] + h;
    const double fp = in.f(x);
    x[i] = in.x[i] - h;
    const double fm = in.f(x);
    return (fp - fm) / (2.0 * h);
}

bool close(double a, double b, double rel_tol, double abs_tol) {
    const double d = std::abs(a - b);
    return d <= abs_tol || d <= rel_tol * std::max(std::abs(a), std::abs(b));
}

Check check_instance(const Instance &in, Rng &rng, const GradcheckOptions &opt) {
    std::vector<std::size_t> order(in.x.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return std::abs(in.grad[a]) > std::abs(in.grad[b]); });
    std::vector<std::size_t> picked;
    const std::size_t want = std::min<std::size_t>(opt.coordinates, in.x.size());
    for (std::size_t k = 0; k < want / 2 + want % 2; ++k) picked.push_back(order[k]);
    while (picked.size() < want) {
        const std::size_t i = static_cast<std::size_t>(rng.integer(0, static_cast<int>(in.x.size()) - 1));
        if (std::find(picked.begin(), picked.end(), i) == picked.end()) picked.push_back(i);
    }

    Check c;
    for (std::size_t i : picked) {
        const double fd = central_difference(in, i, kStep);
        const double fd_half = central_difference(in, i, 0.5 * kStep);
        if (!close(fd, fd_half, 0.1 * opt.rel_tol, 0.1 * opt.abs_tol)) {
            c.verdict = Verdict::Kink;
            return c;
        }
        const double a = in.grad[i];
        const double d = std::abs(a - fd);
        c.worst_abs = std::max(c.worst_abs, d);
        if (d > opt.abs_tol) c.worst_rel = std::max(c.worst_rel, d / std::max(std::abs(a), std::abs(fd)));
        if (!close(a, fd, opt.rel_tol, opt.abs_tol)) c.verdict = Verdict::Fail;
    }
    return c;
}

// ---- random building blocks ----

Quat random_quat(Rng &rng) {
    Quat q;
    for (int k = 0; k < 4; ++k) q[k] = rng.uniform(-1.0, 1.0);
    return q.normalized();
}

Image random_image(Rng &rng, int w, int h, int c, double lo = 0.0, double hi = 1.0) {
    Image img(w, h, c);
    for (double &v : img.data) v = rng.uniform(lo, hi);
    return img;
}

double dot(const Image &a, const Image &b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.data.size(); ++i) s += a.data[i] * b.data[i];
    return s;
}

Camera small_camera(int w, int h, double focal) {
    Camera cam;
    cam.width = w;
    cam.height = h;
    cam.focal = focal;
    cam.principal_point = Vec2(0.5 * w, 0.5 * h);
    return cam;
}

Gaussian3D random_gaussian(Rng &rng, const Camera &cam) {
    Gaussian3D g;
    const double z = rng.uniform(0.8, 2.0);
    const Vec2 px(rng.uniform(0.1, 0.9) * cam.width, rng.uniform(0.1, 0.9) * cam.height);
    const Vec2 n = (px - cam.principal_point) / cam.focal;
    g.mean = cam.rotation * Vec3(n.x() * z, n.y() * z, z) + cam.center;
    g.rotation = random_quat(rng);
    for (int a = 0; a < 3; ++a) g.scales[a] = rng.uniform(0.03, 0.15) * z;
    g.opacity = rng.uniform(0.2, 0.95);
    for (int c = 0; c < 3; ++c) g.color[c] = rng.uniform(0.0, 1.0);
    return g;
}

std::vector<double> pack(const std::vector<Gaussian3D> &gs) {
    std::vector<double> x;
    x.reserve(gs.size() * Gaussian3D::kParamCount);
    for (const auto &g : gs)
        for (int p = 0; p < Gaussian3D::kParamCount; ++p) x.push_back(g.param(p));
    return x;
}

std::vector<Gaussian3D> unpack(const std::vector<double> &x, std::size_t count) {
    std::vector<Gaussian3D> gs(count);
    for (std::size_t n = 0; n < count; ++n)
        for (int p = 0; p < Gaussian3D::kParamCount; ++p) gs[n].param(p) = x[n * Gaussian3D::kParamCount + p];
    return gs;
}

std::vector<Gaussian3D> random_adjoint(Rng &rng, std::size_t count) {
    std::vector<Gaussian3D> w(count);
    for (auto &g : w)
        for (int p = 0; p < Gaussian3D::kParamCount; ++p) g.param(p) = rng.uniform(-1.0, 1.0);
    return w;
}

double gaussian_dot(const std::vector<Gaussian3D> &a, const std::vector<Gaussian3D> &b) {
    double s = 0.0;
    for (std::size_t n = 0; n < a.size(); ++n)
        for (int p = 0; p < Gaussian3D::kParamCount; ++p) s += a[n].param(p) * b[n].param(p);
    return s;
}

// ---- generators ----

Instance gen_rasterizer(Rng &rng) {
    Camera cam = small_camera(24 + rng.integer(0, 12), 20 + rng.integer(0, 12), rng.uniform(20.0, 40.0));
    const int count = rng.integer(1, 8);
    std::vector<Gaussian3D> gs;
    for (int n = 0; n < count; ++n) gs.push_back(random_gaussian(rng, cam));
    RenderAdjoint w;
    w.color = random_image(rng, cam.width, cam.height, 3, -1.0, 1.0);
    w.alpha = random_image(rng, cam.width, cam.height, 1, -1.0, 1.0);
    w.depth_premul = random_image(rng, cam.width, cam.height, 1, -1.0, 1.0);
    const Image w_norm = random_image(rng, cam.width, cam.height, 1, -0.1, 0.1);

    Instance in;
    in.x = pack(gs);
    in.f = [cam, w, w_norm, count](const std::vector<double> &x) {
        const RenderOutput out = render(GaussianSet(unpack(x, count)), cam);
        return dot(out.color, w.color) + dot(out.alpha, w.alpha) + dot(out.depth_premul, w.depth_premul) +
               dot(out.depth_norm, w_norm);
    };
    const GaussianSet set(gs);
    const RasterState st = rasterize(set, cam);
    RenderAdjoint adj = w;
    depth_norm_backward(st.output, w_norm, adj, false);
    in.grad = pack(render_backward(set, st, adj));
    return in;
}

Instance gen_decode(Rng &rng) {
    const int h = rng.integer(2, 5), wd = rng.integer(2, 5), k = rng.integer(1, 2);
    Camera cam = small_camera(wd, h, rng.uniform(2.0, 8.0));
    cam.rotation = quat_to_matrix(random_quat(rng));
    cam.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    DecodeConfig cfg;
    SplatterImage sp(h, wd, k);
    for (std::size_t g = 0; g < sp.gaussian_count(); ++g) {
        double *r = sp.gaussian(g);
        for (int c = 0; c < channel::kCount; ++c) r[c] = rng.uniform(-1.5, 1.5);
        for (int a = 0; a < 3; ++a) r[channel::kLogScale + a] = rng.uniform(cfg.logscale_min, cfg.logscale_max);
    }
    const std::vector<Gaussian3D> w = random_adjoint(rng, sp.gaussian_count());
    Instance in;
    in.x = sp.raw;
    in.f = [sp, cam, cfg, w](const std::vector<double> &x) {
        SplatterImage s = sp;
        s.raw = x;
        return gaussian_dot(decode(s, cam, cfg).items, w);
    };
    in.grad = decode_backward(sp, cam, cfg, w);
    return in;
}

Instance gen_direct_color_sample(Rng &rng) {
    const Camera cam = small_camera(12 + rng.integer(0, 6), 10 + rng.integer(0, 6), rng.uniform(10.0, 20.0));
    const Image img = random_image(rng, cam.width, cam.height, 3);
    DecodeConfig cfg;
    cfg.color_mix = rng.uniform(0.2, 1.0);
    const int count = rng.integer(1, 6);
    std::vector<Gaussian3D> gs;
    for (int n = 0; n < count; ++n) gs.push_back(random_gaussian(rng, cam));
    const std::vector<Gaussian3D> w = random_adjoint(rng, count);
    Instance in;
    in.x = pack(gs);
    in.f = [cam, img, cfg, w, count](const std::vector<double> &x) {
        return gaussian_dot(direct_color_sample(GaussianSet(unpack(x, count)), img, cam, cfg).items, w);
    };
    in.grad = pack(direct_color_sample_backward(GaussianSet(gs), img, cam, cfg, w));
    return in;
}

Instance gen_to_source_frame(Rng &rng) {
    Camera src = small_camera(16, 12, 14.0);
    src.rotation = quat_to_matrix(random_quat(rng));
    src.center = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    Camera roi = src;
    roi.rotation = quat_to_matrix(random_quat(rng));
    const int count = rng.integer(1, 6);
    std::vector<Gaussian3D> gs;
    for (int n = 0; n < count; ++n) gs.push_back(random_gaussian(rng, src));
    const std::vector<Gaussian3D> w = random_adjoint(rng, count);
    Instance in;
    in.x = pack(gs);
    in.f = [roi, src, w, count](const std::vector<double> &x) {
        return gaussian_dot(gaussians_to_source_frame(GaussianSet(unpack(x, count)), roi, src).items, w);
    };
    in.grad = pack(gaussians_to_source_frame_backward(roi, src, w));
    return in;
}

Instance gen_image_loss(Rng &rng, const std::function<ImageLoss(const Image &, const Image &)> &loss, int channels) {
    const int w = rng.integer(3, 12), h = rng.integer(3, 12);
    const Image y = random_image(rng, w, h, channels);
    const Image x0 = random_image(rng, w, h, channels);
    Instance in;
    in.x = x0.data;
    in.f = [y, loss](const std::vector<double> &x) {
        Image img = y;
        img.data = x;
        return loss(img, y).value;
    };
    in.grad = loss(x0, y).grad.data;
    return in;
}

Instance gen_composite(Rng &rng) {
    const int w = rng.integer(2, 8), h = rng.integer(2, 8);
    const Vec3 bg(rng.uniform(), rng.uniform(), rng.uniform());
    const Image color = random_image(rng, w, h, 3), alpha = random_image(rng, w, h, 1);
    const Image wt = random_image(rng, w, h, 3, -1.0, 1.0);
    Instance in;
    in.x = color.data;
    in.x.insert(in.x.end(), alpha.data.begin(), alpha.data.end());
    in.f = [w, h, bg, wt](const std::vector<double> &x) {
        Image c(w, h, 3), a(w, h, 1);
        std::copy(x.begin(), x.begin() + c.data.size(), c.data.begin());
        std::copy(x.begin() + c.data.size(), x.end(), a.data.begin());
        return dot(composite_over_background(c, a, bg), wt);
    };
    Image dc, da;
    composite_backward(wt, bg, dc, da);
    in.grad = dc.data;
    in.grad.insert(in.grad.end(), da.data.begin(), da.data.end());
    return in;
}

Instance gen_vector_loss(Rng &rng, const std::function<VectorLoss(const std::vector<double> &)> &loss) {
    const int k = rng.integer(1, 4);
    Instance in;
    for (int i = 0; i < k; ++i) in.x.push_back(rng.uniform(0.0, 0.2));
    in.f = [loss](const std::vector<double> &x) { return loss(x).value; };
    in.grad = loss(in.x).grad;
    return in;
}

Instance gen_scale_reg(Rng &rng) {
    Instance in;
    in.x = {std::exp(rng.uniform(-1.5, 1.5))};
    in.f = [](const std::vector<double> &x) { return loss_scale_reg(x[0]).value; };
    in.grad = {loss_scale_reg(in.x[0]).grad};
    return in;
}

Instance gen_jitter(Rng &rng) {
    const int views = rng.integer(1, 4), w = rng.integer(2, 8), h = rng.integer(2, 8);
    std::vector<Image> a, b;
    for (int v = 0; v < views; ++v) {
        a.push_back(random_image(rng, w, h, 3));
        b.push_back(random_image(rng, w, h, 3));
    }
    const std::size_t per = a[0].data.size();
    Instance in;
    for (const auto &img : a) in.x.insert(in.x.end(), img.data.begin(), img.data.end());
    for (const auto &img : b) in.x.insert(in.x.end(), img.data.begin(), img.data.end());
    in.f = [a, per, views](const std::vector<double> &x) {
        std::vector<Image> ra = a, rb = a;
        for (int v = 0; v < views; ++v) {
            std::copy_n(x.begin() + v * per, per, ra[v].data.begin());
            std::copy_n(x.begin() + (views + v) * per, per, rb[v].data.begin());
        }
        return loss_jitter(ra, rb).value;
    };
    const PairListLoss l = loss_jitter(a, b);
    for (const auto &g : l.grad_a) in.grad.insert(in.grad.end(), g.data.begin(), g.data.end());
    for (const auto &g : l.grad_a)
        for (double v : g.data) in.grad.push_back(-v);
    return in;
}

Instance gen_solve_scale(Rng &rng) {
    const int w = rng.integer(3, 10), h = rng.integer(3, 10);
    const Image pred = random_image(rng, w, h, 1, 0.3, 2.0);
    Image alpha = random_image(rng, w, h, 1);
    Image gt = random_image(rng, w, h, 1, 0.3, 2.0);
    Image mask = random_image(rng, w, h, 1);
    alpha.data[0] = 0.9;
    mask.data[0] = 0.9;
    const double d_s = rng.uniform(-2.0, 2.0);
    Instance in;
    in.x = pred.data;
    in.f = [pred, alpha, gt, mask, d_s](const std::vector<double> &x) {
        Image p = pred;
        p.data = x;
        return d_s * solve_scale(p, alpha, gt, mask).s;
    };
    const ScaleCorrection corr = solve_scale(pred, alpha, gt, mask);
    in.grad = solve_scale_backward(pred, alpha, gt, mask, corr, d_s).data;
    return in;
}

Instance gen_apply_scale(Rng &rng) {
    const Camera cam = small_camera(16, 12, 14.0);
    const int count = rng.integer(1, 6);
    std::vector<Gaussian3D> gs;
    for (int n = 0; n < count; ++n) gs.push_back(random_gaussian(rng, cam));
    ScaleCorrection corr;
    corr.s = std::exp(rng.uniform(-0.7, 0.7));
    corr.pivot = Vec3(rng.uniform(-1, 1), rng.uniform(-1, 1), rng.uniform(-1, 1));
    const std::vector<Gaussian3D> w = random_adjoint(rng, count);
    Instance in;
    in.x = pack(gs);
    in.x.push_back(corr.s);
    in.f = [corr, w, count](const std::vector<double> &x) {
        ScaleCorrection c = corr;
        c.s = x.back();
        return gaussian_dot(apply_scale(GaussianSet(unpack(x, count)), c).items, w);
    };
    const ApplyScaleGrad g = apply_scale_backward(GaussianSet(gs), corr, w);
    in.grad = pack(g.d_gaussians);
    in.grad.push_back(g.d_s);
    return in;
}

// Small multi-view samples shared by every end-to-end case.
const std::vector<MultiViewSample> &end_to_end_samples() {
    static const std::vector<MultiViewSample> samples = [] {
        DatasetConfig cfg;
        cfg.input_width = 48;
        cfg.input_height = 32;
        cfg.supervision_width = 32;
        cfg.supervision_height = 32;
        cfg.supervision_views = 4;
        cfg.heldout_views = 0;
        cfg.seed = 0x9c;
        std::vector<MultiViewSample> out;
        for (int i = 0; i < 4; ++i) out.push_back(generate_sample(cfg, i));
        return out;
    }();
    return samples;
}

Instance gen_end_to_end(Rng &rng) {
    const auto &samples = end_to_end_samples();
    const MultiViewSample &sample = samples[static_cast<std::size_t>(rng.integer(0, 3))];
    FitConfig cfg;
    cfg.grid_size = 16;
    cfg.layers = rng.integer(1, 2);
    cfg.seed = rng.next();
    cfg.jitter_pairing = true;
    const auto objective = std::make_shared<FitObjective>(sample, cfg);
    const auto primary = std::make_shared<RoiInput>(prepare_roi_input(sample, sample.face_box, cfg.grid_size));
    const auto twin = std::make_shared<RoiInput>(
        prepare_roi_input(sample, perturb_face_box(sample.face_box, cfg.perturbation, rng.next()), cfg.grid_size));
    SplatterImage grid = initial_grid(sample, cfg);
    for (double &v : grid.raw) v += rng.uniform(-0.3, 0.3);

    Instance in;
    in.x = grid.raw;
    in.f = [objective, primary, twin, grid](const std::vector<double> &x) {
        SplatterImage g = grid;
        g.raw = x;
        return objective->evaluate(g, *primary, twin.get(), false).loss.total;
    };
    in.grad = objective->evaluate(grid, *primary, twin.get(), true).grad;
    return in;
}

std::uint64_t fnv1a(const std::string &s) {
    std::uint64_t h = 0xcbf29ce484222325ull;
    for (unsigned char ch : s) h = (h ^ ch) * 0x100000001b3ull;
    return h;
}

const std::map<std::string, Generator> &generators() {
    static const std::map<std::string, Generator> table = {
        {"rasterizer", gen_rasterizer},
        {"decode", gen_decode},
        {"direct_color_sample", gen_direct_color_sample},
        {"to_source_frame", gen_to_source_frame},
        {"composite", gen_composite},
        {"loss_euclidean", [](Rng &r) { return gen_image_loss(r, loss_euclidean_rgb, 3); }},
        {"loss_perceptual", [](Rng &r) { return gen_image_loss(r, loss_perceptual_surrogate, 3); }},
        {"loss_opacity_mean",
         [](Rng &r) { return gen_vector_loss(r, [](const std::vector<double> &m) { return loss_opacity_mean(m, 50.0); }); }},
        {"loss_opacity_bias", [](Rng &r) { return gen_vector_loss(r, loss_opacity_bias); }},
        {"loss_scale_reg", gen_scale_reg},
        {"loss_jitter", gen_jitter},
        {"solve_scale", gen_solve_scale},
        {"apply_scale", gen_apply_scale},
        {"end_to_end", gen_end_to_end},
    };
    return table;
}

} // namespace

std::vector<std::string> gradcheck_ops() {
    return {"rasterizer",      "decode",          "direct_color_sample", "to_source_frame",
            "composite",       "loss_euclidean",  "loss_perceptual",     "loss_opacity_mean",
            "loss_opacity_bias", "loss_scale_reg", "loss_jitter",        "solve_scale",
            "apply_scale",     "end_to_end"};
}

std::vector<GradcheckReport> run_gradcheck(const GradcheckOptions &opt) {
    const std::vector<std::string> ops = opt.ops.empty() ? gradcheck_ops() : opt.ops;
    std::vector<GradcheckReport> reports;
    for (const std::string &op : ops) {
        const auto it = generators().find(op);
        if (it == generators().end()) throw Error(ErrorCode::InvalidArgument, "unknown gradcheck op '" + op + "'");
        const auto t0 = std::chrono::steady_clock::now();
        GradcheckReport rep;
        rep.op = op;
        rep.cases = opt.cases;
        for (int c = 0; c < opt.cases; ++c) {
            Rng rng(mix_seed(opt.seed, fnv1a(op), static_cast<std::uint64_t>(c)));
            bool decided = false;
            for (int attempt = 0; attempt <= kMaxRedraws && !decided; ++attempt) {
                const Instance in = it->second(rng);
                const Check chk = check_instance(in, rng, opt);
                if (chk.verdict == Verdict::Kink) {
                    ++rep.redrawn;
                    continue;
                }
                decided = true;
                rep.worst_rel = std::max(rep.worst_rel, chk.worst_rel);
                rep.worst_abs = std::max(rep.worst_abs, chk.worst_abs);
                if (chk.verdict == Verdict::Pass) ++rep.passed;
            }
        }
        rep.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
        reports.push_back(rep);
    }
    return reports;
}

} // namespace splatterlab
