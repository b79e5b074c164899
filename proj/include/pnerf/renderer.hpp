#pragma once

// Frame rendering: drives interval building, sampling, field evaluation and
// compositing over all pixels of a camera, producing dense label maps.
// Deterministic: midpoint sampling, fixed pixel order.

#include "pnerf/image_io.hpp"
#include "pnerf/losses.hpp"
#include "pnerf/synthetic.hpp"

namespace pnerf {

struct RenderPasses {
    bool rgb = false;
    bool depth = false;
    bool semantic_fixed = false;
    bool semantic_learned = false;
    bool panoptic = false;

    bool needs_network() const { return rgb || depth || semantic_learned || panoptic; }
};

struct RenderOptions {
    int n_per_interval = 8;
    double t_int = 50.0;
    int max_prims = 10;
    double no_hit_near = 0.5;
    int chunk_pixels = 512;
    // > 0: bypass the network and use this density inside primitives
    // (0 in the sky interval) -- the opaque label-transfer mode.
    double opaque_sigma = 0.0;
    const IntervalCache* cache = nullptr;  // optional precomputed intervals
    bool allow_compute = true;             // error if false and no cache
};

struct LabelMaps {
    int width = 0, height = 0;
    std::vector<uint16_t> sem_fixed;    // argmax of S-hat
    std::vector<uint16_t> sem_learned;  // argmax of S
    std::vector<uint16_t> instance;     // decoded instance id (0 = none)
    std::vector<float> depth;
    std::vector<uint8_t> rgb;
};

inline LabelMaps render_frame(const SceneFile& scene, const Fields* fields,
                              const CameraPose& pose, int frame_index,
                              const RenderPasses& passes, const RenderOptions& opt) {
    if (passes.needs_network() && opt.opaque_sigma <= 0 && fields == nullptr)
        throw std::invalid_argument("render_frame: requested passes need trained fields");
    if (!opt.allow_compute && opt.cache == nullptr)
        throw std::runtime_error("render_frame: interval cache missing and compute disabled");

    const int W = scene.camera.width, H = scene.camera.height;
    const auto& classes = scene.classes;
    std::vector<int> instance_class(classes.num_instances(), -1);
    for (const auto& p : scene.primitives)
        if (p.instance_id != kNoInstance)
            instance_class[classes.instance_index(p.instance_id)] = p.semantic_class;

    LabelMaps out;
    out.width = W;
    out.height = H;
    if (passes.semantic_fixed) out.sem_fixed.assign(size_t(W) * H, 0);
    if (passes.semantic_learned || passes.panoptic) out.sem_learned.assign(size_t(W) * H, 0);
    if (passes.panoptic) out.instance.assign(size_t(W) * H, 0);
    if (passes.depth) out.depth.assign(size_t(W) * H, 0.0f);
    if (passes.rgb) out.rgb.assign(size_t(W) * H * 3, 0);

    std::mt19937 rng(0);  // unused: midpoint sampling
    std::vector<int> pix;
    std::vector<RaySampleSet> sets;
    std::vector<Ray> rays;

    auto flush = [&] {
        if (pix.empty()) return;
        RayBatchGeom geom = make_batch_geom(sets, classes);
        int n = geom.total_samples();

        Tensor sigma, color, sem;
        if (opt.opaque_sigma > 0) {
            // density high inside primitive intervals, zero in the sky interval
            std::vector<float> sv(n);
            int row = 0;
            for (size_t si = 0; si < sets.size(); ++si) {
                const auto& set = sets[si];
                for (size_t i = 0; i < set.samples.size(); ++i, ++row) {
                    bool sky_sample = set.candidate_classes[i].size() == 1 &&
                                      set.candidate_classes[i][0] == classes.sky_class &&
                                      set.thing_instances[i].empty();
                    sv[row] = sky_sample ? 0.0f : float(opt.opaque_sigma);
                }
            }
            sigma = Tensor::from({n, 1}, std::move(sv));
        } else {
            MatX X(n, 3), D(n, 3);
            int row = 0;
            for (size_t si = 0; si < sets.size(); ++si) {
                Vec3 dir = rays[si].dir;
                for (const auto& s : sets[si].samples) {
                    Vec3 xn = scene.normalize_point(s.x);
                    X.row(row) = xn.cast<float>().transpose();
                    D.row(row) = dir.cast<float>().transpose();
                    ++row;
                }
            }
            FieldOutput fo = fields->forward(X, D, passes.rgb);
            sigma = fo.sigma;
            if (passes.rgb) color = fo.color;
            if (passes.semantic_learned || passes.panoptic) sem = softmax(fo.sem_logits);
        }

        Composited comp = composite(geom, sigma, color, sem, classes.sky_class);
        for (size_t i = 0; i < pix.size(); ++i) {
            size_t px = pix[i];
            int r = static_cast<int>(i);
            if (passes.semantic_fixed) {
                int k;
                comp.s_hat.mat().row(r).maxCoeff(&k);
                out.sem_fixed[px] = static_cast<uint16_t>(k);
            }
            if (passes.semantic_learned || passes.panoptic) {
                Eigen::RowVectorXf srow = comp.s.mat().row(r);
                if (passes.panoptic) {
                    auto [semid, inst] = panoptic_decode(srow, comp.t_inst.mat().row(r),
                                                         classes, instance_class);
                    out.sem_learned[px] = static_cast<uint16_t>(semid);
                    out.instance[px] = static_cast<uint16_t>(inst);
                } else {
                    int k;
                    srow.maxCoeff(&k);
                    out.sem_learned[px] = static_cast<uint16_t>(k);
                }
            }
            if (passes.depth) {
                float wv = std::max(comp.weight.value()[r], 1e-6f);
                out.depth[px] = comp.sum_wt.value()[r] / wv;
            }
            if (passes.rgb)
                for (int ch = 0; ch < 3; ++ch)
                    out.rgb[px * 3 + ch] = static_cast<uint8_t>(
                        std::clamp(comp.color.mat()(r, ch) * 255.0f + 0.5f, 0.0f, 255.0f));
        }
        pix.clear();
        sets.clear();
        rays.clear();
    };

    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            Ray ray = scene.pixel_ray(pose, r, c, frame_index);
            std::vector<HitInterval> ivs =
                opt.cache ? opt.cache->at(r, c)
                          : build_intervals(ray, scene.primitives, opt.t_int, opt.max_prims,
                                            opt.no_hit_near);
            sets.push_back(sample_points(ray, ivs, scene.primitives, classes.sky_class,
                                         opt.n_per_interval, false, rng));
            rays.push_back(ray);
            pix.push_back(r * W + c);
            if (static_cast<int>(pix.size()) >= opt.chunk_pixels) flush();
        }
    flush();
    return out;
}

// Sidecar metadata next to exported maps: class table and colormap.
inline void save_label_maps(const LabelMaps& m, const ClassTable& classes,
                            const std::string& dir, const std::string& stem) {
    if (!m.sem_fixed.empty())
        save_pgm16({m.width, m.height, m.sem_fixed}, dir + "/" + stem + "_sem_fixed.pgm");
    if (!m.sem_learned.empty())
        save_pgm16({m.width, m.height, m.sem_learned}, dir + "/" + stem + "_sem.pgm");
    if (!m.instance.empty())
        save_pgm16({m.width, m.height, m.instance}, dir + "/" + stem + "_inst.pgm");
    if (!m.depth.empty())
        save_depth({m.width, m.height, m.depth}, dir + "/" + stem + "_depth.pnd");
    if (!m.rgb.empty()) save_ppm({m.width, m.height, m.rgb}, dir + "/" + stem + "_rgb.ppm");

    json meta;
    meta["classes"] = json::array();
    for (int i = 0; i < classes.num_classes(); ++i) {
        auto col = class_palette(i);
        meta["classes"].push_back({{"id", i},
                                   {"name", classes.names[i]},
                                   {"thing", (bool)classes.is_thing[i]},
                                   {"color", {col[0], col[1], col[2]}}});
    }
    meta["sky_class"] = classes.sky_class;
    std::ofstream os(dir + "/" + stem + "_meta.json");
    os << meta.dump(2) << "\n";
}

}  // namespace pnerf
