// Command line front end: dataset generation, training, rendering, metric
// evaluation and a quick self-check of the numerical kernels.

#include <CLI11.hpp>

#include "pnerf/dataset.hpp"
#include "pnerf/evaluation.hpp"

#include <filesystem>
#include <iostream>

using namespace pnerf;
namespace fs = std::filesystem;

namespace {

std::string read_file(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open " + path);
    return std::string(std::istreambuf_iterator<char>(is), {});
}

// "all", "3", "0,5,9" or "2:14"
std::vector<int> parse_frames(const std::string& spec, int total) {
    std::vector<int> out;
    if (spec.empty() || spec == "all") {
        for (int i = 0; i < total; ++i) out.push_back(i);
        return out;
    }
    auto push = [&](int f) {
        if (f < 0 || f >= total)
            throw std::runtime_error("frame index " + std::to_string(f) + " out of range [0," +
                                     std::to_string(total - 1) + "]");
        out.push_back(f);
    };
    auto colon = spec.find(':');
    if (colon != std::string::npos) {
        int a = std::stoi(spec.substr(0, colon));
        int b = std::stoi(spec.substr(colon + 1));
        for (int f = a; f < b; ++f) push(f);
        return out;
    }
    size_t pos = 0;
    while (pos < spec.size()) {
        auto comma = spec.find(',', pos);
        push(std::stoi(spec.substr(pos, comma - pos)));
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return out;
}

RenderPasses parse_passes(const std::string& spec) {
    RenderPasses p;
    size_t pos = 0;
    while (pos <= spec.size()) {
        auto comma = spec.find(',', pos);
        std::string name = spec.substr(pos, comma - pos);
        if (name == "rgb") p.rgb = true;
        else if (name == "depth") p.depth = true;
        else if (name == "semantic") p.semantic_learned = true;
        else if (name == "semantic_fixed") p.semantic_fixed = true;
        else if (name == "panoptic") p.panoptic = true;
        else if (!name.empty())
            throw std::runtime_error("unknown render pass '" + name +
                                     "' (rgb, depth, semantic, semantic_fixed, panoptic)");
        if (comma == std::string::npos) break;
        pos = comma + 1;
    }
    return p;
}

int cmd_gen(const std::string& out, uint32_t seed, int frames, int width, int height,
            double flip, int blobs, double boundary_jitter, double depth_range,
            double depth_dropout) {
    DatasetGenSpec spec;
    spec.gen.seed = seed;
    spec.gen.frames = frames;
    spec.gen.width = width;
    spec.gen.height = height;
    spec.noise.flip_rate = flip;
    spec.noise.region_blobs = blobs;
    spec.noise.boundary_jitter = boundary_jitter;
    spec.depth_max_range = depth_range;
    spec.depth_dropout = depth_dropout;
    DatasetGenResult res = write_dataset(out, spec);
    std::cout << "wrote " << frames << " stereo frames (" << width << "x" << height << ") to "
              << out << "\n";
    std::cout << "pseudo-label noise: " << res.label_noise << "\n";
    return 0;
}

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& run_dir, const std::string& resume, int seed_override,
              bool quiet) {
    TrainConfig cfg = parse_train_config(config_path);
    if (seed_override >= 0) cfg.seed = static_cast<uint32_t>(seed_override);

    Dataset data = load_dataset(data_dir);
    data.build_caches(cfg.t_int, cfg.max_prims, cfg.no_hit_near);

    fs::create_directories(run_dir);
    std::string cfg_text = read_file(config_path);
    json manifest;
    manifest["data"] = data_dir;
    manifest["config"] = config_path;
    manifest["config_hash"] = std::to_string(std::hash<std::string>{}(cfg_text));
    manifest["seed"] = cfg.seed;
    manifest["iterations"] = cfg.iterations;
    manifest["resume"] = resume;
    std::ofstream(run_dir + "/manifest.json") << manifest.dump(2) << "\n";
    std::ofstream(run_dir + "/config.cfg") << cfg_text;

    TrainResult res = train(data, cfg, run_dir, resume, quiet);
    std::cout << "final checkpoint: " << res.final_checkpoint << "\n";
    std::cout << "loss " << res.first_loss << " -> " << res.last_loss << "\n";
    return 0;
}

int cmd_render(const std::string& data_dir, const std::string& out_dir,
               const std::string& ckpt_path, const std::string& config_path,
               const std::string& passes_spec, const std::string& frames_spec,
               const std::string& side, double opaque_sigma, int n_per_interval) {
    SceneFile scene = load_scene(data_dir + "/scene.json");
    RenderPasses passes = parse_passes(passes_spec);
    RenderOptions opt;
    opt.opaque_sigma = opaque_sigma;
    if (n_per_interval > 0) opt.n_per_interval = n_per_interval;

    Fields fields;
    bool have_fields = false;
    if (!ckpt_path.empty()) {
        if (config_path.empty())
            throw std::runtime_error("--ckpt needs --config for the architecture");
        TrainConfig cfg = parse_train_config(config_path);
        Checkpoint c = load_checkpoint(ckpt_path);
        fields = fields_from_checkpoint(c, cfg.arch, scene.classes.num_classes());
        opt.n_per_interval = n_per_interval > 0 ? n_per_interval : cfg.n_per_interval;
        opt.t_int = cfg.t_int;
        opt.max_prims = cfg.max_prims;
        opt.no_hit_near = cfg.no_hit_near;
        have_fields = true;
    } else if (passes.needs_network() && opaque_sigma <= 0) {
        throw std::runtime_error("requested passes need --ckpt or --opaque-sigma");
    }

    fs::create_directories(out_dir);
    std::vector<int> frames = parse_frames(frames_spec, static_cast<int>(scene.frames.size()));
    for (int f : frames) {
        for (int s = 0; s < 2; ++s) {
            std::string name = s == 0 ? "left" : "right";
            if (side != "both" && side != name) continue;
            const CameraPose& pose = s == 0 ? scene.frames[f].left : scene.frames[f].right;
            LabelMaps maps =
                render_frame(scene, have_fields ? &fields : nullptr, pose, f, passes, opt);
            save_label_maps(maps, scene.classes, out_dir, two_digits(f) + "_" + name);
        }
    }
    std::cout << "rendered " << frames.size() << " frame(s) to " << out_dir << "\n";
    return 0;
}

int cmd_eval(const std::string& data_dir, const std::string& pred_dir,
             const std::string& frames_spec, double mc_radius, const std::string& csv_out) {
    SceneFile scene = load_scene(data_dir + "/scene.json");
    if (!fs::exists(data_dir + "/gt"))
        throw std::runtime_error("no ground truth under " + data_dir + "/gt");
    std::vector<int> frames = parse_frames(frames_spec, static_cast<int>(scene.frames.size()));
    if (frames.empty()) throw std::runtime_error("no frames selected");

    const int M = scene.classes.num_classes();
    ConfusionMatrix cm(M);
    PQReport pq_total;
    double pq_sum = 0, sq_sum = 0, rq_sum = 0, pqt_sum = 0, pqs_sum = 0;
    int pq_n = 0;
    double se_sum = 0;
    int64_t depth_n = 0, delta_ok = 0;
    bool have_pq = true, have_depth = true;

    struct FrameData {
        std::vector<uint16_t> sem;
        DepthMap depth;
        bool has_depth = false;
    };
    std::map<int, FrameData> per_frame;

    for (int f : frames) {
        std::string stem = two_digits(f) + "_left";
        std::string sem_path = pred_dir + "/" + stem + "_sem.pgm";
        if (!fs::exists(sem_path))
            throw std::runtime_error("missing prediction " + sem_path);
        Image16 pred_sem = load_pgm16(sem_path);
        Image16 gt_sem = load_pgm16(data_dir + "/gt/" + stem + "_sem.pgm");
        cm.add(gt_sem.data, pred_sem.data);
        per_frame[f].sem = pred_sem.data;

        std::string inst_path = pred_dir + "/" + stem + "_inst.pgm";
        if (fs::exists(inst_path)) {
            Image16 pred_inst = load_pgm16(inst_path);
            Image16 gt_inst = load_pgm16(data_dir + "/gt/" + stem + "_inst.pgm");
            PanopticMap gt{gt_sem.width, gt_sem.height, gt_sem.data, gt_inst.data};
            PanopticMap pr{pred_sem.width, pred_sem.height, pred_sem.data, pred_inst.data};
            PQReport rep = panoptic_quality(gt, pr, scene.classes);
            pq_sum += rep.pq_all;
            sq_sum += rep.sq_all;
            rq_sum += rep.rq_all;
            pqt_sum += rep.pq_things;
            pqs_sum += rep.pq_stuff;
            pq_n++;
        } else {
            have_pq = false;
        }

        std::string depth_path = pred_dir + "/" + stem + "_depth.pnd";
        if (fs::exists(depth_path)) {
            DepthMap pred_depth = load_depth(depth_path);
            DepthMap gt_depth = load_depth(data_dir + "/gt/" + stem + "_depth.pnd");
            DepthResult dr = depth_metrics(pred_depth, gt_depth);
            se_sum += dr.rmse * dr.rmse * dr.valid;
            delta_ok += static_cast<int64_t>(dr.delta125 * dr.valid + 0.5);
            depth_n += dr.valid;
            per_frame[f].depth = pred_depth;
            per_frame[f].has_depth = true;
        } else {
            have_depth = false;
        }
    }

    EvalReport rep;
    rep.class_names = scene.classes.names;
    rep.seg = miou_acc(cm);
    if (have_pq && pq_n) {
        rep.pq.pq_all = pq_sum / pq_n;
        rep.pq.sq_all = sq_sum / pq_n;
        rep.pq.rq_all = rq_sum / pq_n;
        rep.pq.pq_things = pqt_sum / pq_n;
        rep.pq.pq_stuff = pqs_sum / pq_n;
    }
    if (have_depth && depth_n)
        rep.depth = DepthResult{std::sqrt(se_sum / depth_n),
                                double(delta_ok) / double(depth_n), depth_n};

    // label consistency between 3D-matched pixels of consecutive views
    double mc_acc = 0;
    int mc_n = 0;
    for (size_t i = 0; i + 1 < frames.size(); ++i) {
        const FrameData& a = per_frame[frames[i]];
        const FrameData& b = per_frame[frames[i + 1]];
        if (!a.has_depth || !b.has_depth) continue;
        auto pa = points_from_depth(scene, scene.frames[frames[i]].left, a.depth, a.sem);
        auto pb = points_from_depth(scene, scene.frames[frames[i + 1]].left, b.depth, b.sem);
        if (auto mc = multiview_consistency(pa, pb, mc_radius)) {
            mc_acc += *mc;
            mc_n++;
        }
    }
    if (mc_n) rep.mc = mc_acc / mc_n;

    std::cout << rep.table();
    if (!csv_out.empty()) {
        std::ofstream os(csv_out);
        os << rep.csv();
        std::cout << "wrote " << csv_out << "\n";
    }
    return 0;
}

// Fast self-check of the numerical kernels against independent references.
int cmd_oracle_check() {
    int failures = 0;
    auto report = [&](const char* name, bool ok) {
        std::cout << (ok ? "PASS " : "FAIL ") << name << "\n";
        if (!ok) failures++;
    };

    {  // ray-solid intersection vs containment bisection
        std::mt19937 rng(41);
        std::uniform_real_distribution<double> uni(-1, 1);
        BoundingPrimitive p;
        p.translation = Vec3(0.2, -0.1, 0.3);
        p.size = Vec3(0.9, 0.6, 1.2);
        Eigen::Quaterniond q(0.9, 0.2, -0.3, 0.1);
        q.normalize();
        p.rotation = q.toRotationMatrix();
        bool ok = true;
        for (int i = 0; i < 500; ++i) {
            Ray r;
            r.origin = Vec3(-4 + uni(rng), uni(rng), uni(rng));
            r.dir = Vec3(1, 0.4 * uni(rng), 0.4 * uni(rng)).normalized();
            auto fast = intersect(r, p);
            // bisection-refined containment scan
            double first = -1, last = -1;
            for (double t = 0.005; t < 12; t += 0.01) {
                if (point_in_primitive(r.origin + t * r.dir, p)) {
                    if (first < 0) first = t;
                    last = t;
                }
            }
            if ((first >= 0) != bool(fast)) {
                if (fast && fast->t_far - fast->t_near < 0.02) continue;  // grazing
                ok = false;
                break;
            }
            if (first < 0) continue;
            if (std::abs(fast->t_near - first) > 0.011 || std::abs(fast->t_far - last) > 0.011)
                ok = false;
        }
        report("intersection vs containment scan", ok);
    }

    {  // fused compositing vs direct transmittance evaluation
        std::mt19937 rng(43);
        std::uniform_real_distribution<float> uf(0.1f, 2.0f);
        ClassTable ct;
        ct.names = {"a", "b", "sky"};
        ct.is_thing = {false, false, false};
        ct.sky_class = 2;
        RaySampleSet rs;
        for (int i = 0; i < 6; ++i) {
            Sample s;
            s.t = 1.0 + i;
            s.delta = 1.0;
            rs.samples.push_back(s);
            rs.candidate_classes.push_back({i % 2});
            rs.thing_instances.push_back({});
        }
        auto geom = make_batch_geom({rs}, ct);
        std::vector<float> sv(6);
        for (auto& v : sv) v = uf(rng);
        Tensor sigma = Tensor::from({6, 1}, std::vector<float>(sv));
        auto out = composite(geom, sigma, Tensor(), Tensor(), ct.sky_class);
        double W = 0, err = 0;
        Eigen::RowVector3d sh = Eigen::RowVector3d::Zero();
        for (int i = 0; i < 6; ++i) {
            double acc = 0;
            for (int j = 0; j < i; ++j) acc += sv[j];
            double w = std::exp(-acc) * (1 - std::exp(-double(sv[i])));
            W += w;
            sh[i % 2] += w;
        }
        sh[2] += 1 - W;
        err = std::abs(out.weight.value()[0] - W);
        for (int c = 0; c < 3; ++c)
            err = std::max(err, std::abs(double(out.s_hat.value()[c]) - sh[c]));
        report("compositing vs direct formula", err < 1e-6);
    }

    {  // compositing gradient vs central differences
        ClassTable ct;
        ct.names = {"a", "b", "sky"};
        ct.is_thing = {false, false, false};
        ct.sky_class = 2;
        RaySampleSet rs;
        for (int i = 0; i < 4; ++i) {
            Sample s;
            s.t = 1.0 + i;
            s.delta = 0.8;
            rs.samples.push_back(s);
            rs.candidate_classes.push_back({i % 2});
            rs.thing_instances.push_back({});
        }
        auto geom = make_batch_geom({rs}, ct);
        Tensor sigma = Tensor::from({4, 1}, {0.4f, 1.1f, 0.7f, 0.2f}, true);
        auto loss_of = [&]() {
            auto out = composite(geom, sigma, Tensor(), Tensor(), ct.sky_class);
            return add(sum(out.sum_wt), sum(out.s_hat));
        };
        {
            Tape tape;
            TapeScope scope(tape);
            backward(loss_of());
        }
        bool ok = true;
        for (int k = 0; k < 4; ++k) {
            float orig = sigma.value()[k], h = 1e-3f;
            sigma.value()[k] = orig + h;
            float up = loss_of().value()[0];
            sigma.value()[k] = orig - h;
            float dn = loss_of().value()[0];
            sigma.value()[k] = orig;
            float fd = (up - dn) / (2 * h);
            if (std::abs(fd - sigma.grad()[k]) > 1e-2f * std::max(1.0f, std::abs(fd)))
                ok = false;
        }
        report("compositing gradient vs finite differences", ok);
    }

    {  // panoptic decode instance masking
        ClassTable ct;
        ct.names = {"stuff", "thing_a", "thing_b"};
        ct.is_thing = {false, true, true};
        ct.sky_class = 0;
        ct.instance_ids = {1, 2};
        std::vector<int> icls = {1, 2};
        Eigen::RowVectorXf s(3), ti(2);
        s << 0.1f, 0.2f, 0.7f;
        ti << 0.9f, 0.3f;  // strongest instance belongs to the losing class
        auto [cls, inst] = panoptic_decode(s, ti, ct, icls);
        report("panoptic decode masks foreign instances", cls == 2 && inst == 2);
    }

    return failures == 0 ? 0 : 1;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale panoptic radiance field"};
    app.require_subcommand(1);

    // gen
    auto* gen = app.add_subcommand("gen", "generate a synthetic stereo dataset");
    std::string gen_out;
    uint32_t gen_seed = 7;
    int gen_frames = 24, gen_w = 64, gen_h = 48, gen_blobs = 2;
    double gen_flip = 0.15, gen_bjit = 0.3, gen_drange = 15.0, gen_ddrop = 0.3;
    gen->add_option("--out", gen_out, "output directory")->required();
    gen->add_option("--seed", gen_seed, "generator seed");
    gen->add_option("--frames", gen_frames, "stereo frame count");
    gen->add_option("--width", gen_w, "image width");
    gen->add_option("--height", gen_h, "image height");
    gen->add_option("--flip-rate", gen_flip, "pseudo-label pixel flip rate");
    gen->add_option("--blobs", gen_blobs, "region relabel blobs per frame");
    gen->add_option("--boundary-jitter", gen_bjit, "boundary label jitter probability");
    gen->add_option("--depth-range", gen_drange, "pseudo-depth truncation (m)");
    gen->add_option("--depth-dropout", gen_ddrop, "pseudo-depth dropout rate");

    // train
    auto* tr = app.add_subcommand("train", "optimize the radiance field");
    std::string tr_data, tr_cfg, tr_out, tr_resume;
    int tr_seed = -1;
    bool tr_quiet = false;
    tr->add_option("--data", tr_data, "dataset directory")->required();
    tr->add_option("--config", tr_cfg, "training config file")->required();
    tr->add_option("--out", tr_out, "run directory")->required();
    tr->add_option("--resume", tr_resume, "checkpoint to resume from");
    tr->add_option("--seed", tr_seed, "override config seed");
    tr->add_flag("--quiet", tr_quiet, "suppress progress output");

    // render
    auto* rd = app.add_subcommand("render", "render label maps from a checkpoint");
    std::string rd_data, rd_out, rd_ckpt, rd_cfg, rd_frames = "all", rd_side = "left";
    std::string rd_passes = "semantic,semantic_fixed,panoptic,depth";
    double rd_opaque = 0.0;
    int rd_npi = 0;
    rd->add_option("--data", rd_data, "dataset directory")->required();
    rd->add_option("--out", rd_out, "output directory")->required();
    rd->add_option("--ckpt", rd_ckpt, "trained checkpoint");
    rd->add_option("--config", rd_cfg, "training config (architecture)");
    rd->add_option("--passes", rd_passes,
                   "comma list: rgb,depth,semantic,semantic_fixed,panoptic");
    rd->add_option("--frames", rd_frames, "frame selection: all, N, a:b or comma list");
    rd->add_option("--side", rd_side, "left, right or both");
    rd->add_option("--opaque-sigma", rd_opaque,
                   "bypass the network with this density inside primitives");
    rd->add_option("--n-per-interval", rd_npi, "samples per interval override");

    // eval
    auto* ev = app.add_subcommand("eval", "compare rendered maps against ground truth");
    std::string ev_data, ev_pred, ev_frames = "all", ev_csv;
    double ev_radius = 0.1;
    ev->add_option("--data", ev_data, "dataset directory (with gt/)")->required();
    ev->add_option("--pred", ev_pred, "directory of rendered maps")->required();
    ev->add_option("--frames", ev_frames, "frame selection");
    ev->add_option("--mc-radius", ev_radius, "3D match radius for consistency (m)");
    ev->add_option("--csv", ev_csv, "write metrics to this CSV file");

    auto* oc = app.add_subcommand("oracle-check", "self-check numerical kernels");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed())
            return cmd_gen(gen_out, gen_seed, gen_frames, gen_w, gen_h, gen_flip, gen_blobs,
                           gen_bjit, gen_drange, gen_ddrop);
        if (tr->parsed()) return cmd_train(tr_data, tr_cfg, tr_out, tr_resume, tr_seed, tr_quiet);
        if (rd->parsed())
            return cmd_render(rd_data, rd_out, rd_ckpt, rd_cfg, rd_passes, rd_frames, rd_side,
                              rd_opaque, rd_npi);
        if (ev->parsed()) return cmd_eval(ev_data, ev_pred, ev_frames, ev_radius, ev_csv);
        if (oc->parsed()) return cmd_oracle_check();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
