#pragma once

// Ray-batch training: uniform pixel sampling over all stereo frames,
// jittered primitive-interval sampling, the five-loss objective, Adam with
// exponential lr decay, CSV loss logging and resumable checkpoints.

#include "pnerf/checkpoint.hpp"
#include "pnerf/evaluation.hpp"
#include "pnerf/renderer.hpp"

#include <filesystem>
#include <iostream>
#include <map>
#include <sstream>

namespace pnerf {

struct TrainConfig {
    int iterations = 20000;
    int batch_rays = 1024;
    float lr = 5e-4f;
    float lr_final = 5e-5f;
    uint32_t seed = 1;
    LossWeights weights;
    int n_per_interval = 8;
    double t_int = 50.0;
    int max_prims = 10;
    double no_hit_near = 0.5;
    bool jitter = true;
    bool deterministic = true;  // single-threaded, fixed-order reductions
    int checkpoint_every = 5000;
    int log_every = 50;
    float grad_clip = 0.0f;
    FieldConfig arch;  // num_classes filled from the scene

    void validate() const {
        if (iterations < 0) throw std::invalid_argument("config: iterations must be >= 0");
        if (batch_rays < 1) throw std::invalid_argument("config: batch_rays must be >= 1");
        if (max_prims < 1) throw std::invalid_argument("config: max_prims must be >= 1");
    }
};

// key = value config file; '#' comments. Unknown keys are an error.
inline TrainConfig parse_train_config(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open config: " + path);
    TrainConfig c;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        lineno++;
        auto hash = line.find('#');
        if (hash != std::string::npos) line.erase(hash);
        auto eq = line.find('=');
        if (eq == std::string::npos) {
            if (line.find_first_not_of(" \t\r") != std::string::npos)
                throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                         ": expected key = value");
            continue;
        }
        auto trim = [](std::string s) {
            size_t a = s.find_first_not_of(" \t\r");
            size_t b = s.find_last_not_of(" \t\r");
            return a == std::string::npos ? std::string() : s.substr(a, b - a + 1);
        };
        std::string key = trim(line.substr(0, eq));
        std::string val = trim(line.substr(eq + 1));
        if (key == "iterations") c.iterations = std::stoi(val);
        else if (key == "batch_rays") c.batch_rays = std::stoi(val);
        else if (key == "lr") c.lr = std::stof(val);
        else if (key == "lr_final") c.lr_final = std::stof(val);
        else if (key == "seed") c.seed = static_cast<uint32_t>(std::stoul(val));
        else if (key == "lambda_fixed_semantic") c.weights.fixed_semantic = std::stof(val);
        else if (key == "lambda_learned_semantic") c.weights.learned_semantic = std::stof(val);
        else if (key == "lambda_semantic_3d") c.weights.semantic_3d = std::stof(val);
        else if (key == "lambda_photometric") c.weights.photometric = std::stof(val);
        else if (key == "lambda_depth") c.weights.depth = std::stof(val);
        else if (key == "sigma_threshold") c.weights.sigma_threshold = std::stof(val);
        else if (key == "n_per_interval") c.n_per_interval = std::stoi(val);
        else if (key == "t_int") c.t_int = std::stod(val);
        else if (key == "max_prims") c.max_prims = std::stoi(val);
        else if (key == "no_hit_near") c.no_hit_near = std::stod(val);
        else if (key == "jitter") c.jitter = val == "1" || val == "true";
        else if (key == "deterministic") c.deterministic = val == "1" || val == "true";
        else if (key == "checkpoint_every") c.checkpoint_every = std::stoi(val);
        else if (key == "log_every") c.log_every = std::stoi(val);
        else if (key == "grad_clip") c.grad_clip = std::stof(val);
        else if (key == "trunk_depth") c.arch.trunk_depth = std::stoi(val);
        else if (key == "trunk_width") c.arch.trunk_width = std::stoi(val);
        else if (key == "skip_layer") c.arch.skip_layer = std::stoi(val);
        else if (key == "color_hidden") c.arch.color_hidden = std::stoi(val);
        else if (key == "semantic_hidden") c.arch.semantic_hidden = std::stoi(val);
        else if (key == "pe_position") c.arch.pe_position = std::stoi(val);
        else if (key == "pe_direction") c.arch.pe_direction = std::stoi(val);
        else
            throw std::runtime_error(path + ":" + std::to_string(lineno) +
                                     ": unknown config key '" + key + "'");
    }
    c.validate();
    return c;
}

// Posed stereo frames plus pseudo supervision (left camera only) and
// per-frame interval caches.
struct Dataset {
    SceneFile scene;
    std::vector<Image8> rgb_left, rgb_right;
    std::vector<Image16> pseudo_sem;      // left
    std::vector<DepthMap> pseudo_depth;   // left
    std::vector<IntervalCache> cache_left, cache_right;

    int frames() const { return static_cast<int>(scene.frames.size()); }

    void build_caches(double t_int, int max_prims, double no_hit_near) {
        cache_left.clear();
        cache_right.clear();
        const int W = scene.camera.width, H = scene.camera.height;
        for (int f = 0; f < frames(); ++f) {
            for (int side = 0; side < 2; ++side) {
                const CameraPose& pose =
                    side == 0 ? scene.frames[f].left : scene.frames[f].right;
                IntervalCache c;
                c.width = W;
                c.height = H;
                c.pixels.resize(size_t(W) * H);
                for (int r = 0; r < H; ++r)
                    for (int col = 0; col < W; ++col)
                        c.at(r, col) = build_intervals(scene.pixel_ray(pose, r, col, f),
                                                       scene.primitives, t_int, max_prims,
                                                       no_hit_near);
                (side == 0 ? cache_left : cache_right).push_back(std::move(c));
            }
        }
    }
};

inline std::string two_digits(int f) {
    char buf[16];
    std::snprintf(buf, sizeof(buf), "%03d", f);
    return buf;
}

inline Dataset load_dataset(const std::string& dir) {
    Dataset d;
    d.scene = load_scene(dir + "/scene.json");
    for (int f = 0; f < static_cast<int>(d.scene.frames.size()); ++f) {
        std::string stem = dir + "/frames/" + two_digits(f);
        d.rgb_left.push_back(load_ppm(stem + "_left_rgb.ppm"));
        d.rgb_right.push_back(load_ppm(stem + "_right_rgb.ppm"));
        d.pseudo_sem.push_back(load_pgm16(dir + "/pseudo/" + two_digits(f) + "_left_sem.pgm"));
        d.pseudo_depth.push_back(
            load_depth(dir + "/pseudo/" + two_digits(f) + "_left_depth.pnd"));
    }
    return d;
}

struct TrainBatch {
    std::vector<Ray> rays;
    std::vector<RaySampleSet> sets;
    std::vector<const std::vector<HitInterval>*> intervals;
    BatchSupervision sup;
};

// Uniform over (frame, side, pixel); right-camera rays carry color only.
inline TrainBatch sample_batch(const Dataset& data, const TrainConfig& cfg,
                               std::mt19937& rng) {
    const int W = data.scene.camera.width, H = data.scene.camera.height;
    std::uniform_int_distribution<int> pick_frame(0, data.frames() - 1);
    std::uniform_int_distribution<int> pick_side(0, 1);
    std::uniform_int_distribution<int> pick_row(0, H - 1);
    std::uniform_int_distribution<int> pick_col(0, W - 1);

    TrainBatch b;
    const int R = cfg.batch_rays;
    b.sup.sem_label.assign(R, kVoidLabel);
    b.sup.color = MatX::Zero(R, 3);
    b.sup.color_mask.assign(R, 1.0f);
    b.sup.depth.assign(R, 0.0f);
    b.sup.depth_mask.assign(R, 0.0f);
    b.sup.ray_mask.assign(R, 0.0f);

    for (int i = 0; i < R; ++i) {
        int f = pick_frame(rng);
        int side = pick_side(rng);
        int row = pick_row(rng);
        int col = pick_col(rng);
        const CameraPose& pose =
            side == 0 ? data.scene.frames[f].left : data.scene.frames[f].right;
        Ray ray = data.scene.pixel_ray(pose, row, col, f);
        const auto& cache = side == 0 ? data.cache_left[f] : data.cache_right[f];
        const auto& ivs = cache.at(row, col);
        b.rays.push_back(ray);
        b.intervals.push_back(&ivs);
        b.sets.push_back(sample_points(ray, ivs, data.scene.primitives,
                                       data.scene.classes.sky_class, cfg.n_per_interval,
                                       cfg.jitter, rng));
        size_t px = size_t(row) * W + col;
        const auto& rgb = side == 0 ? data.rgb_left[f] : data.rgb_right[f];
        for (int ch = 0; ch < 3; ++ch)
            b.sup.color(i, ch) = rgb.data[px * 3 + ch] / 255.0f;
        if (side == 0) {
            uint16_t lbl = data.pseudo_sem[f].data[px];
            if (lbl != kVoidClass) {
                b.sup.sem_label[i] = lbl;
                b.sup.ray_mask[i] = static_cast<float>(ray_mask_u(
                    ivs, data.scene.primitives, data.scene.classes.sky_class, lbl));
            }
            float dv = data.pseudo_depth[f].data[px];
            if (std::isfinite(dv) && dv > 0.0f) {
                b.sup.depth[i] = dv;
                b.sup.depth_mask[i] = 1.0f;
            }
        }
    }
    return b;
}

struct StepStats {
    LossBundle losses;
    int64_t step = 0;
    float lr = 0.0f;
};

// One forward/backward/update over a sampled batch.
inline StepStats train_step(const Dataset& data, Fields& fields, NamedParams& params,
                            AdamState& adam, const TrainConfig& cfg, std::mt19937& rng,
                            int64_t step) {
    TrainBatch batch = sample_batch(data, cfg, rng);
    RayBatchGeom geom = make_batch_geom(batch.sets, data.scene.classes);

    const int n = geom.total_samples();
    MatX X(n, 3), D(n, 3);
    int row = 0;
    for (size_t si = 0; si < batch.sets.size(); ++si) {
        Vec3 dir = batch.rays[si].dir;
        for (const auto& s : batch.sets[si].samples) {
            X.row(row) = data.scene.normalize_point(s.x).cast<float>().transpose();
            D.row(row) = dir.cast<float>().transpose();
            ++row;
        }
    }

    Tape tape;
    StepStats st;
    {
        TapeScope scope(tape);
        FieldOutput fo = fields.forward(X, D, true);
        Tensor sem = softmax(fo.sem_logits);
        Composited comp = composite(geom, fo.sigma, fo.color, sem,
                                    data.scene.classes.sky_class);
        st.losses = compute_losses(geom, comp, fo.sem_logits_detached, fo.sigma, batch.sup,
                                   cfg.weights, data.scene.classes.num_classes());
        backward(st.losses.total);
    }

    // exponential decay from lr to lr_final over the run
    float frac = cfg.iterations > 1 ? float(step) / float(cfg.iterations) : 0.0f;
    adam.lr = cfg.lr * std::pow(cfg.lr_final / cfg.lr, frac);
    adam.grad_clip = cfg.grad_clip;
    adam_step(params, adam);

    st.step = step;
    st.lr = adam.lr;
    return st;
}

inline std::string rng_to_string(const std::mt19937& rng) {
    std::ostringstream os;
    os << rng;
    return os.str();
}
inline void rng_from_string(std::mt19937& rng, const std::string& s) {
    std::istringstream is(s);
    is >> rng;
}

struct TrainResult {
    std::string final_checkpoint;
    float first_loss = 0.0f;
    float last_loss = 0.0f;
};

// Full optimization run. Writes loss.csv and periodic checkpoints under
// run_dir; resumable (bitwise-identical continuation in deterministic mode).
inline TrainResult train(const Dataset& data, const TrainConfig& cfg,
                         const std::string& run_dir, const std::string& resume = "",
                         bool quiet = false) {
    std::filesystem::create_directories(run_dir);
    Eigen::setNbThreads(1);

    Fields fields;
    FieldConfig arch = cfg.arch;
    arch.num_classes = data.scene.classes.num_classes();
    std::mt19937 rng(cfg.seed);
    fields.init(arch, rng);
    NamedParams params = fields.params();
    AdamState adam;
    adam.lr = cfg.lr;

    int64_t start_step = 0;
    if (!resume.empty()) {
        Checkpoint c = load_checkpoint(resume);
        restore_params(params, c);
        adam = c.adam;
        start_step = c.step;
        if (!c.rng_state.empty()) rng_from_string(rng, c.rng_state);
    }

    std::ofstream log(run_dir + "/loss.csv", start_step ? std::ios::app : std::ios::out);
    if (start_step == 0)
        log << "step,loss_fixed_semantic,loss_learned_semantic,loss_semantic_3d,"
               "loss_photometric,loss_depth,total,lr\n";

    auto save = [&](int64_t step, const std::string& name) {
        Checkpoint c;
        c.step = step;
        c.params = params;
        c.adam = adam;
        c.rng_state = rng_to_string(rng);
        save_checkpoint(c, run_dir + "/" + name);
    };

    TrainResult res;
    for (int64_t step = start_step; step < cfg.iterations; ++step) {
        StepStats st;
        try {
            st = train_step(data, fields, params, adam, cfg, rng, step);
        } catch (const std::exception& e) {
            // diagnostic snapshot before aborting
            save(step, "ckpt_abort.bin");
            std::ofstream diag(run_dir + "/abort.txt");
            diag << "step " << step << ": " << e.what() << "\n";
            throw;
        }
        float total = st.losses.total.item();
        if (step == start_step) res.first_loss = total;
        res.last_loss = total;
        if (step % cfg.log_every == 0 || step + 1 == cfg.iterations) {
            log << step << "," << st.losses.fixed_semantic.item() << ","
                << st.losses.learned_semantic.item() << "," << st.losses.semantic_3d.item()
                << "," << st.losses.photometric.item() << "," << st.losses.depth.item()
                << "," << total << "," << st.lr << "\n";
            log.flush();
            if (!quiet)
                std::cout << "step " << step << " loss " << total << " lr " << st.lr
                          << std::endl;
        }
        if (cfg.checkpoint_every > 0 && (step + 1) % cfg.checkpoint_every == 0 &&
            step + 1 < cfg.iterations)
            save(step + 1, "ckpt_" + std::to_string(step + 1) + ".bin");
    }
    save(cfg.iterations, "ckpt_final.bin");
    res.final_checkpoint = run_dir + "/ckpt_final.bin";
    return res;
}

// Rebuild a Fields object whose parameters alias a checkpoint's tensors.
inline Fields fields_from_checkpoint(const Checkpoint& c, const FieldConfig& arch_in,
                                     int num_classes) {
    Fields f;
    FieldConfig arch = arch_in;
    arch.num_classes = num_classes;
    std::mt19937 rng(0);
    f.init(arch, rng);
    NamedParams p = f.params();
    restore_params(p, c);
    return f;
}

}  // namespace pnerf
