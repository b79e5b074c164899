#pragma once

// On-disk dataset layout:
//   scene.json
//   frames/NNN_{left,right}_rgb.ppm
//   pseudo/NNN_left_sem.pgm, pseudo/NNN_left_depth.pnd
//   gt/NNN_{left,right}_{sem,inst}.pgm, gt/NNN_{left,right}_depth.pnd

#include "pnerf/synthetic.hpp"
#include "pnerf/training.hpp"

#include <filesystem>

namespace pnerf {

struct DatasetGenSpec {
    GenSpec gen;
    NoiseModel noise{0.15, 2, 4.0, 0.3};
    double depth_max_range = 15.0;
    double depth_dropout = 0.3;
};

struct DatasetGenResult {
    double label_noise = 0.0;  // measured pseudo-label disagreement vs gt
};

inline DatasetGenResult write_dataset(const std::string& dir, const DatasetGenSpec& spec) {
    namespace fs = std::filesystem;
    fs::create_directories(dir + "/frames");
    fs::create_directories(dir + "/pseudo");
    fs::create_directories(dir + "/gt");

    SceneFile scene = generate_scene(spec.gen);
    save_scene(scene, dir + "/scene.json");

    std::mt19937 rng(spec.gen.seed ^ 0x9e3779b9u);
    DatasetGenResult res;
    size_t noisy_px = 0, total_px = 0;
    for (int f = 0; f < spec.gen.frames; ++f) {
        std::string id = two_digits(f);
        FrameGT left = raycast_frame(scene, scene.frames[f].left, f);
        FrameGT right = raycast_frame(scene, scene.frames[f].right, f);

        save_ppm(left.rgb, dir + "/frames/" + id + "_left_rgb.ppm");
        save_ppm(right.rgb, dir + "/frames/" + id + "_right_rgb.ppm");

        Image16 noisy;
        double rate = corrupt_labels(left.semantic, spec.noise, scene.classes.num_classes(),
                                     rng, noisy);
        noisy_px += size_t(rate * noisy.data.size() + 0.5);
        total_px += noisy.data.size();
        save_pgm16(noisy, dir + "/pseudo/" + id + "_left_sem.pgm");

        DepthMap pd = make_pseudo_depth(left.depth, spec.depth_max_range,
                                        spec.depth_dropout, rng);
        save_depth(pd, dir + "/pseudo/" + id + "_left_depth.pnd");

        save_pgm16(left.semantic, dir + "/gt/" + id + "_left_sem.pgm");
        save_pgm16(left.instance, dir + "/gt/" + id + "_left_inst.pgm");
        save_depth(left.depth, dir + "/gt/" + id + "_left_depth.pnd");
        save_pgm16(right.semantic, dir + "/gt/" + id + "_right_sem.pgm");
        save_pgm16(right.instance, dir + "/gt/" + id + "_right_inst.pgm");
        save_depth(right.depth, dir + "/gt/" + id + "_right_depth.pnd");
    }
    res.label_noise = total_px ? double(noisy_px) / double(total_px) : 0.0;
    return res;
}

}  // namespace pnerf
