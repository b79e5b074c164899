#pragma once

// Radiance field MLP with density, color and semantic heads, positional
// encoding, and the two deterministic fields derived from bounding
// primitives: the fixed semantic field and the fixed instance field.

#include "pnerf/adam.hpp"
#include "pnerf/scene.hpp"
#include "pnerf/tensor.hpp"

#include <random>

namespace pnerf {

// gamma(p) = (sin 2^0 pi p, cos 2^0 pi p, ..., sin 2^{L-1} pi p, cos 2^{L-1} pi p)
// per component; output width = cols * 2 * L.
inline MatX positional_encoding(const MatX& p, int L) {
    MatX out(p.rows(), p.cols() * 2 * L);
    for (int c = 0; c < p.cols(); ++c)
        for (int l = 0; l < L; ++l) {
            double f = std::pow(2.0, l) * M_PI;
            for (int r = 0; r < p.rows(); ++r) {
                double a = f * p(r, c);
                out(r, c * 2 * L + 2 * l) = static_cast<float>(std::sin(a));
                out(r, c * 2 * L + 2 * l + 1) = static_cast<float>(std::cos(a));
            }
        }
    return out;
}

struct FieldConfig {
    int trunk_depth = 8;
    int trunk_width = 256;
    int skip_layer = 4;  // input of this layer (0-based) gets the encoding re-fed
    int color_hidden = 128;
    int semantic_hidden = 128;
    int pe_position = 15;  // L for gamma(x)
    int pe_direction = 4;  // L for gamma(d)
    int num_classes = 0;

    int pos_dim() const { return 3 * 2 * pe_position; }
    int dir_dim() const { return 3 * 2 * pe_direction; }
};

struct FieldOutput {
    Tensor sigma;               // (N,1), softplus >= 0
    Tensor color;               // (N,3), sigmoid in [0,1]
    Tensor sem_logits;          // (N,M); gradients reach trunk and head
    Tensor sem_logits_detached; // (N,M); trunk feature detached, head-only grads
};

class Fields {
public:
    FieldConfig cfg;
    std::vector<Tensor> trunk_w, trunk_b;
    Tensor sigma_w, sigma_b;
    Tensor color_w1, color_b1, color_w2, color_b2;
    Tensor sem_w1, sem_b1, sem_w2, sem_b2;

    // trunk forward passes, for the shared-trunk performance contract
    mutable int64_t trunk_evals = 0;

    void init(const FieldConfig& c, std::mt19937& rng) {
        cfg = c;
        if (cfg.num_classes < 2) throw std::invalid_argument("fields: num_classes must be >= 2");
        trunk_w.clear();
        trunk_b.clear();
        int in = cfg.pos_dim();
        for (int l = 0; l < cfg.trunk_depth; ++l) {
            int fan_in = (l == cfg.skip_layer && l > 0) ? in + cfg.trunk_width
                                                        : (l == 0 ? in : cfg.trunk_width);
            trunk_w.push_back(kaiming(fan_in, cfg.trunk_width, rng));
            trunk_b.push_back(Tensor::zeros({1, cfg.trunk_width}, true));
        }
        sigma_w = kaiming(cfg.trunk_width, 1, rng);
        sigma_b = Tensor::zeros({1, 1}, true);
        color_w1 = kaiming(cfg.trunk_width + cfg.dir_dim(), cfg.color_hidden, rng);
        color_b1 = Tensor::zeros({1, cfg.color_hidden}, true);
        color_w2 = kaiming(cfg.color_hidden, 3, rng);
        color_b2 = Tensor::zeros({1, 3}, true);
        sem_w1 = kaiming(cfg.trunk_width, cfg.semantic_hidden, rng);
        sem_b1 = Tensor::zeros({1, cfg.semantic_hidden}, true);
        sem_w2 = kaiming(cfg.semantic_hidden, cfg.num_classes, rng);
        sem_b2 = Tensor::zeros({1, cfg.num_classes}, true);
    }

    // Parameters split by role: theta = radiance trunk + density + color,
    // phi = semantic head.
    NamedParams theta() const {
        NamedParams p;
        for (size_t l = 0; l < trunk_w.size(); ++l) {
            p.emplace_back("trunk_w" + std::to_string(l), trunk_w[l]);
            p.emplace_back("trunk_b" + std::to_string(l), trunk_b[l]);
        }
        p.emplace_back("sigma_w", sigma_w);
        p.emplace_back("sigma_b", sigma_b);
        p.emplace_back("color_w1", color_w1);
        p.emplace_back("color_b1", color_b1);
        p.emplace_back("color_w2", color_w2);
        p.emplace_back("color_b2", color_b2);
        return p;
    }
    NamedParams phi() const {
        return {{"sem_w1", sem_w1}, {"sem_b1", sem_b1},
                {"sem_w2", sem_w2}, {"sem_b2", sem_b2}};
    }
    NamedParams params() const {
        NamedParams p = theta();
        for (auto& q : phi()) p.push_back(q);
        return p;
    }

    // positions: (N,3) already normalized to [-1,1]; dirs: (N,3) unit.
    // want_color may be false for semantic-only passes (skips the color head).
    FieldOutput forward(const MatX& positions, const MatX& dirs, bool want_color = true) const {
        ++trunk_evals;
        Tensor pe_x = Tensor::from({(int)positions.rows(), cfg.pos_dim()},
                                   flatten(positional_encoding(positions, cfg.pe_position)));
        Tensor h = pe_x;
        for (int l = 0; l < cfg.trunk_depth; ++l) {
            if (l == cfg.skip_layer && l > 0) h = concat_cols(h, pe_x);
            h = relu(add(matmul(h, trunk_w[l]), trunk_b[l]));
        }
        FieldOutput out;
        out.sigma = softplus(add(matmul(h, sigma_w), sigma_b));
        if (want_color) {
            Tensor pe_d = Tensor::from({(int)dirs.rows(), cfg.dir_dim()},
                                       flatten(positional_encoding(dirs, cfg.pe_direction)));
            Tensor ch = relu(add(matmul(concat_cols(h, pe_d), color_w1), color_b1));
            out.color = sigmoid(add(matmul(ch, color_w2), color_b2));
        }
        out.sem_logits = semantic_head(h);
        out.sem_logits_detached = semantic_head(h.detach());
        return out;
    }

    Tensor semantic_head(const Tensor& feat) const {
        Tensor sh = relu(add(matmul(feat, sem_w1), sem_b1));
        return add(matmul(sh, sem_w2), sem_b2);
    }

private:
    static std::vector<float> flatten(const MatX& m) {
        return std::vector<float>(m.data(), m.data() + m.size());
    }
    static Tensor kaiming(int fan_in, int fan_out, std::mt19937& rng) {
        float bound = std::sqrt(6.0f / float(fan_in));
        std::uniform_real_distribution<float> uni(-bound, bound);
        std::vector<float> w(size_t(fan_in) * fan_out);
        for (auto& v : w) v = uni(rng);
        return Tensor::from({fan_in, fan_out}, std::move(w), true);
    }
};

// Fixed semantic field s_beta: one-hot for a unique candidate class, uniform
// over the candidate set otherwise. The set is never empty (samples are drawn
// inside primitives or the sky interval).
inline void semantic_fixed(const std::vector<int>& candidate_classes, int num_classes,
                           float* out_row) {
    if (candidate_classes.empty())
        throw std::runtime_error("semantic_fixed: empty candidate class set");
    std::fill(out_row, out_row + num_classes, 0.0f);
    float p = 1.0f / float(candidate_classes.size());
    for (int c : candidate_classes) out_row[c] = p;
}

// Fixed instance field t_beta: one-hot when uniquely enclosed by a thing
// primitive, uniform on thing-thing overlap, all-zero in stuff-only regions.
inline void instance_fixed(const std::vector<int>& thing_instances, const ClassTable& classes,
                           float* out_row) {
    std::fill(out_row, out_row + classes.num_instances(), 0.0f);
    if (thing_instances.empty()) return;
    float p = 1.0f / float(thing_instances.size());
    for (int id : thing_instances) {
        int idx = classes.instance_index(id);
        if (idx < 0) throw std::runtime_error("instance_fixed: unknown instance id");
        out_row[idx] += p;
    }
}

}  // namespace pnerf
