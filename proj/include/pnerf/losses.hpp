#pragma once

// The five training losses and their masks. Cross-entropies are computed
// against constant targets with per-row masks; reductions are means over
// contributing rows so the learning rate is batch-size independent.

#include "pnerf/rendering.hpp"

namespace pnerf {

constexpr int kVoidLabel = -1;

struct LossWeights {
    float fixed_semantic = 1.0f;    // lambda_S-hat
    float learned_semantic = 1.0f;  // lambda_S
    float semantic_3d = 1.0f;       // lambda_s
    float photometric = 1.0f;       // lambda_C
    float depth = 0.1f;             // lambda_d
    float sigma_threshold = 0.1f;   // sigma_th in the 3D point mask
};

// -sum_r mask_r sum_k target(r,k) logp(r,k), averaged over rows with
// nonzero mask (0 when every row is masked out).
inline Tensor ce_from_log(const Tensor& logp, const MatX& target,
                          const std::vector<float>& mask) {
    if (logp.rows() != target.rows() || logp.cols() != target.cols() ||
        static_cast<int>(mask.size()) != logp.rows())
        throw std::invalid_argument("ce_from_log shape mismatch: " + shape_str(logp.shape()));
    float count = 0.0f;
    for (float m : mask) count += (m != 0.0f) ? 1.0f : 0.0f;
    float denom = std::max(count, 1.0f);
    bool rec = detail::tracing(logp);
    Tensor out = detail::make_out({1}, rec);
    double acc = 0.0;
    for (int r = 0; r < logp.rows(); ++r)
        if (mask[r] != 0.0f) acc -= mask[r] * logp.mat().row(r).dot(target.row(r));
    out.value()[0] = static_cast<float>(acc / denom);
    detail::check_finite(out, "ce_from_log");
    if (rec) {
        auto ld = logp.data_ptr(), od = out.data_ptr();
        Tape::current()->push([ld, od, target, mask, denom] {
            if (!ld->requires_grad) return;
            ld->ensure_grad();
            float g = od->grad.empty() ? 0.0f : od->grad[0];
            MapM lg(ld->grad.data(), ld->rows(), ld->cols());
            for (int r = 0; r < ld->rows(); ++r)
                if (mask[r] != 0.0f) lg.row(r) -= (g * mask[r] / denom) * target.row(r);
        });
    }
    return out;
}

// mean over masked rows of the squared row residual (sum over channels).
inline Tensor mse_masked(const Tensor& pred, const MatX& target,
                         const std::vector<float>& mask) {
    if (pred.rows() != target.rows() || pred.cols() != target.cols() ||
        static_cast<int>(mask.size()) != pred.rows())
        throw std::invalid_argument("mse_masked shape mismatch: " + shape_str(pred.shape()));
    float count = 0.0f;
    for (float m : mask) count += (m != 0.0f) ? 1.0f : 0.0f;
    float denom = std::max(count, 1.0f);
    bool rec = detail::tracing(pred);
    Tensor out = detail::make_out({1}, rec);
    double acc = 0.0;
    for (int r = 0; r < pred.rows(); ++r)
        if (mask[r] != 0.0f)
            acc += mask[r] * (pred.mat().row(r) - target.row(r)).squaredNorm();
    out.value()[0] = static_cast<float>(acc / denom);
    if (rec) {
        auto pd = pred.data_ptr(), od = out.data_ptr();
        Tape::current()->push([pd, od, target, mask, denom] {
            if (!pd->requires_grad) return;
            pd->ensure_grad();
            float g = od->grad.empty() ? 0.0f : od->grad[0];
            MapM pg(pd->grad.data(), pd->rows(), pd->cols());
            CMapM pv(pd->value.data(), pd->rows(), pd->cols());
            for (int r = 0; r < pd->rows(); ++r)
                if (mask[r] != 0.0f)
                    pg.row(r) += (2.0f * g * mask[r] / denom) * (pv.row(r) - target.row(r));
        });
    }
    return out;
}

// u(r) = 1 iff the pseudo label matches the class of any primitive the ray
// intersects; the SKY interval makes the sky class a candidate.
inline int ray_mask_u(const std::vector<HitInterval>& intervals,
                      const std::vector<BoundingPrimitive>& scene, int sky_class,
                      int pseudo_label) {
    if (pseudo_label == kVoidLabel) return 0;
    for (const auto& iv : intervals) {
        int cls = iv.prim == kSky ? sky_class : scene[iv.prim].semantic_class;
        if (cls == pseudo_label) return 1;
    }
    return 0;
}

// u_i = unique candidate class AND detached density above sigma_th.
inline std::vector<float> point_mask(const RayBatchGeom& geom,
                                     const std::vector<float>& sigma_detached,
                                     float sigma_threshold) {
    std::vector<float> u(geom.total_samples());
    for (int i = 0; i < geom.total_samples(); ++i)
        u[i] = (geom.unique_class[i] && sigma_detached[i] > sigma_threshold) ? 1.0f : 0.0f;
    return u;
}

// Per-ray supervision for one batch.
struct BatchSupervision {
    std::vector<int> sem_label;       // kVoidLabel where unlabeled
    MatX color;                       // (R,3)
    std::vector<float> color_mask;    // 1 where color supervised
    std::vector<float> depth;         // meters
    std::vector<float> depth_mask;    // 1 where depth valid
    std::vector<float> ray_mask;      // u(r)
};

struct LossBundle {
    Tensor fixed_semantic, learned_semantic, semantic_3d, photometric, depth, total;
    int skipped_learned_rays = 0;  // telemetry: rays masked out of L_S
};

inline void check_part_finite(const Tensor& t, const char* name) {
    if (!std::isfinite(t.item()))
        throw std::runtime_error(std::string("total_loss: non-finite loss part ") + name);
}

inline Tensor total_loss(const LossBundle& parts, const LossWeights& w) {
    check_part_finite(parts.fixed_semantic, "fixed_semantic");
    check_part_finite(parts.learned_semantic, "learned_semantic");
    check_part_finite(parts.semantic_3d, "semantic_3d");
    check_part_finite(parts.photometric, "photometric");
    check_part_finite(parts.depth, "depth");
    Tensor total = scale(parts.fixed_semantic, w.fixed_semantic);
    total = add(total, scale(parts.learned_semantic, w.learned_semantic));
    total = add(total, scale(parts.semantic_3d, w.semantic_3d));
    total = add(total, scale(parts.photometric, w.photometric));
    total = add(total, scale(parts.depth, w.depth));
    return total;
}

// All five losses for one composited batch. sem_logits_det is the
// detached-trunk semantic head output so L_s gradients reach phi only.
inline LossBundle compute_losses(const RayBatchGeom& geom, const Composited& comp,
                                 const Tensor& sem_logits_det, const Tensor& sigma,
                                 const BatchSupervision& sup, const LossWeights& weights,
                                 int num_classes) {
    const int R = geom.num_rays;
    LossBundle out;

    std::vector<float> sem_mask(R, 0.0f), learned_mask(R, 0.0f);
    MatX sem_target = MatX::Zero(R, num_classes);
    for (int r = 0; r < R; ++r) {
        if (sup.sem_label[r] == kVoidLabel) continue;
        sem_target(r, sup.sem_label[r]) = 1.0f;
        sem_mask[r] = 1.0f;
        learned_mask[r] = sup.ray_mask[r];
        if (sup.ray_mask[r] == 0.0f) out.skipped_learned_rays++;
    }

    out.fixed_semantic = ce_from_log(log_clamped(comp.s_hat, 1e-8f), sem_target, sem_mask);
    out.learned_semantic = ce_from_log(log_clamped(comp.s, 1e-8f), sem_target, learned_mask);

    std::vector<float> u_i = point_mask(geom, sigma.value(), weights.sigma_threshold);
    out.semantic_3d = ce_from_log(log_softmax(sem_logits_det), geom.s_hat, u_i);

    out.photometric = mse_masked(comp.color, sup.color, sup.color_mask);

    MatX depth_target(R, 1);
    for (int r = 0; r < R; ++r) depth_target(r, 0) = sup.depth[r];
    out.depth = mse_masked(depth_from(comp), depth_target, sup.depth_mask);

    out.total = total_loss(out, weights);
    return out;
}

}  // namespace pnerf
