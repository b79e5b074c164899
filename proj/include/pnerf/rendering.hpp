#pragma once

// Volume rendering over ray batches: w_i = T_i (1 - exp(-sigma_i delta_i)),
// T_i = exp(-sum_{j<i} sigma_j delta_j). Accumulates color, depth, the two
// semantic distributions (with sky completion of the residual mass) and the
// instance distribution, as one differentiable compositing op.

#include "pnerf/fields.hpp"

#include <array>

namespace pnerf {

// Flattened geometry of a batch of rays: per-sample constants shared by the
// forward pass, the losses and the compositing backward.
struct RayBatchGeom {
    int num_rays = 0;
    int num_classes = 0;
    int num_instances = 0;
    std::vector<int> offsets;       // size num_rays+1, sample range per ray
    std::vector<float> deltas;      // (N)
    std::vector<float> tvals;       // (N) ray parameters in meters
    MatX s_hat;                     // (N, M) fixed semantic field rows
    MatX t_inst;                    // (N, Mt) fixed instance field rows
    std::vector<uint8_t> unique_class;  // per sample: candidate set is a singleton

    int total_samples() const { return offsets.empty() ? 0 : offsets.back(); }
    int samples_of(int ray) const { return offsets[ray + 1] - offsets[ray]; }
};

inline RayBatchGeom make_batch_geom(const std::vector<RaySampleSet>& rays,
                                    const ClassTable& classes) {
    RayBatchGeom g;
    g.num_rays = static_cast<int>(rays.size());
    g.num_classes = classes.num_classes();
    g.num_instances = classes.num_instances();
    g.offsets.resize(rays.size() + 1, 0);
    for (size_t r = 0; r < rays.size(); ++r)
        g.offsets[r + 1] = g.offsets[r] + static_cast<int>(rays[r].samples.size());
    int n = g.total_samples();
    g.deltas.resize(n);
    g.tvals.resize(n);
    g.s_hat = MatX::Zero(n, g.num_classes);
    g.t_inst = MatX::Zero(n, std::max(g.num_instances, 1));
    g.unique_class.resize(n);
    for (size_t r = 0; r < rays.size(); ++r) {
        const auto& rs = rays[r];
        for (size_t i = 0; i < rs.samples.size(); ++i) {
            int row = g.offsets[r] + static_cast<int>(i);
            g.deltas[row] = static_cast<float>(rs.samples[i].delta);
            g.tvals[row] = static_cast<float>(rs.samples[i].t);
            semantic_fixed(rs.candidate_classes[i], g.num_classes, g.s_hat.row(row).data());
            if (g.num_instances > 0)
                instance_fixed(rs.thing_instances[i], classes, g.t_inst.row(row).data());
            g.unique_class[row] = rs.candidate_classes[i].size() == 1 ? 1 : 0;
        }
    }
    return g;
}

struct Composited {
    Tensor color;   // (R,3)
    Tensor s_hat;   // (R,M), sky-completed
    Tensor s;       // (R,M), sky-completed; invalid when no learned input
    Tensor t_inst;  // (R,Mt)
    Tensor sum_wt;  // (R,1) sum w_i t_i
    Tensor weight;  // (R,1) accumulated opacity W
};

// sigma: (N,1). color: (N,3) or invalid. sem: (N,M) learned per-point
// distributions or invalid. Fixed-field rows come from geom.
inline Composited composite(const RayBatchGeom& geom, const Tensor& sigma, const Tensor& color,
                            const Tensor& sem, int sky_class) {
    const int N = geom.total_samples();
    const int R = geom.num_rays;
    const int M = geom.num_classes;
    const int Mt = std::max(geom.num_instances, 1);
    if (sigma.rows() != N || sigma.cols() != 1)
        throw std::invalid_argument("composite: sigma must be (N,1), got " +
                                    shape_str(sigma.shape()));
    bool has_color = color.valid();
    bool has_sem = sem.valid();

    bool rec = Tape::current() != nullptr &&
               (sigma.requires_grad() || (has_color && color.requires_grad()) ||
                (has_sem && sem.requires_grad()));

    Composited out;
    out.s_hat = detail::make_out({R, M}, rec && sigma.requires_grad());
    out.t_inst = detail::make_out({R, Mt}, rec && sigma.requires_grad());
    out.sum_wt = detail::make_out({R, 1}, rec && sigma.requires_grad());
    out.weight = detail::make_out({R, 1}, rec && sigma.requires_grad());
    if (has_color) out.color = detail::make_out({R, 3}, rec);
    if (has_sem) out.s = detail::make_out({R, M}, rec);

    // weights kept for the backward pass
    auto w = std::make_shared<std::vector<float>>(N, 0.0f);

    for (int r = 0; r < R; ++r) {
        float trans = 1.0f;  // T_i
        float W = 0.0f, sum_wt = 0.0f;
        for (int i = geom.offsets[r]; i < geom.offsets[r + 1]; ++i) {
            float a = std::exp(-sigma.value()[i] * geom.deltas[i]);
            float wi = trans * (1.0f - a);
            (*w)[i] = wi;
            trans *= a;
            W += wi;
            sum_wt += wi * geom.tvals[i];
            out.s_hat.mat().row(r) += wi * geom.s_hat.row(i);
            if (geom.num_instances > 0) out.t_inst.mat().row(r) += wi * geom.t_inst.row(i);
            if (has_color) out.color.mat().row(r) += wi * color.mat().row(i);
            if (has_sem) out.s.mat().row(r) += wi * sem.mat().row(i);
        }
        out.weight.value()[r] = W;
        out.sum_wt.value()[r] = sum_wt;
        // sky completion: residual mass goes to the sky class
        out.s_hat.mat()(r, sky_class) += 1.0f - W;
        if (has_sem) out.s.mat()(r, sky_class) += 1.0f - W;
    }

    if (rec) {
        auto sd = sigma.data_ptr();
        auto cd = has_color ? color.data_ptr() : nullptr;
        auto pd = has_sem ? sem.data_ptr() : nullptr;
        auto o_col = has_color ? out.color.data_ptr() : nullptr;
        auto o_sh = out.s_hat.data_ptr();
        auto o_s = has_sem ? out.s.data_ptr() : nullptr;
        auto o_t = out.t_inst.data_ptr();
        auto o_wt = out.sum_wt.data_ptr();
        auto o_w = out.weight.data_ptr();
        const RayBatchGeom* gp = &geom;  // geom outlives the tape (caller contract)
        Tape::current()->push([=] {
            MatX g_col = o_col ? detail::out_grad(o_col) : MatX();
            MatX g_sh = detail::out_grad(o_sh);
            MatX g_s = o_s ? detail::out_grad(o_s) : MatX();
            MatX g_t = detail::out_grad(o_t);
            MatX g_wt = detail::out_grad(o_wt);
            MatX g_w = detail::out_grad(o_w);
            const auto& geom = *gp;
            const int N = geom.total_samples();

            if (cd && cd->requires_grad) cd->ensure_grad();
            if (pd && pd->requires_grad) pd->ensure_grad();
            bool want_sigma = sd->requires_grad;
            if (want_sigma) sd->ensure_grad();

            for (int r = 0; r < geom.num_rays; ++r) {
                int lo = geom.offsets[r], hi = geom.offsets[r + 1];
                // dL/dw_i: every output is linear in w_i; sky completion adds
                // 1-W to the sky column, so its grad enters with a minus sign.
                float sky_grad = g_sh(r, sky_class) + (pd ? g_s(r, sky_class) : 0.0f);
                std::vector<float> gw(hi - lo);
                for (int i = lo; i < hi; ++i) {
                    float gi = g_w(r, 0) + g_wt(r, 0) * geom.tvals[i] - sky_grad;
                    gi += g_sh.row(r).dot(geom.s_hat.row(i));
                    if (geom.num_instances > 0) gi += g_t.row(r).dot(geom.t_inst.row(i));
                    if (cd) gi += g_col.row(r).dot(CMapM(cd->value.data(), N, 3).row(i));
                    if (pd)
                        gi += g_s.row(r).dot(
                            CMapM(pd->value.data(), N, geom.num_classes).row(i));
                    gw[i - lo] = gi;
                }
                // grads into per-sample attribute tensors
                if (cd && cd->requires_grad) {
                    MapM cg(cd->grad.data(), N, 3);
                    for (int i = lo; i < hi; ++i) cg.row(i) += (*w)[i] * g_col.row(r);
                }
                if (pd && pd->requires_grad) {
                    MapM pg(pd->grad.data(), N, geom.num_classes);
                    for (int i = lo; i < hi; ++i) pg.row(i) += (*w)[i] * g_s.row(r);
                }
                if (!want_sigma) continue;
                // grad wrt sigma: dw_i/dsigma_i = T_{i+1} delta_i,
                // dw_j/dsigma_i = -delta_i w_j for j > i.
                float suffix = 0.0f;
                // T_{i+1} = T_i - w_i
                std::vector<float> t_next(hi - lo);
                {
                    float t = 1.0f;
                    for (int i = lo; i < hi; ++i) {
                        t -= (*w)[i];
                        t_next[i - lo] = t;
                    }
                }
                for (int i = hi - 1; i >= lo; --i) {
                    float g_sigma =
                        geom.deltas[i] * (t_next[i - lo] * gw[i - lo] - suffix);
                    sd->grad[i] += g_sigma;
                    suffix += (*w)[i] * gw[i - lo];
                }
            }
        });
    }
    return out;
}

// Depth as weight-normalized expected termination distance.
inline Tensor depth_from(const Composited& c, float eps = 1e-6f) {
    return div(c.sum_wt, clamp_min(c.weight, eps));
}

// (semantic id, instance id) for one ray; instances of other classes are
// masked out of the instance distribution before the argmax.
inline std::pair<int, int> panoptic_decode(const Eigen::RowVectorXf& s,
                                           const Eigen::RowVectorXf& t_inst,
                                           const ClassTable& classes,
                                           const std::vector<int>& instance_class) {
    int sem = 0;
    s.maxCoeff(&sem);
    if (sem < 0 || !classes.is_thing[sem]) return {sem, kNoInstance};
    int best = -1;
    float best_p = 0.0f;
    for (int i = 0; i < t_inst.size(); ++i) {
        if (instance_class[i] != sem) continue;
        if (t_inst[i] > best_p) {
            best_p = t_inst[i];
            best = i;
        }
    }
    if (best < 0) return {sem, kNoInstance};  // masked distribution all zero
    return {sem, classes.instance_ids[best]};
}

}  // namespace pnerf
