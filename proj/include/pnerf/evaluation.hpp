#pragma once

// Metrics: confusion-matrix mIoU / pixel accuracy, multi-view consistency
// via 3D point matching, panoptic quality with the 100-pixel void/sky
// pre-filters, and depth RMSE / delta-1.25.

#include "pnerf/image_io.hpp"
#include "pnerf/scene.hpp"

#include <map>
#include <optional>
#include <sstream>

namespace pnerf {

constexpr uint16_t kVoidClass = 0xffff;

struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<int64_t> counts;  // gt-major

    explicit ConfusionMatrix(int m = 0) : num_classes(m), counts(size_t(m) * m, 0) {}

    void add(const std::vector<uint16_t>& gt, const std::vector<uint16_t>& pred) {
        if (gt.size() != pred.size())
            throw std::invalid_argument("confusion: size mismatch");
        for (size_t i = 0; i < gt.size(); ++i) {
            if (gt[i] == kVoidClass) continue;  // void excluded
            counts[size_t(gt[i]) * num_classes + pred[i]]++;
        }
    }
    int64_t& at(int g, int p) { return counts[size_t(g) * num_classes + p]; }
    int64_t at(int g, int p) const { return counts[size_t(g) * num_classes + p]; }
};

struct SegResult {
    std::vector<double> iou;  // NaN for classes absent from gt and pred
    double miou = 0.0;
    double acc = 0.0;
};

inline SegResult miou_acc(const ConfusionMatrix& cm) {
    const int M = cm.num_classes;
    SegResult res;
    res.iou.assign(M, std::numeric_limits<double>::quiet_NaN());
    int64_t total = 0, correct = 0;
    double iou_sum = 0.0;
    int present = 0;
    for (int k = 0; k < M; ++k) {
        int64_t tp = cm.at(k, k), fp = 0, fn = 0;
        for (int j = 0; j < M; ++j) {
            if (j == k) continue;
            fn += cm.at(k, j);
            fp += cm.at(j, k);
        }
        if (tp + fp + fn > 0) {
            res.iou[k] = double(tp) / double(tp + fp + fn);
            iou_sum += res.iou[k];
            present++;
        }
        correct += tp;
        for (int j = 0; j < M; ++j) total += cm.at(k, j);
    }
    if (total == 0) throw std::runtime_error("miou_acc: no valid pixels");
    res.miou = present ? iou_sum / present : 0.0;
    res.acc = double(correct) / double(total);
    return res;
}

inline SegResult miou_acc(const std::vector<uint16_t>& gt, const std::vector<uint16_t>& pred,
                          int num_classes) {
    ConfusionMatrix cm(num_classes);
    cm.add(gt, pred);
    return miou_acc(cm);
}

// ---- multi-view consistency -------------------------------------------------

struct LabeledPoint {
    Vec3 x;
    uint16_t label;
};

// Consistent label pairs over 3D-matched pairs (< radius), each matched pair
// counted once; nearest neighbor, ties by first index. nullopt on no matches.
inline std::optional<double> multiview_consistency(const std::vector<LabeledPoint>& a,
                                                   const std::vector<LabeledPoint>& b,
                                                   double radius = 0.1) {
    int64_t matched = 0, consistent = 0;
    for (const auto& p : a) {
        double best = radius * radius;
        int best_j = -1;
        for (size_t j = 0; j < b.size(); ++j) {
            double d = (b[j].x - p.x).squaredNorm();
            if (d < best) {
                best = d;
                best_j = static_cast<int>(j);
            }
        }
        if (best_j < 0) continue;
        matched++;
        if (b[best_j].label == p.label) consistent++;
    }
    if (matched == 0) return std::nullopt;
    return double(consistent) / double(matched);
}

// Unproject a depth map to labeled world points (for MC evaluation).
inline std::vector<LabeledPoint> points_from_depth(const SceneFile& scene,
                                                   const CameraPose& pose,
                                                   const DepthMap& depth,
                                                   const std::vector<uint16_t>& labels) {
    std::vector<LabeledPoint> pts;
    for (int r = 0; r < depth.height; ++r)
        for (int c = 0; c < depth.width; ++c) {
            float d = depth.data[size_t(r) * depth.width + c];
            if (!std::isfinite(d)) continue;
            Ray ray = scene.pixel_ray(pose, r, c);
            pts.push_back({ray.origin + double(d) * ray.dir,
                           labels[size_t(r) * depth.width + c]});
        }
    return pts;
}

// ---- panoptic quality --------------------------------------------------------

struct PanopticMap {
    int width = 0, height = 0;
    std::vector<uint16_t> semantic;  // kVoidClass allowed in gt
    std::vector<uint16_t> instance;  // 0 for stuff / unassigned
};

struct PQClass {
    double pq = 0, sq = 0, rq = 0;
    int tp = 0, fp = 0, fn = 0;
    double iou_sum = 0.0;
};

struct PQReport {
    std::map<int, PQClass> per_class;
    double pq_all = 0, sq_all = 0, rq_all = 0;
    double pq_things = 0, pq_stuff = 0;
    int n_things = 0, n_stuff = 0;
};

namespace pq_detail {

using SegKey = std::pair<uint16_t, uint16_t>;  // (class, instance)

inline std::map<SegKey, std::vector<int64_t>> segments(const PanopticMap& m) {
    std::map<SegKey, std::vector<int64_t>> segs;
    for (size_t i = 0; i < m.semantic.size(); ++i) {
        if (m.semantic[i] == kVoidClass) continue;
        segs[{m.semantic[i], m.instance[i]}].push_back(static_cast<int64_t>(i));
    }
    return segs;
}

// Relabel segments below min_pixels: gt -> void, pred -> sky.
inline void apply_small_segment_rule(PanopticMap& m, int min_pixels, bool is_gt,
                                     int sky_class) {
    auto segs = segments(m);
    for (const auto& [key, px] : segs) {
        if (static_cast<int>(px.size()) >= min_pixels) continue;
        for (int64_t i : px) {
            if (is_gt) {
                m.semantic[i] = kVoidClass;
            } else {
                m.semantic[i] = static_cast<uint16_t>(sky_class);
                m.instance[i] = 0;
            }
        }
    }
}

}  // namespace pq_detail

// PQ with the two 100-pixel pre-filters and IoU > 0.5 matching. Pred segments
// fully inside gt void are not counted as false positives.
inline PQReport panoptic_quality(const PanopticMap& gt_in, const PanopticMap& pred_in,
                                 const ClassTable& classes, int min_pixels = 100) {
    PanopticMap gt = gt_in, pred = pred_in;
    pq_detail::apply_small_segment_rule(gt, min_pixels, true, classes.sky_class);
    pq_detail::apply_small_segment_rule(pred, min_pixels, false, classes.sky_class);

    auto gt_segs = pq_detail::segments(gt);
    auto pred_segs = pq_detail::segments(pred);

    PQReport rep;
    std::set<pq_detail::SegKey> matched_pred;

    for (const auto& [gkey, gpx] : gt_segs) {
        auto& cls = rep.per_class[gkey.first];
        double best_iou = 0.0;
        const pq_detail::SegKey* best = nullptr;
        for (const auto& [pkey, ppx] : pred_segs) {
            if (pkey.first != gkey.first) continue;
            if (matched_pred.count(pkey)) continue;
            int64_t inter = 0;
            size_t i = 0, j = 0;
            while (i < gpx.size() && j < ppx.size()) {
                if (gpx[i] == ppx[j]) { inter++; i++; j++; }
                else if (gpx[i] < ppx[j]) i++;
                else j++;
            }
            double uni = double(gpx.size() + ppx.size() - inter);
            double iou = inter / uni;
            if (iou > 0.5 && iou > best_iou) {
                best_iou = iou;
                best = &pkey;
            }
        }
        if (best) {
            matched_pred.insert(*best);
            cls.tp++;
            cls.iou_sum += best_iou;
        } else {
            cls.fn++;
        }
    }
    for (const auto& [pkey, ppx] : pred_segs) {
        if (matched_pred.count(pkey)) continue;
        // fully inside void: ignore
        int64_t void_px = 0;
        for (int64_t i : ppx) void_px += gt.semantic[i] == kVoidClass;
        if (void_px == static_cast<int64_t>(ppx.size())) continue;
        rep.per_class[pkey.first].fp++;
    }

    double pq_sum = 0, sq_sum = 0, rq_sum = 0, pq_things = 0, pq_stuff = 0;
    int n = 0;
    for (auto& [cls_id, c] : rep.per_class) {
        double denom = c.tp + 0.5 * c.fp + 0.5 * c.fn;
        c.pq = denom > 0 ? c.iou_sum / denom : 0.0;
        c.sq = c.tp > 0 ? c.iou_sum / c.tp : 0.0;
        c.rq = denom > 0 ? c.tp / denom : 0.0;
        pq_sum += c.pq;
        sq_sum += c.sq;
        rq_sum += c.rq;
        n++;
        if (classes.is_thing.at(cls_id)) {
            pq_things += c.pq;
            rep.n_things++;
        } else {
            pq_stuff += c.pq;
            rep.n_stuff++;
        }
    }
    if (n > 0) {
        rep.pq_all = pq_sum / n;
        rep.sq_all = sq_sum / n;
        rep.rq_all = rq_sum / n;
    }
    rep.pq_things = rep.n_things ? pq_things / rep.n_things : 0.0;
    rep.pq_stuff = rep.n_stuff ? pq_stuff / rep.n_stuff : 0.0;
    return rep;
}

// ---- depth -------------------------------------------------------------------

struct DepthResult {
    double rmse = 0.0;
    double delta125 = 0.0;
    int64_t valid = 0;
};

inline DepthResult depth_metrics(const DepthMap& pred, const DepthMap& gt,
                                 double min_range = 0.0, double max_range = 100.0) {
    if (pred.data.size() != gt.data.size())
        throw std::invalid_argument("depth_metrics: size mismatch");
    double se = 0.0;
    int64_t ok = 0, valid = 0;
    for (size_t i = 0; i < gt.data.size(); ++i) {
        float g = gt.data[i];
        if (!std::isfinite(g) || g <= min_range || g > max_range) continue;
        float p = pred.data[i];
        valid++;
        se += double(p - g) * double(p - g);
        double ratio = std::max(double(p) / g, double(g) / p);
        if (ratio < 1.25) ok++;
    }
    if (valid == 0) throw std::runtime_error("depth_metrics: no valid pixels");
    return {std::sqrt(se / valid), double(ok) / valid, valid};
}

// ---- report ------------------------------------------------------------------

struct EvalReport {
    SegResult seg;
    std::optional<double> mc;
    PQReport pq;
    std::optional<DepthResult> depth;
    std::vector<std::string> class_names;

    std::string table() const {
        std::ostringstream os;
        os << "class IoU:\n";
        for (size_t k = 0; k < seg.iou.size(); ++k)
            if (std::isfinite(seg.iou[k]))
                os << "  " << (k < class_names.size() ? class_names[k] : std::to_string(k))
                   << ": " << seg.iou[k] << "\n";
        os << "mIoU: " << seg.miou << "\nAcc: " << seg.acc << "\n";
        if (mc) os << "MC: " << *mc << "\n";
        os << "PQ: " << pq.pq_all << " SQ: " << pq.sq_all << " RQ: " << pq.rq_all
           << " PQ_things: " << pq.pq_things << " PQ_stuff: " << pq.pq_stuff << "\n";
        if (depth)
            os << "depth RMSE: " << depth->rmse << " delta<1.25: " << depth->delta125 << "\n";
        return os.str();
    }

    std::string csv() const {
        std::ostringstream os;
        os << "metric,value\n";
        os << "miou," << seg.miou << "\nacc," << seg.acc << "\n";
        if (mc) os << "mc," << *mc << "\n";
        os << "pq," << pq.pq_all << "\nsq," << pq.sq_all << "\nrq," << pq.rq_all << "\n";
        os << "pq_things," << pq.pq_things << "\npq_stuff," << pq.pq_stuff << "\n";
        if (depth)
            os << "depth_rmse," << depth->rmse << "\ndepth_delta125," << depth->delta125
               << "\n";
        for (size_t k = 0; k < seg.iou.size(); ++k)
            if (std::isfinite(seg.iou[k]))
                os << "iou_" << (k < class_names.size() ? class_names[k] : std::to_string(k))
                   << "," << seg.iou[k] << "\n";
        return os.str();
    }
};

}  // namespace pnerf
