#pragma once

// Desk-scale synthetic dataset: a generated scene of labeled primitives with
// a deliberate building/wall overlap, exact nearest-surface ray-cast ground
// truth (semantic, instance, depth, flat-shaded rgb), pseudo-label corruption
// and weak pseudo-depth.

#include "pnerf/image_io.hpp"
#include "pnerf/scene.hpp"

#include <random>

namespace pnerf {

inline std::array<uint8_t, 3> class_palette(int cls) {
    static const std::array<uint8_t, 3> table[] = {
        {128, 64, 128},  // road purple
        {70, 70, 70},    // building grey
        {102, 102, 156}, // wall slate
        {107, 142, 35},  // vegetation green
        {0, 0, 142},     // car blue
        {70, 130, 180},  // sky steel blue
        {220, 20, 60},  {250, 170, 30}, {152, 251, 152}, {244, 35, 232},
    };
    return table[cls % (sizeof(table) / sizeof(table[0]))];
}

// Outward surface normal (world frame) at a point on the primitive boundary.
inline Vec3 surface_normal(const BoundingPrimitive& prim, const Vec3& x_world) {
    Vec3 p = prim.to_local(x_world);
    Vec3 n_local = Vec3::UnitZ();
    switch (prim.kind) {
        case PrimKind::Cuboid: {
            Vec3 q = p.array().abs() / prim.size.array();
            int axis;
            q.maxCoeff(&axis);
            n_local = Vec3::Zero();
            n_local[axis] = p[axis] >= 0 ? 1.0 : -1.0;
            break;
        }
        case PrimKind::Ellipsoid:
            n_local = (p.array() / (prim.size.array() * prim.size.array())).matrix().normalized();
            break;
        case PrimKind::ExtrudedPolygon: {
            double best = std::abs(p.z());  // distance to bottom cap
            n_local = -Vec3::UnitZ();
            if (std::abs(prim.size.z() - p.z()) < best) {
                best = std::abs(prim.size.z() - p.z());
                n_local = Vec3::UnitZ();
            }
            size_t n = prim.polygon.size();
            for (size_t i = 0; i < n; ++i) {
                const auto& v0 = prim.polygon[i];
                const auto& v1 = prim.polygon[(i + 1) % n];
                Eigen::Vector2d nrm(v1.y() - v0.y(), -(v1.x() - v0.x()));  // outward
                nrm.normalize();
                double d = std::abs(nrm.x() * (p.x() - v0.x()) + nrm.y() * (p.y() - v0.y()));
                if (d < best) {
                    best = d;
                    n_local = Vec3(nrm.x(), nrm.y(), 0.0);
                }
            }
            break;
        }
    }
    return (prim.rotation * n_local).normalized();
}

struct FrameGT {
    Image16 semantic;   // class ids
    Image16 instance;   // instance ids, 0 = none
    DepthMap depth;     // nearest t_near, +inf on sky
    Image8 rgb;
};

struct SyntheticGT {
    std::vector<FrameGT> left, right;
};

// Exact nearest-surface ray cast of one camera.
inline FrameGT raycast_frame(const SceneFile& scene, const CameraPose& pose, int frame_index) {
    const int W = scene.camera.width, H = scene.camera.height;
    FrameGT gt;
    gt.semantic = {W, H, std::vector<uint16_t>(size_t(W) * H)};
    gt.instance = {W, H, std::vector<uint16_t>(size_t(W) * H)};
    gt.depth = {W, H, std::vector<float>(size_t(W) * H, DepthMap::kInvalid)};
    gt.rgb = {W, H, std::vector<uint8_t>(size_t(W) * H * 3)};
    const Vec3 light = Vec3(0.4, 0.3, 0.85).normalized();
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            Ray ray = scene.pixel_ray(pose, r, c, frame_index);
            double best_t = std::numeric_limits<double>::infinity();
            int best = -1;
            for (size_t k = 0; k < scene.primitives.size(); ++k) {
                auto h = intersect(ray, scene.primitives[k], static_cast<int>(k));
                if (h && h->t_near < best_t && h->t_near > 0) {
                    best_t = h->t_near;
                    best = static_cast<int>(k);
                }
            }
            size_t px = size_t(r) * W + c;
            if (best < 0) {
                gt.semantic.data[px] = static_cast<uint16_t>(scene.classes.sky_class);
                gt.rgb.data[px * 3 + 0] = 135;
                gt.rgb.data[px * 3 + 1] = 196;
                gt.rgb.data[px * 3 + 2] = 235;
                continue;
            }
            const auto& prim = scene.primitives[best];
            gt.semantic.data[px] = static_cast<uint16_t>(prim.semantic_class);
            gt.instance.data[px] = static_cast<uint16_t>(std::max(prim.instance_id, 0));
            gt.depth.data[px] = static_cast<float>(best_t);
            Vec3 hit = ray.origin + best_t * ray.dir;
            Vec3 n = surface_normal(prim, hit);
            double lambert = 0.4 + 0.6 * std::abs(n.dot(light));
            auto base = class_palette(prim.semantic_class);
            // small per-instance tint so instances are visually separable
            double tint = prim.instance_id != kNoInstance
                              ? 0.85 + 0.15 * ((prim.instance_id * 2654435761u) % 100) / 100.0
                              : 1.0;
            for (int ch = 0; ch < 3; ++ch)
                gt.rgb.data[px * 3 + ch] =
                    static_cast<uint8_t>(std::min(255.0, base[ch] * lambert * tint));
        }
    return gt;
}

struct GenSpec {
    uint32_t seed = 7;
    int frames = 24;
    int width = 64, height = 48;
    double stereo_baseline = 0.5;  // meters
    double frame_step = 0.8;       // forward travel between frames
};

// Scene layout: extruded-polygon ground slab (road), two thing cuboids
// (car, building), a wall cuboid overlapping the building, a vegetation
// ellipsoid. Positions get a small seeded jitter; the overlap is preserved.
inline SceneFile generate_scene(const GenSpec& spec) {
    std::mt19937 rng(spec.seed);
    std::uniform_real_distribution<double> jit(-0.5, 0.5);

    SceneFile s;
    s.classes.names = {"road", "building", "wall", "vegetation", "car", "sky"};
    s.classes.is_thing = {false, true, false, false, true, false};
    s.classes.sky_class = 5;

    auto cuboid = [](int id, Vec3 center, Vec3 half, int cls, int inst) {
        BoundingPrimitive p;
        p.id = id;
        p.kind = PrimKind::Cuboid;
        p.translation = center;
        p.size = half;
        p.semantic_class = cls;
        p.instance_id = inst;
        return p;
    };

    // ground slab: convex quad extruded 0.4m, top face at z=0
    {
        BoundingPrimitive g;
        g.id = 1;
        g.kind = PrimKind::ExtrudedPolygon;
        g.polygon = {{-10, -25}, {75, -25}, {75, 25}, {-10, 25}};
        g.size = Vec3(1, 1, 0.4);
        g.translation = Vec3(0, 0, -0.4);
        g.semantic_class = 0;
        s.primitives.push_back(g);
    }
    double bx = 33 + jit(rng), by = -8.5 + 0.5 * jit(rng);
    // building (thing, instance 1)
    s.primitives.push_back(cuboid(2, Vec3(bx, by, 4.0), Vec3(9, 3.5, 4.0), 1, 1));
    // wall overlapping the building front; front face sticks out toward +y
    s.primitives.push_back(
        cuboid(3, Vec3(bx - 3.0, by + 3.2, 1.4), Vec3(7, 1.1, 1.4), 2, kNoInstance));
    // car (thing, instance 2), left of the track
    s.primitives.push_back(
        cuboid(4, Vec3(30 + jit(rng), 4.0 + 0.5 * jit(rng), 1.4), Vec3(3.0, 1.4, 1.4), 4, 2));
    // vegetation blob, right far side
    {
        BoundingPrimitive e;
        e.id = 5;
        e.kind = PrimKind::Ellipsoid;
        e.translation = Vec3(42 + jit(rng), 9 + jit(rng), 3.0);
        e.size = Vec3(4.5, 4.5, 3.4);
        e.semantic_class = 3;
        s.primitives.push_back(e);
    }

    s.camera.width = spec.width;
    s.camera.height = spec.height;
    double f = 0.7 * spec.width;  // ~71 deg horizontal fov
    s.camera.fx = f;
    s.camera.fy = f;
    s.camera.cx = spec.width / 2.0;
    s.camera.cy = spec.height / 2.0;

    // camera convention x right, y down, z forward; world z up.
    // forward = +x world, right = -y world (so +y world is on the left).
    Mat3 cam_rot;
    cam_rot.col(0) = Vec3(0, -1, 0);   // cam x
    cam_rot.col(1) = Vec3(0, 0, -1);   // cam y (down)
    cam_rot.col(2) = Vec3(1, 0, 0);    // cam z (forward)
    for (int i = 0; i < spec.frames; ++i) {
        Frame fr;
        fr.index = i;
        fr.left.rotation = cam_rot;
        fr.left.translation = Vec3(i * spec.frame_step, 0.0, 1.6);
        fr.right.rotation = cam_rot;
        fr.right.translation =
            fr.left.translation + cam_rot.col(0) * spec.stereo_baseline;
        s.frames.push_back(fr);
    }

    s.center = Vec3(30, 0, 4);
    s.half_extent = 45.0;
    s.rebuild_instance_table();
    s.validate();
    return s;
}

inline SyntheticGT raycast_gt(const SceneFile& scene) {
    SyntheticGT gt;
    for (size_t i = 0; i < scene.frames.size(); ++i) {
        gt.left.push_back(raycast_frame(scene, scene.frames[i].left, static_cast<int>(i)));
        gt.right.push_back(raycast_frame(scene, scene.frames[i].right, static_cast<int>(i)));
    }
    return gt;
}

struct NoiseModel {
    double flip_rate = 0.0;       // per-pixel uniform flip to another class
    int region_blobs = 0;         // count of circular blob relabels
    double blob_radius = 4.0;     // pixels
    double boundary_jitter = 0.0; // probability of swapping in a neighbor label near edges
};

// Controllable label corruption; returns the measured disagreement rate.
inline double corrupt_labels(const Image16& gt, const NoiseModel& nm, int num_classes,
                             std::mt19937& rng, Image16& out) {
    out = gt;
    const int W = gt.width, H = gt.height;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    std::uniform_int_distribution<int> cls(0, num_classes - 1);

    for (int b = 0; b < nm.region_blobs; ++b) {
        int cr = std::uniform_int_distribution<int>(0, H - 1)(rng);
        int cc = std::uniform_int_distribution<int>(0, W - 1)(rng);
        int target = cls(rng);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c)
                if ((r - cr) * (r - cr) + (c - cc) * (c - cc) <=
                    nm.blob_radius * nm.blob_radius)
                    out.data[size_t(r) * W + c] = static_cast<uint16_t>(target);
    }
    if (nm.boundary_jitter > 0.0) {
        Image16 src = out;
        std::uniform_int_distribution<int> off(-2, 2);
        for (int r = 0; r < H; ++r)
            for (int c = 0; c < W; ++c) {
                bool edge = false;
                uint16_t v = src.data[size_t(r) * W + c];
                for (int dr = -1; dr <= 1 && !edge; ++dr)
                    for (int dc = -1; dc <= 1 && !edge; ++dc) {
                        int rr = r + dr, cc2 = c + dc;
                        if (rr < 0 || rr >= H || cc2 < 0 || cc2 >= W) continue;
                        if (src.data[size_t(rr) * W + cc2] != v) edge = true;
                    }
                if (edge && uni(rng) < nm.boundary_jitter) {
                    int rr = std::clamp(r + off(rng), 0, H - 1);
                    int cc2 = std::clamp(c + off(rng), 0, W - 1);
                    out.data[size_t(r) * W + c] = src.data[size_t(rr) * W + cc2];
                }
            }
    }
    if (nm.flip_rate > 0.0) {
        for (auto& v : out.data)
            if (uni(rng) < nm.flip_rate) {
                int nc = cls(rng);
                while (nc == v) nc = cls(rng);
                v = static_cast<uint16_t>(nc);
            }
    }
    size_t diff = 0;
    for (size_t i = 0; i < out.data.size(); ++i) diff += out.data[i] != gt.data[i];
    return double(diff) / double(out.data.size());
}

// Weak pseudo-depth: analytic depth truncated at max_range, with dropout.
inline DepthMap make_pseudo_depth(const DepthMap& gt, double max_range, double dropout,
                                  std::mt19937& rng) {
    DepthMap d = gt;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (auto& v : d.data)
        if (!std::isfinite(v) || v > max_range || uni(rng) < dropout) v = DepthMap::kInvalid;
    return d;
}

}  // namespace pnerf
