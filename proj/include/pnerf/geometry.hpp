#pragma once

// Bounding primitives, ray-primitive intersection, near-to-far interval
// construction with top-K truncation and sky interval, and per-ray
// stratified point sampling with candidate-class sets.

#include <Eigen/Dense>
#include <Eigen/Geometry>

#include <algorithm>
#include <cstdint>
#include <fstream>
#include <optional>
#include <random>
#include <stdexcept>
#include <vector>

namespace pnerf {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

enum class PrimKind { Cuboid, Ellipsoid, ExtrudedPolygon };

constexpr int kSky = -1;           // interval sentinel
constexpr int kNoInstance = 0;     // instance id 0 = none/stuff

struct BoundingPrimitive {
    int id = 0;
    PrimKind kind = PrimKind::Cuboid;
    Mat3 rotation = Mat3::Identity();  // local -> world
    Vec3 translation = Vec3::Zero();
    // Cuboid: half-extents. Ellipsoid: semi-axes. ExtrudedPolygon: extrusion
    // height along local z in size.z(), CCW convex loop in polygon.
    Vec3 size = Vec3::Ones();
    std::vector<Eigen::Vector2d> polygon;
    int semantic_class = 0;
    int instance_id = kNoInstance;  // nonzero iff class is a thing

    Vec3 to_local(const Vec3& p) const { return rotation.transpose() * (p - translation); }

    void validate() const {
        if (kind == PrimKind::ExtrudedPolygon) {
            if (size.z() <= 0) throw std::invalid_argument("extrusion height must be positive");
            if (polygon.size() < 3)
                throw std::invalid_argument("extruded polygon needs >= 3 vertices");
            // CCW convexity: all cross products non-negative, at least one positive
            size_t n = polygon.size();
            bool any = false;
            for (size_t i = 0; i < n; ++i) {
                Eigen::Vector2d a = polygon[(i + 1) % n] - polygon[i];
                Eigen::Vector2d b = polygon[(i + 2) % n] - polygon[(i + 1) % n];
                double cr = a.x() * b.y() - a.y() * b.x();
                if (cr < -1e-12) throw std::invalid_argument("polygon loop must be convex CCW");
                if (cr > 1e-12) any = true;
            }
            if (!any) throw std::invalid_argument("degenerate polygon loop");
        } else if (size.minCoeff() <= 0) {
            throw std::invalid_argument("primitive extents must be strictly positive");
        }
    }
};

struct Ray {
    Vec3 origin = Vec3::Zero();
    Vec3 dir = Vec3::UnitX();  // unit norm
    int row = 0, col = 0;
    int frame = -1;
};

struct HitInterval {
    int prim = kSky;  // index into scene primitive list, or kSky
    double t_near = 0.0;
    double t_far = 0.0;
};

struct Sample {
    double t = 0.0;
    double delta = 0.0;
    Vec3 x = Vec3::Zero();
    int interval = 0;  // index into the interval list this sample came from
};

struct RaySampleSet {
    std::vector<Sample> samples;
    std::vector<std::vector<int>> candidate_classes;  // per sample, sorted unique
    std::vector<std::vector<int>> thing_instances;    // enclosing thing instance ids
};

namespace geo_detail {

// Clip [t0,t1] by linear constraint a*t + b >= 0. Returns false on empty.
inline bool clip_linear(double a, double b, double& t0, double& t1) {
    constexpr double eps = 1e-12;
    if (std::abs(a) < eps) return b >= -eps;
    double t = -b / a;
    if (a > 0) t0 = std::max(t0, t);
    else t1 = std::min(t1, t);
    return t0 <= t1;
}

}  // namespace geo_detail

inline bool point_in_primitive(const Vec3& x, const BoundingPrimitive& prim) {
    Vec3 p = prim.to_local(x);
    switch (prim.kind) {
        case PrimKind::Cuboid:
            return (p.array().abs() <= prim.size.array()).all();
        case PrimKind::Ellipsoid: {
            Vec3 q = p.array() / prim.size.array();
            return q.squaredNorm() <= 1.0;
        }
        case PrimKind::ExtrudedPolygon: {
            if (p.z() < 0.0 || p.z() > prim.size.z()) return false;
            size_t n = prim.polygon.size();
            for (size_t i = 0; i < n; ++i) {
                const auto& v0 = prim.polygon[i];
                const auto& v1 = prim.polygon[(i + 1) % n];
                Eigen::Vector2d e = v1 - v0;
                // interior lies left of each CCW edge
                if (e.x() * (p.y() - v0.y()) - e.y() * (p.x() - v0.x()) < 0) return false;
            }
            return true;
        }
    }
    return false;
}

// Entry/exit of the ray through the primitive, clipped to t > 0.
inline std::optional<HitInterval> intersect(const Ray& ray, const BoundingPrimitive& prim,
                                            int prim_index = 0) {
    Vec3 o = prim.to_local(ray.origin);
    Vec3 d = prim.rotation.transpose() * ray.dir;
    double t0 = 0.0, t1 = std::numeric_limits<double>::infinity();

    switch (prim.kind) {
        case PrimKind::Cuboid:
            for (int a = 0; a < 3; ++a) {
                if (!geo_detail::clip_linear(d[a], o[a] + prim.size[a], t0, t1)) return {};
                if (!geo_detail::clip_linear(-d[a], prim.size[a] - o[a], t0, t1)) return {};
            }
            break;
        case PrimKind::Ellipsoid: {
            Vec3 os = o.array() / prim.size.array();
            Vec3 ds = d.array() / prim.size.array();
            double A = ds.squaredNorm();
            double B = 2.0 * os.dot(ds);
            double C = os.squaredNorm() - 1.0;
            double disc = B * B - 4 * A * C;
            if (disc < 0) return {};
            double sq = std::sqrt(disc);
            t0 = std::max(t0, (-B - sq) / (2 * A));
            t1 = std::min(t1, (-B + sq) / (2 * A));
            break;
        }
        case PrimKind::ExtrudedPolygon: {
            if (!geo_detail::clip_linear(d.z(), o.z(), t0, t1)) return {};
            if (!geo_detail::clip_linear(-d.z(), prim.size.z() - o.z(), t0, t1)) return {};
            size_t n = prim.polygon.size();
            for (size_t i = 0; i < n; ++i) {
                const auto& v0 = prim.polygon[i];
                const auto& v1 = prim.polygon[(i + 1) % n];
                Eigen::Vector2d nrm(-(v1.y() - v0.y()), v1.x() - v0.x());
                double a = nrm.x() * d.x() + nrm.y() * d.y();
                double b = nrm.x() * (o.x() - v0.x()) + nrm.y() * (o.y() - v0.y());
                if (!geo_detail::clip_linear(a, b, t0, t1)) return {};
            }
            break;
        }
    }
    if (!(t0 < t1) || t1 <= 0.0) return {};
    return HitInterval{prim_index, std::max(t0, 0.0), t1};
}

// Sorted near-to-far intervals, truncated to max_prims; a SKY interval of
// length t_int is appended when fewer than max_prims primitives are hit.
inline std::vector<HitInterval> build_intervals(const Ray& ray,
                                                const std::vector<BoundingPrimitive>& scene,
                                                double t_int, int max_prims,
                                                double no_hit_near = 0.5) {
    if (max_prims < 1) throw std::invalid_argument("build_intervals: max_prims must be >= 1");
    std::vector<HitInterval> hits;
    for (size_t k = 0; k < scene.size(); ++k)
        if (auto h = intersect(ray, scene[k], static_cast<int>(k))) hits.push_back(*h);
    std::sort(hits.begin(), hits.end(),
              [](const HitInterval& a, const HitInterval& b) { return a.t_near < b.t_near; });
    if (static_cast<int>(hits.size()) > max_prims) {
        hits.resize(max_prims);
    } else {
        double t_max = no_hit_near;
        for (const auto& h : hits) t_max = std::max(t_max, h.t_far);
        hits.push_back(HitInterval{kSky, t_max, t_max + t_int});
    }
    return hits;
}

// Stratified samples per interval, merged and re-sorted by t. Candidate
// classes / thing instances come from direct containment tests; SKY samples
// get {sky_class}.
inline RaySampleSet sample_points(const Ray& ray, const std::vector<HitInterval>& intervals,
                                  const std::vector<BoundingPrimitive>& scene, int sky_class,
                                  int n_per_interval, bool jitter, std::mt19937& rng) {
    if (n_per_interval < 1)
        throw std::invalid_argument("sample_points: n_per_interval must be >= 1");
    RaySampleSet out;
    std::uniform_real_distribution<double> uni(0.0, 1.0);
    for (size_t iv = 0; iv < intervals.size(); ++iv) {
        const auto& h = intervals[iv];
        double len = h.t_far - h.t_near;
        for (int i = 0; i < n_per_interval; ++i) {
            double u = jitter ? uni(rng) : 0.5;
            double t = h.t_near + len * (i + u) / n_per_interval;
            Sample s;
            s.t = t;
            s.x = ray.origin + t * ray.dir;
            s.interval = static_cast<int>(iv);
            out.samples.push_back(s);
        }
    }
    std::sort(out.samples.begin(), out.samples.end(),
              [](const Sample& a, const Sample& b) { return a.t < b.t; });

    double t_end = 0.0;
    for (const auto& h : intervals) t_end = std::max(t_end, h.t_far);
    for (size_t i = 0; i < out.samples.size(); ++i) {
        double next = (i + 1 < out.samples.size()) ? out.samples[i + 1].t : t_end;
        out.samples[i].delta = std::max(next - out.samples[i].t, 1e-6);
    }

    out.candidate_classes.resize(out.samples.size());
    out.thing_instances.resize(out.samples.size());
    for (size_t i = 0; i < out.samples.size(); ++i) {
        const Sample& s = out.samples[i];
        if (intervals[s.interval].prim == kSky) {
            out.candidate_classes[i] = {sky_class};
            continue;
        }
        auto& cls = out.candidate_classes[i];
        for (size_t k = 0; k < scene.size(); ++k) {
            if (!point_in_primitive(s.x, scene[k])) continue;
            cls.push_back(scene[k].semantic_class);
            if (scene[k].instance_id != kNoInstance)
                out.thing_instances[i].push_back(scene[k].instance_id);
        }
        std::sort(cls.begin(), cls.end());
        cls.erase(std::unique(cls.begin(), cls.end()), cls.end());
        // numerically grazing sample: fall back to its own interval's class
        if (cls.empty()) {
            const auto& prim = scene[intervals[s.interval].prim];
            cls.push_back(prim.semantic_class);
            if (prim.instance_id != kNoInstance)
                out.thing_instances[i].push_back(prim.instance_id);
        }
    }
    return out;
}

// ---- per-frame interval cache ----------------------------------------------

struct IntervalCache {
    int width = 0, height = 0;
    std::vector<std::vector<HitInterval>> pixels;  // row-major

    std::vector<HitInterval>& at(int row, int col) { return pixels[row * width + col]; }
    const std::vector<HitInterval>& at(int row, int col) const {
        return pixels[row * width + col];
    }
};

inline void save_interval_cache(const IntervalCache& c, const std::string& path) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot write interval cache: " + path);
    const char magic[8] = {'P', 'N', 'I', 'C', '0', '0', '0', '1'};
    os.write(magic, 8);
    uint32_t w = c.width, h = c.height;
    os.write(reinterpret_cast<const char*>(&w), 4);
    os.write(reinterpret_cast<const char*>(&h), 4);
    for (const auto& px : c.pixels) {
        uint32_t n = static_cast<uint32_t>(px.size());
        os.write(reinterpret_cast<const char*>(&n), 4);
        for (const auto& iv : px) {
            int32_t k = iv.prim;
            os.write(reinterpret_cast<const char*>(&k), 4);
            os.write(reinterpret_cast<const char*>(&iv.t_near), 8);
            os.write(reinterpret_cast<const char*>(&iv.t_far), 8);
        }
    }
}

inline IntervalCache load_interval_cache(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("cannot open interval cache: " + path);
    char magic[8];
    is.read(magic, 8);
    if (std::string(magic, 8) != "PNIC0001")
        throw std::runtime_error("bad interval cache header: " + path);
    IntervalCache c;
    uint32_t w = 0, h = 0;
    is.read(reinterpret_cast<char*>(&w), 4);
    is.read(reinterpret_cast<char*>(&h), 4);
    c.width = w;
    c.height = h;
    c.pixels.resize(size_t(w) * h);
    for (auto& px : c.pixels) {
        uint32_t n = 0;
        is.read(reinterpret_cast<char*>(&n), 4);
        px.resize(n);
        for (auto& iv : px) {
            int32_t k = 0;
            is.read(reinterpret_cast<char*>(&k), 4);
            is.read(reinterpret_cast<char*>(&iv.t_near), 8);
            is.read(reinterpret_cast<char*>(&iv.t_far), 8);
            iv.prim = k;
        }
    }
    if (!is) throw std::runtime_error("truncated interval cache: " + path);
    return c;
}

}  // namespace pnerf
