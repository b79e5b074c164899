#pragma once

// Scene container and its JSON file format (schema-versioned, lossless
// round-trip on canonical form): class table, bounding primitives, camera
// intrinsics and per-frame stereo extrinsics, normalization bounds.

#include "pnerf/geometry.hpp"

#include <nlohmann/json.hpp>

#include <fstream>
#include <set>
#include <string>
#include <vector>

namespace pnerf {

using json = nlohmann::json;

struct ClassTable {
    std::vector<std::string> names;
    std::vector<bool> is_thing;
    int sky_class = -1;
    std::vector<int> instance_ids;  // all thing instance ids in the scene, sorted

    int num_classes() const { return static_cast<int>(names.size()); }
    int num_instances() const { return static_cast<int>(instance_ids.size()); }

    int instance_index(int instance_id) const {
        auto it = std::lower_bound(instance_ids.begin(), instance_ids.end(), instance_id);
        if (it == instance_ids.end() || *it != instance_id) return -1;
        return static_cast<int>(it - instance_ids.begin());
    }
};

struct CameraIntrinsics {
    int width = 0, height = 0;
    double fx = 0, fy = 0, cx = 0, cy = 0;
};

struct CameraPose {
    Mat3 rotation = Mat3::Identity();  // camera -> world
    Vec3 translation = Vec3::Zero();
};

struct Frame {
    int index = 0;
    CameraPose left, right;
};

struct SceneFile {
    static constexpr int kSchemaVersion = 1;
    ClassTable classes;
    std::vector<BoundingPrimitive> primitives;
    CameraIntrinsics camera;
    std::vector<Frame> frames;
    Vec3 center = Vec3::Zero();
    double half_extent = 1.0;

    // Camera convention: x right, y down, z forward (pixel (row, col)).
    Ray pixel_ray(const CameraPose& pose, int row, int col, int frame_index = -1) const {
        Vec3 dir_cam((col + 0.5 - camera.cx) / camera.fx,
                     (row + 0.5 - camera.cy) / camera.fy, 1.0);
        Ray r;
        r.origin = pose.translation;
        r.dir = (pose.rotation * dir_cam).normalized();
        r.row = row;
        r.col = col;
        r.frame = frame_index;
        return r;
    }

    Vec3 normalize_point(const Vec3& x) const { return (x - center) / half_extent; }

    void rebuild_instance_table() {
        std::set<int> ids;
        for (const auto& p : primitives)
            if (p.instance_id != kNoInstance) ids.insert(p.instance_id);
        classes.instance_ids.assign(ids.begin(), ids.end());
    }

    void validate() const {
        int m = classes.num_classes();
        if (classes.sky_class < 0 || classes.sky_class >= m)
            throw std::invalid_argument("scene: sky_class out of range");
        if (classes.is_thing.at(classes.sky_class))
            throw std::invalid_argument("scene: sky must be a stuff class");
        for (const auto& p : primitives) {
            p.validate();
            if (p.semantic_class < 0 || p.semantic_class >= m)
                throw std::invalid_argument("scene: primitive " + std::to_string(p.id) +
                                            " has invalid semantic_class");
            bool thing = classes.is_thing[p.semantic_class];
            if (thing && p.instance_id == kNoInstance)
                throw std::invalid_argument("scene: thing primitive " + std::to_string(p.id) +
                                            " missing instance_id");
            if (!thing && p.instance_id != kNoInstance)
                throw std::invalid_argument("scene: stuff primitive " + std::to_string(p.id) +
                                            " must not carry instance_id");
        }
        if (half_extent <= 0) throw std::invalid_argument("scene: half_extent must be positive");
    }
};

namespace scene_detail {

inline json mat3_to_json(const Mat3& m) {
    json a = json::array();
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) a.push_back(m(r, c));
    return a;
}
inline Mat3 mat3_from_json(const json& a) {
    Mat3 m;
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) m(r, c) = a.at(r * 3 + c).get<double>();
    return m;
}
inline json vec3_to_json(const Vec3& v) { return json::array({v.x(), v.y(), v.z()}); }
inline Vec3 vec3_from_json(const json& a) {
    return Vec3(a.at(0).get<double>(), a.at(1).get<double>(), a.at(2).get<double>());
}

inline std::string kind_name(PrimKind k) {
    switch (k) {
        case PrimKind::Cuboid: return "cuboid";
        case PrimKind::Ellipsoid: return "ellipsoid";
        case PrimKind::ExtrudedPolygon: return "extruded_polygon";
    }
    return "?";
}
inline PrimKind kind_from_name(const std::string& s) {
    if (s == "cuboid") return PrimKind::Cuboid;
    if (s == "ellipsoid") return PrimKind::Ellipsoid;
    if (s == "extruded_polygon") return PrimKind::ExtrudedPolygon;
    throw std::invalid_argument("scene: unknown primitive kind '" + s + "'");
}

inline json pose_to_json(const CameraPose& p) {
    return json{{"rotation", mat3_to_json(p.rotation)},
                {"translation", vec3_to_json(p.translation)}};
}
inline CameraPose pose_from_json(const json& j) {
    CameraPose p;
    p.rotation = mat3_from_json(j.at("rotation"));
    p.translation = vec3_from_json(j.at("translation"));
    return p;
}

}  // namespace scene_detail

inline json scene_to_json(const SceneFile& s) {
    using namespace scene_detail;
    json j;
    j["schema_version"] = SceneFile::kSchemaVersion;
    json classes = json::array();
    for (int i = 0; i < s.classes.num_classes(); ++i)
        classes.push_back({{"name", s.classes.names[i]}, {"thing", (bool)s.classes.is_thing[i]}});
    j["classes"] = classes;
    j["sky_class"] = s.classes.sky_class;
    json prims = json::array();
    for (const auto& p : s.primitives) {
        json pj{{"id", p.id},
                {"kind", kind_name(p.kind)},
                {"rotation", mat3_to_json(p.rotation)},
                {"translation", vec3_to_json(p.translation)},
                {"size", vec3_to_json(p.size)},
                {"semantic_class", p.semantic_class}};
        if (p.kind == PrimKind::ExtrudedPolygon) {
            json poly = json::array();
            for (const auto& v : p.polygon) poly.push_back(json::array({v.x(), v.y()}));
            pj["polygon"] = poly;
        }
        if (p.instance_id != kNoInstance) pj["instance_id"] = p.instance_id;
        prims.push_back(pj);
    }
    j["primitives"] = prims;
    j["camera"] = {{"width", s.camera.width}, {"height", s.camera.height},
                   {"fx", s.camera.fx},       {"fy", s.camera.fy},
                   {"cx", s.camera.cx},       {"cy", s.camera.cy}};
    json frames = json::array();
    for (const auto& f : s.frames)
        frames.push_back({{"index", f.index},
                          {"left", pose_to_json(f.left)},
                          {"right", pose_to_json(f.right)}});
    j["frames"] = frames;
    j["center"] = vec3_to_json(s.center);
    j["half_extent"] = s.half_extent;
    return j;
}

inline SceneFile scene_from_json(const json& j) {
    using namespace scene_detail;
    if (j.at("schema_version").get<int>() != SceneFile::kSchemaVersion)
        throw std::invalid_argument("scene: unsupported schema_version");
    SceneFile s;
    for (const auto& c : j.at("classes")) {
        s.classes.names.push_back(c.at("name").get<std::string>());
        s.classes.is_thing.push_back(c.at("thing").get<bool>());
    }
    s.classes.sky_class = j.at("sky_class").get<int>();
    for (const auto& pj : j.at("primitives")) {
        BoundingPrimitive p;
        p.id = pj.at("id").get<int>();
        p.kind = kind_from_name(pj.at("kind").get<std::string>());
        p.rotation = mat3_from_json(pj.at("rotation"));
        p.translation = vec3_from_json(pj.at("translation"));
        p.size = vec3_from_json(pj.at("size"));
        p.semantic_class = pj.at("semantic_class").get<int>();
        if (pj.contains("instance_id")) p.instance_id = pj.at("instance_id").get<int>();
        if (p.kind == PrimKind::ExtrudedPolygon)
            for (const auto& v : pj.at("polygon"))
                p.polygon.emplace_back(v.at(0).get<double>(), v.at(1).get<double>());
        s.primitives.push_back(std::move(p));
    }
    const auto& cj = j.at("camera");
    s.camera = {cj.at("width").get<int>(), cj.at("height").get<int>(),
                cj.at("fx").get<double>(), cj.at("fy").get<double>(),
                cj.at("cx").get<double>(), cj.at("cy").get<double>()};
    for (const auto& fj : j.at("frames")) {
        Frame f;
        f.index = fj.at("index").get<int>();
        f.left = pose_from_json(fj.at("left"));
        f.right = pose_from_json(fj.at("right"));
        s.frames.push_back(f);
    }
    s.center = vec3_from_json(j.at("center"));
    s.half_extent = j.at("half_extent").get<double>();
    s.rebuild_instance_table();
    s.validate();
    return s;
}

inline void save_scene(const SceneFile& s, const std::string& path) {
    std::ofstream os(path);
    if (!os) throw std::runtime_error("cannot write scene file: " + path);
    os << scene_to_json(s).dump(2) << "\n";
}

inline SceneFile load_scene(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("cannot open scene file: " + path);
    json j;
    try {
        is >> j;
    } catch (const json::exception& e) {
        throw std::runtime_error("scene parse error in " + path + ": " + e.what());
    }
    try {
        return scene_from_json(j);
    } catch (const json::exception& e) {
        throw std::runtime_error("scene schema error in " + path + ": " + e.what());
    }
}

}  // namespace pnerf
