#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "pnerf/geometry.hpp"

#include <cstdio>
#include <random>

using namespace pnerf;

namespace {

Ray make_ray(Vec3 o, Vec3 d) {
    Ray r;
    r.origin = o;
    r.dir = d.normalized();
    return r;
}

BoundingPrimitive cuboid(Vec3 center, Vec3 half, int cls = 0, int inst = 0) {
    BoundingPrimitive p;
    p.kind = PrimKind::Cuboid;
    p.translation = center;
    p.size = half;
    p.semantic_class = cls;
    p.instance_id = inst;
    return p;
}

BoundingPrimitive ellipsoid(Vec3 center, Vec3 semi, int cls = 0) {
    BoundingPrimitive p;
    p.kind = PrimKind::Ellipsoid;
    p.translation = center;
    p.size = semi;
    p.semantic_class = cls;
    return p;
}

BoundingPrimitive tri_prism() {
    BoundingPrimitive p;
    p.kind = PrimKind::ExtrudedPolygon;
    p.polygon = {{0, 0}, {1, 0}, {0, 1}};
    p.size = Vec3(1, 1, 1);
    return p;
}

Mat3 random_rotation(std::mt19937& rng) {
    std::normal_distribution<double> n(0, 1);
    Eigen::Quaterniond q(n(rng), n(rng), n(rng), n(rng));
    q.normalize();
    return q.toRotationMatrix();
}

// Independent oracle: containment scan along the ray with bisection-refined
// entry/exit, using only the point-in-solid predicate.
std::optional<std::pair<double, double>> scan_interval(const Ray& ray,
                                                       const BoundingPrimitive& prim,
                                                       double t_max, double step) {
    double first = -1, last = -1;
    for (double t = step / 2; t < t_max; t += step) {
        if (point_in_primitive(ray.origin + t * ray.dir, prim)) {
            if (first < 0) first = t;
            last = t;
        }
    }
    if (first < 0) return {};
    auto bisect = [&](double lo, double hi, bool enter) {
        for (int i = 0; i < 60; ++i) {
            double mid = 0.5 * (lo + hi);
            bool in = point_in_primitive(ray.origin + mid * ray.dir, prim);
            if (in == enter) hi = mid;
            else lo = mid;
        }
        return 0.5 * (lo + hi);
    };
    double t_near;
    if (first <= step && point_in_primitive(ray.origin + 1e-9 * ray.dir, prim))
        t_near = 0.0;
    else
        t_near = bisect(std::max(first - step, 0.0), first, true);
    double t_far = bisect(last, std::min(last + step, t_max), false);
    return std::make_pair(std::max(t_near, 0.0), t_far);
}

}  // namespace

TEST_CASE("axis-aligned cuboid slab case") {
    auto h = intersect(make_ray({-2, 0, 0}, {1, 0, 0}), cuboid({0, 0, 0}, {0.5, 0.5, 0.5}));
    REQUIRE(h);
    CHECK(h->t_near == doctest::Approx(1.5));
    CHECK(h->t_far == doctest::Approx(2.5));
}

TEST_CASE("unit sphere chord") {
    auto h = intersect(make_ray({-2, 0, 0}, {1, 0, 0}), ellipsoid({0, 0, 0}, {1, 1, 1}));
    REQUIRE(h);
    CHECK(h->t_near == doctest::Approx(1.0));
    CHECK(h->t_far == doctest::Approx(3.0));
}

TEST_CASE("miss and behind-origin cases") {
    CHECK_FALSE(intersect(make_ray({-2, 5, 0}, {1, 0, 0}), cuboid({0, 0, 0}, {1, 1, 1})));
    CHECK_FALSE(intersect(make_ray({5, 0, 0}, {1, 0, 0}), cuboid({0, 0, 0}, {1, 1, 1})));
    // origin inside: clipped to t > 0
    auto h = intersect(make_ray({0, 0, 0}, {1, 0, 0}), cuboid({0, 0, 0}, {1, 1, 1}));
    REQUIRE(h);
    CHECK(h->t_near == doctest::Approx(0.0));
    CHECK(h->t_far == doctest::Approx(1.0));
}

TEST_CASE("point containment basics") {
    CHECK(point_in_primitive({0, 0, 0}, cuboid({0, 0, 0}, {1, 1, 1})));
    CHECK_FALSE(point_in_primitive({0, 0, 1.001}, ellipsoid({0, 0, 0}, {1, 1, 1})));
    CHECK(point_in_primitive({0.25, 0.25, 0.5}, tri_prism()));
    CHECK_FALSE(point_in_primitive({0.9, 0.9, 0.5}, tri_prism()));
}

TEST_CASE("polygon validation rejects concave and degenerate loops") {
    BoundingPrimitive p = tri_prism();
    p.polygon = {{0, 0}, {2, 0}, {1, 1}, {2, 2}, {0, 2}};  // concave notch
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p.polygon = {{0, 0}, {1, 0}};
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
    p = tri_prism();
    p.size.z() = 0;
    CHECK_THROWS_AS(p.validate(), std::invalid_argument);
}

TEST_CASE("random rotated cuboid vs dense scan oracle") {
    std::mt19937 rng(21);
    std::uniform_real_distribution<double> uni(-1, 1);
    BoundingPrimitive p = cuboid({0.3, -0.2, 0.5}, {0.8, 0.5, 1.1});
    p.rotation = random_rotation(rng);
    for (int i = 0; i < 5; ++i) {
        Ray ray = make_ray({uni(rng) * 0.5 - 4.0, uni(rng), uni(rng)},
                           {1.0, 0.3 * uni(rng), 0.3 * uni(rng)});
        auto fast = intersect(ray, p);
        auto slow = scan_interval(ray, p, 12.0, 1e-4);
        REQUIRE(bool(fast) == bool(slow));
        if (fast) {
            CHECK(std::abs(fast->t_near - slow->first) < 1e-3);
            CHECK(std::abs(fast->t_far - slow->second) < 1e-3);
        }
    }
}

TEST_CASE("intersection fuzz: all kinds vs containment scan") {
    std::mt19937 rng(99);
    std::uniform_real_distribution<double> uni(-1, 1);
    std::vector<BoundingPrimitive> prims;
    for (int i = 0; i < 6; ++i) {
        BoundingPrimitive p = cuboid({2 * uni(rng), 2 * uni(rng), 2 * uni(rng)},
                                     {0.3 + std::abs(uni(rng)), 0.3 + std::abs(uni(rng)),
                                      0.3 + std::abs(uni(rng))});
        p.rotation = random_rotation(rng);
        prims.push_back(p);
        BoundingPrimitive e = ellipsoid({2 * uni(rng), 2 * uni(rng), 2 * uni(rng)},
                                        {0.3 + std::abs(uni(rng)), 0.3 + std::abs(uni(rng)),
                                         0.3 + std::abs(uni(rng))});
        e.rotation = random_rotation(rng);
        prims.push_back(e);
        BoundingPrimitive t = tri_prism();
        t.polygon = {{0, 0}, {1.2, 0}, {1.5, 0.9}, {0.4, 1.3}};
        t.size.z() = 0.4 + std::abs(uni(rng));
        t.rotation = random_rotation(rng);
        t.translation = Vec3(2 * uni(rng), 2 * uni(rng), 2 * uni(rng));
        prims.push_back(t);
    }
    int checked = 0, hits = 0;
    for (int i = 0; i < 10000; ++i) {
        const auto& p = prims[i % prims.size()];
        Vec3 origin(4 * uni(rng), 4 * uni(rng), 4 * uni(rng));
        Vec3 aim = (p.translation - origin).normalized();
        Ray ray = make_ray(origin, aim + 0.6 * Vec3(uni(rng), uni(rng), uni(rng)));
        auto fast = intersect(ray, p);
        auto slow = scan_interval(ray, p, 16.0, 0.01);
        // the coarse scan can miss grazing sub-centimeter chords; skip those
        if (fast && !slow && fast->t_far - fast->t_near < 0.02) continue;
        REQUIRE(bool(fast) == bool(slow));
        checked++;
        if (fast) {
            hits++;
            CHECK(std::abs(fast->t_near - slow->first) < 1e-3);
            CHECK(std::abs(fast->t_far - slow->second) < 1e-3);
        }
    }
    CHECK(hits > 1000);
    CHECK(checked > 9000);
}

TEST_CASE("convexity: containment along any ray is a single range") {
    std::mt19937 rng(5);
    std::uniform_real_distribution<double> uni(-1, 1);
    BoundingPrimitive shapes[] = {cuboid({0, 0, 0}, {1, 0.7, 0.5}),
                                  ellipsoid({0, 0, 0}, {1, 0.6, 0.8}), tri_prism()};
    for (auto& p : shapes) {
        p.rotation = random_rotation(rng);
        for (int i = 0; i < 300; ++i) {
            Ray ray = make_ray({3 * uni(rng), 3 * uni(rng), 3 * uni(rng)},
                               {uni(rng) + 1e-3, uni(rng), uni(rng)});
            int transitions = 0;
            bool prev = false;
            for (double t = 0.005; t < 10; t += 0.01) {
                bool in = point_in_primitive(ray.origin + t * ray.dir, p);
                if (in != prev) transitions++;
                prev = in;
            }
            CHECK(transitions <= 2);
        }
    }
}

TEST_CASE("build_intervals: sorting, truncation, sky rules") {
    // 12 collinear primitives: truncated to 10, no sky
    std::vector<BoundingPrimitive> many;
    for (int i = 0; i < 12; ++i) many.push_back(cuboid({2.0 + 3 * i, 0, 0}, {1, 1, 1}, i));
    Ray ray = make_ray({-2, 0, 0}, {1, 0, 0});
    auto ivs = build_intervals(ray, many, 50.0, 10);
    CHECK(ivs.size() == 10);
    for (auto& iv : ivs) CHECK(iv.prim != kSky);
    for (size_t i = 1; i < ivs.size(); ++i) CHECK(ivs[i - 1].t_near <= ivs[i].t_near);

    // no hits: single SKY interval starting at the configured near bound
    auto sky_only = build_intervals(ray, {}, 50.0, 10, 0.5);
    REQUIRE(sky_only.size() == 1);
    CHECK(sky_only[0].prim == kSky);
    CHECK(sky_only[0].t_near == doctest::Approx(0.5));
    CHECK(sky_only[0].t_far == doctest::Approx(50.5));

    // three disjoint primitives at t_near 5, 2, 9: sorted + sky after max t_far
    std::vector<BoundingPrimitive> three = {cuboid({6, 0, 0}, {1, 1, 1}, 0),
                                            cuboid({3, 0, 0}, {1, 1, 1}, 1),
                                            cuboid({10, 0, 0}, {1, 1, 1}, 2)};
    auto o = build_intervals(ray, three, 50.0, 10);
    REQUIRE(o.size() == 4);
    CHECK(o[0].prim == 1);
    CHECK(o[1].prim == 0);
    CHECK(o[2].prim == 2);
    CHECK(o[3].prim == kSky);
    CHECK(o[3].t_near == doctest::Approx(o[2].t_far));
    CHECK(o[3].t_far == doctest::Approx(o[2].t_far + 50.0));
}

TEST_CASE("sample_points: midpoint stratification on one interval") {
    std::mt19937 rng(1);
    std::vector<BoundingPrimitive> scene = {cuboid({1.5, 0, 0}, {0.5, 1, 1}, 3)};
    std::vector<HitInterval> ivs = {{0, 1.0, 2.0}};
    Ray ray = make_ray({0, 0, 0}, {1, 0, 0});
    auto set = sample_points(ray, ivs, scene, 9, 4, false, rng);
    REQUIRE(set.samples.size() == 4);
    CHECK(set.samples[0].t == doctest::Approx(1.125));
    CHECK(set.samples[1].t == doctest::Approx(1.375));
    CHECK(set.samples[2].t == doctest::Approx(1.625));
    CHECK(set.samples[3].t == doctest::Approx(1.875));
    for (int i = 0; i < 3; ++i)
        CHECK(set.samples[i].delta == doctest::Approx(0.25));
    CHECK(set.samples[3].delta == doctest::Approx(0.125));
    for (auto& c : set.candidate_classes) CHECK(c == std::vector<int>{3});
}

TEST_CASE("sample_points: overlap region carries both classes") {
    std::mt19937 rng(2);
    std::vector<BoundingPrimitive> scene = {cuboid({2, 0, 0}, {1, 1, 1}, /*building*/ 1),
                                            cuboid({2.5, 0, 0}, {1, 1, 1}, /*wall*/ 2)};
    Ray ray = make_ray({0, 0, 0}, {1, 0, 0});
    auto ivs = build_intervals(ray, scene, 50.0, 10);
    auto set = sample_points(ray, ivs, scene, 9, 8, false, rng);
    bool found_overlap = false;
    for (size_t i = 0; i < set.samples.size(); ++i) {
        double t = set.samples[i].t;
        if (t > 1.5 && t < 3.0)  // overlap chord
            if (set.candidate_classes[i] == std::vector<int>{1, 2}) found_overlap = true;
    }
    CHECK(found_overlap);
    // t-monotone after merging
    for (size_t i = 1; i < set.samples.size(); ++i)
        CHECK(set.samples[i].t >= set.samples[i - 1].t);
}

TEST_CASE("sample_points containment agrees with the direct predicate") {
    std::mt19937 rng(31);
    std::uniform_real_distribution<double> uni(-1, 1);
    std::vector<BoundingPrimitive> scene;
    scene.push_back(cuboid({3, 0, 0}, {1, 0.8, 0.9}, 0));
    scene.push_back(ellipsoid({5, 0.4, 0}, {1.2, 1.0, 0.8}, 1));
    scene[1].rotation = random_rotation(rng);
    for (int trial = 0; trial < 200; ++trial) {
        Ray ray = make_ray({0, uni(rng), uni(rng)}, {1, 0.2 * uni(rng), 0.2 * uni(rng)});
        auto ivs = build_intervals(ray, scene, 10.0, 10);
        auto set = sample_points(ray, ivs, scene, 9, 4, true, rng);
        for (size_t i = 0; i < set.samples.size(); ++i) {
            if (ivs[set.samples[i].interval].prim == kSky) {
                CHECK(set.candidate_classes[i] == std::vector<int>{9});
                continue;
            }
            std::vector<int> expect;
            for (auto& p : scene)
                if (point_in_primitive(set.samples[i].x, p)) expect.push_back(p.semantic_class);
            std::sort(expect.begin(), expect.end());
            if (!expect.empty()) CHECK(set.candidate_classes[i] == expect);
        }
    }
}

TEST_CASE("interval cache round-trip") {
    IntervalCache c;
    c.width = 2;
    c.height = 2;
    c.pixels = {{{0, 1.0, 2.0}, {kSky, 2.0, 52.0}}, {}, {{3, 0.5, 0.75}}, {{kSky, 0.5, 50.5}}};
    save_interval_cache(c, "cache_test.bin");
    auto d = load_interval_cache("cache_test.bin");
    std::remove("cache_test.bin");
    REQUIRE(d.pixels.size() == 4);
    CHECK(d.at(0, 0).size() == 2);
    CHECK(d.at(0, 0)[1].prim == kSky);
    CHECK(d.at(0, 0)[1].t_far == 52.0);
    CHECK(d.at(0, 1).empty());
    CHECK(d.at(1, 0)[0].prim == 3);
    CHECK(d.at(1, 1)[0].t_near == 0.5);
}
