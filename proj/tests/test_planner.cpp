#include "keysplat/planner.hpp"

#include <doctest.h>
#include <json.hpp>

#include <cmath>
#include <set>

using namespace keysplat;

namespace {

CameraPose tiny_camera() {
    CameraPose p;  // identity pose, 10x10 image, one pixel per unit at z = 2
    p.intr = {10.0, 10.0, 5.0, 5.0};
    return p;
}

// point whose projection lands exactly on the center of pixel (px, py)
Vec3f point_at_pixel(const CameraPose& pose, int px, int py, double z = 2.0) {
    return pose.camera_to_world(Vec3((px + 0.5 - pose.intr.cx) / pose.intr.fx * z,
                                     (py + 0.5 - pose.intr.cy) / pose.intr.fy * z, z))
        .cast<float>();
}

// structural validity of a batch schedule
void check_schedule(const std::vector<GenerationBatch>& batches, int K, int window) {
    REQUIRE(!batches.empty());
    CHECK(batches.front().conditioning.empty());  // stage 1: input image only
    std::set<int> generated;
    std::set<int> seen;
    for (const auto& b : batches) {
        CHECK(!b.targets.empty());
        CHECK(int(b.targets.size() + b.conditioning.size()) <= window);
        for (int c : b.conditioning) {
            CHECK(generated.count(c) == 1);  // conditioners generated strictly earlier
        }
        for (int t : b.targets) {
            CHECK(t >= 0);
            CHECK(t < K);
            CHECK(seen.insert(t).second);  // exactly once
        }
        for (int t : b.targets) generated.insert(t);
    }
    CHECK(int(seen.size()) == K);
}

}  // namespace

TEST_CASE("coverage ratio: empty, behind-camera, and full-coverage cases") {
    const CameraPose pose = tiny_camera();
    CHECK(coverage_ratio(PointCloud{}, pose, 10, 10, 2) == 0.0);

    PointCloud behind;
    for (int i = 0; i < 50; ++i) behind.points.push_back(Vec3f(0.1f * i, 0.0f, -3.0f));
    CHECK(coverage_ratio(behind, pose, 10, 10, 2) == 0.0);

    // lattice of points with spacing 2 <= splat radius 2 covers every pixel
    PointCloud lattice;
    for (int y = 0; y < 10; y += 2)
        for (int x = 0; x < 10; x += 2) lattice.points.push_back(point_at_pixel(pose, x, y));
    CHECK(coverage_ratio(lattice, pose, 10, 10, 2) == 1.0);
}

TEST_CASE("coverage ratio with radius zero counts exact pixel hits") {
    const CameraPose pose = tiny_camera();
    PointCloud half;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 5; ++x) half.points.push_back(point_at_pixel(pose, x, y));
    CHECK(coverage_ratio(half, pose, 10, 10, 0) == 0.5);

    // duplicate points mark the same pixels, ratio unchanged
    PointCloud doubled = half;
    doubled.points.insert(doubled.points.end(), half.points.begin(), half.points.end());
    CHECK(coverage_ratio(doubled, pose, 10, 10, 0) == 0.5);

    // points outside the image mark nothing
    PointCloud outside;
    outside.points.push_back(pose.camera_to_world(Vec3(50.0, 0.0, 2.0)).cast<float>());
    CHECK(coverage_ratio(outside, pose, 10, 10, 3) == 0.0);
}

TEST_CASE("optional z-test suppresses occluded points") {
    const CameraPose pose = tiny_camera();
    // synthetic depth map: wall at z = 2 everywhere
    std::vector<float> depth(100, 2.0f);

    PointCloud on_wall, behind_wall;
    for (int y = 0; y < 10; ++y)
        for (int x = 0; x < 10; ++x) {
            on_wall.points.push_back(point_at_pixel(pose, x, y, 2.0));
            behind_wall.points.push_back(point_at_pixel(pose, x, y, 6.0));
        }
    CHECK(coverage_ratio(on_wall, pose, 10, 10, 0, &depth) == 1.0);
    CHECK(coverage_ratio(behind_wall, pose, 10, 10, 0, &depth) == 0.0);
    // same occluded cloud without the z-test marks everything (default behavior)
    CHECK(coverage_ratio(behind_wall, pose, 10, 10, 0) == 1.0);
}

TEST_CASE("iterative selection: threshold floor and ceiling") {
    const CameraPose pose = tiny_camera();
    std::vector<PointCloud> clouds;
    std::vector<CameraPose> poses;
    for (int f = 0; f < 5; ++f) {
        PointCloud c;
        for (int i = 0; i < 10; ++i) c.points.push_back(point_at_pixel(pose, (f * 2) % 10, i));
        clouds.push_back(std::move(c));
        poses.push_back(pose);
    }

    const CoverageReport floor = select_keyframes(clouds, poses, 0.0, 10, 10, 0);
    CHECK(floor.selected_indices() == std::vector<int>{0});
    CHECK(floor.ratios[0] == 1.0);
    for (std::size_t i = 1; i < floor.ratios.size(); ++i) CHECK(floor.ratios[i] < 1.0);

    // no frame fully covered by its predecessors -> ceiling selects everything
    const CoverageReport ceil = select_keyframes(clouds, poses, 1.01, 10, 10, 0);
    CHECK(int(ceil.selected_indices().size()) == 5);
}

TEST_CASE("hand-simulated three-frame selection trace") {
    const CameraPose pose = tiny_camera();
    // frame 0 covers 80 pixels; frame 1 adds 15 more; frame 2 is examined
    // against the merged cloud which covers 95.
    PointCloud c0, c1, c2;
    for (int i = 0; i < 80; ++i) c0.points.push_back(point_at_pixel(pose, i % 10, i / 10));
    for (int i = 80; i < 95; ++i) c1.points.push_back(point_at_pixel(pose, i % 10, i / 10));
    for (int i = 0; i < 100; ++i) c2.points.push_back(point_at_pixel(pose, i % 10, i / 10));

    const CoverageReport r =
        select_keyframes({c0, c1, c2}, {pose, pose, pose}, 0.9, 10, 10, 0);
    CHECK(r.ratios[0] == 1.0);
    CHECK(r.ratios[1] == 0.8);    // against c0 only
    CHECK(r.ratios[2] == 0.95);   // against c0 merged with c1
    CHECK(r.selected == std::vector<bool>{true, true, false});

    // not-selected frames always have recorded ratio >= tau
    for (std::size_t i = 0; i < r.selected.size(); ++i)
        if (!r.selected[i]) CHECK(r.ratios[i] >= r.tau);
}

TEST_CASE("uniform keyframe indices") {
    CHECK(uniform_keyframe_indices(10, 2) == std::vector<int>{0, 9});
    CHECK(uniform_keyframe_indices(9, 3) == std::vector<int>{0, 4, 8});

    const auto idx = uniform_keyframe_indices(600, 35);
    REQUIRE(int(idx.size()) == 35);
    CHECK(idx.front() == 0);
    CHECK(idx.back() == 599);
    const int max_gap = (599 + 33) / 34;  // ceil(599/34)
    for (std::size_t i = 1; i < idx.size(); ++i) {
        CHECK(idx[i] > idx[i - 1]);
        CHECK(idx[i] - idx[i - 1] <= max_gap);
    }

    CHECK_THROWS_AS(uniform_keyframe_indices(10, 1), InvalidCount);
    CHECK_THROWS_AS(uniform_keyframe_indices(10, 11), InvalidCount);
    CHECK_NOTHROW(uniform_keyframe_indices(10, 10));
}

TEST_CASE("generation batches: capacity and the worked 14-keyframe schedule") {
    const auto one = plan_generation_batches(8, 8);
    REQUIRE(one.size() == 1);
    CHECK(one[0].targets == std::vector<int>{0, 1, 2, 3, 4, 5, 6, 7});
    CHECK(one[0].conditioning.empty());

    const auto small = plan_generation_batches(4, 8);
    REQUIRE(small.size() == 1);
    CHECK(small[0].targets == std::vector<int>{0, 1, 2, 3});

    const auto plan14 = plan_generation_batches(14, 8);
    check_schedule(plan14, 14, 8);
    CHECK(plan14[0].targets == std::vector<int>{0, 2, 4, 6, 7, 9, 11, 13});
    for (std::size_t b = 1; b < plan14.size(); ++b) {
        CHECK(plan14[b].conditioning.size() == 2);
        CHECK(int(plan14[b].targets.size()) <= 6);
        // conditioning brackets the targets: nearest generated on each side
        CHECK(plan14[b].conditioning.front() < plan14[b].targets.front());
        CHECK(plan14[b].conditioning.back() > plan14[b].targets.back());
    }
}

TEST_CASE("generation batches: exhaustive structural sweep") {
    for (int window : {2, 3, 4, 8, 16}) {
        for (int K = 1; K <= 40; ++K) {
            const auto plan = plan_generation_batches(K, window);
            check_schedule(plan, K, window);
        }
    }
    CHECK_THROWS_AS(plan_generation_batches(0, 8), InvalidCount);
    CHECK_THROWS(plan_generation_batches(5, 1));
}

TEST_CASE("gap splitting keeps conditioners adjacent to their chunk") {
    const auto plan = plan_generation_batches(20, 4);
    check_schedule(plan, 20, 4);
    // batch 1 = {0, 6, 13, 19}; first gap 1..5 must split under capacity 2
    CHECK(plan[0].targets == std::vector<int>{0, 6, 13, 19});
    CHECK(plan[1].targets == std::vector<int>{1, 2});
    CHECK(plan[1].conditioning == std::vector<int>{0, 6});
    CHECK(plan[2].targets == std::vector<int>{3, 4});
    CHECK(plan[2].conditioning == std::vector<int>{2, 6});  // left anchor from prior chunk
    CHECK(plan[3].targets == std::vector<int>{5});
    CHECK(plan[3].conditioning == std::vector<int>{4, 6});
}

TEST_CASE("keyframe plan combines indices and batches and serializes to JSON") {
    const KeyframePlan plan = make_keyframe_plan(600, 14, 8);
    CHECK(plan.count == 14);
    CHECK(int(plan.indices.size()) == 14);
    CHECK(plan.indices.front() == 0);
    CHECK(plan.indices.back() == 599);

    const auto j = nlohmann::json::parse(plan.to_json());
    CHECK(j.at("count").get<int>() == 14);
    CHECK(j.at("indices").get<std::vector<int>>() == plan.indices);
    REQUIRE(j.at("batches").is_array());
    CHECK(j.at("batches").size() == plan.batches.size());
    CHECK(j.at("batches")[0].at("conditioning").empty());
    CHECK(j.at("batches")[0].at("targets").get<std::vector<int>>() == plan.batches[0].targets);

    CoverageReport r;
    r.tau = 0.9;
    r.ratios = {1.0, 0.8, 0.95};
    r.selected = {true, true, false};
    const auto rj = nlohmann::json::parse(r.to_json());
    CHECK(rj.at("tau").get<double>() == 0.9);
    CHECK(rj.at("ratios").get<std::vector<double>>() == r.ratios);
    CHECK(rj.at("selected").get<std::vector<bool>>() == r.selected);
}

TEST_CASE("selection runs at dense-trajectory scale well under budget") {
    // 100 frames of synthetic clouds, sequential accumulation
    const CameraPose pose = tiny_camera();
    std::mt19937_64 rng(3);
    std::vector<PointCloud> clouds(100);
    std::vector<CameraPose> poses(100);
    for (int f = 0; f < 100; ++f) {
        CameraPose p = pose;
        p.translation = Vec3(0.03 * f, 0, 0);
        p.intr = {128.0, 128.0, 128.0, 128.0};
        poses[f] = p;
        for (int i = 0; i < 1500; ++i) {
            clouds[f].points.push_back(
                p.camera_to_world(Vec3(uniform_in(rng, -2, 2), uniform_in(rng, -2, 2),
                                       uniform_in(rng, 2, 4)))
                    .cast<float>());
        }
    }
    const auto t0 = std::chrono::steady_clock::now();
    const CoverageReport r = select_keyframes(clouds, poses, 0.9, 256, 256, 2);
    const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    MESSAGE("selection over 100 frames x 1500 points: ", secs, " s, selected ",
            r.selected_indices().size());
    CHECK(secs < 10.0);
    CHECK(r.selected[0]);
}
