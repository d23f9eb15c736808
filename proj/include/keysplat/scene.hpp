#pragma once

#include "keysplat/geometry.hpp"

#include <Eigen/Core>

#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace keysplat {

using Vec3f = Eigen::Vector3f;

struct UnknownRecipe : std::runtime_error {
    explicit UnknownRecipe(const std::string& name)
        : std::runtime_error("unknown scene recipe: " + name) {}
};

struct UnknownKind : std::runtime_error {
    explicit UnknownKind(const std::string& name)
        : std::runtime_error("unknown trajectory kind: " + name) {}
};

/// Anisotropic splat primitive. scale holds per-axis standard deviations;
/// covariance R diag(scale^2) R^T is SPD by construction.
struct Gaussian3D {
    Vec3f mean = Vec3f::Zero();
    Vec3f scale = Vec3f::Ones();
    float qw = 1.0f, qx = 0.0f, qy = 0.0f, qz = 0.0f;
    float opacity = 1.0f;
    Vec3f color = Vec3f::Zero();
};

struct GaussianScene {
    std::vector<Gaussian3D> gaussians;
    Vec3f background = Vec3f(0.5f, 0.5f, 0.5f);

    size_t size() const { return gaussians.size(); }
    bool empty() const { return gaussians.empty(); }
};

/// Maps every gaussian through s: means by the point map, scales by the scale
/// factor, orientations left-multiplied by the rotation.
GaussianScene apply_transform(const SimilarityTransform& s, const GaussianScene& scene);

struct BoundingBox {
    Vec3 min = Vec3::Zero();
    Vec3 max = Vec3::Zero();
    Vec3 extent() const { return max - min; }
    Vec3 center() const { return 0.5 * (min + max); }
    double diagonal() const { return extent().norm(); }
};

BoundingBox scene_bounds(const GaussianScene& scene);

struct PointCloud {
    std::vector<Vec3f> points;
    std::vector<int32_t> frame_index;  // -1 when the source frame is unknown

    size_t size() const { return points.size(); }
    bool empty() const { return points.empty(); }
    void append(const PointCloud& other);
};

// --- binary scene file ---------------------------------------------------
// Little-endian: magic "SPLATv1", uint32 count, then per-gaussian records
// mean[3]f32 scale[3]f32 quat[4]f32 opacity f32 rgb[3]f32.
void save_scene(const std::string& path, const GaussianScene& scene);
GaussianScene load_scene(const std::string& path);

// ASCII point cloud, one `x y z frame_idx` line per point.
void save_pointcloud(const std::string& path, const PointCloud& cloud);
PointCloud load_pointcloud(const std::string& path);

// --- procedural recipes ---------------------------------------------------

struct SceneRecipe {
    std::string name = "room";  // room | cloudfield | checker-plane
    int budget = 50000;         // primitive budget; emitted count lands in [0.9, 1.0] * budget
};

/// Camera-accessible region and the natural look target of a recipe. Derived
/// from the recipe alone so trajectory generation stays decoupled from the
/// gaussian list.
struct SceneLayout {
    BoundingBox free_space;
    Vec3 focus = Vec3::Zero();
    double orbit_radius = 1.0;
};

GaussianScene generate_scene(const SceneRecipe& recipe, uint64_t seed);
SceneLayout scene_layout(const SceneRecipe& recipe);

// --- trajectory generators -------------------------------------------------

struct TrajectoryRecipe {
    std::string kind = "orbit";  // orbit | dolly | smooth-random-walk
    double duration_s = 20.0;
    double fps = 30.0;
    Intrinsics intr{221.7, 221.7, 128.0, 128.0};  // 60 deg horizontal FOV at 256 px
};

Trajectory generate_trajectory(const TrajectoryRecipe& recipe, uint64_t seed,
                               const SceneLayout& layout);

/// Circle of radius `radius` around `pivot` in the z = pivot.z plane, camera
/// looking at `focus`. Every center is exactly `radius` from the pivot.
Trajectory make_orbit_trajectory(const Vec3& pivot, double radius, const Vec3& focus,
                                 double start_angle_rad, double sweep_rad, double duration_s,
                                 double fps, const Intrinsics& intr);

/// World-from-camera pose at `eye` looking toward `target` (+z forward,
/// +y down, world up hint +z).
CameraPose look_at(const Vec3& eye, const Vec3& target, const Intrinsics& intr);

// --- deterministic sampling helpers ----------------------------------------
// mt19937_64 plus fixed mappings, so generated content is pinned down to the
// bit regardless of standard-library distribution internals.

inline uint64_t hash_u64(uint64_t x) {
    // splitmix64 finalizer
    x += 0x9e3779b97f4a7c15ull;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
    return x ^ (x >> 31);
}

inline double uniform01(std::mt19937_64& rng) {
    return static_cast<double>(rng() >> 11) * 0x1.0p-53;
}

inline double uniform_in(std::mt19937_64& rng, double lo, double hi) {
    return lo + (hi - lo) * uniform01(rng);
}

double normal01(std::mt19937_64& rng);

}  // namespace keysplat
