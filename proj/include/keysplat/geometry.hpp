#pragma once

#include <Eigen/Core>
#include <Eigen/Geometry>

#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

namespace keysplat {

using Vec3 = Eigen::Vector3d;
using Mat3 = Eigen::Matrix3d;

struct NonOrthonormalInput : std::runtime_error {
    explicit NonOrthonormalInput(double max_deviation)
        : std::runtime_error("rotation matrix is not orthonormal (max deviation " +
                             std::to_string(max_deviation) + ")"),
          deviation(max_deviation) {}
    double deviation;
};

struct EmptyTrajectory : std::runtime_error {
    EmptyTrajectory() : std::runtime_error("trajectory has no poses") {}
};

struct InvalidFactor : std::runtime_error {
    explicit InvalidFactor(long long factor)
        : std::runtime_error("interpolation factor must be >= 1, got " + std::to_string(factor)) {}
};

/// Unit quaternion. (w,x,y,z) and (-w,-x,-y,-z) encode the same rotation;
/// canonical() picks the representative with w >= 0 (first nonzero component
/// positive on the w == 0 boundary).
struct Quat {
    double w = 1.0, x = 0.0, y = 0.0, z = 0.0;

    Quat() = default;
    Quat(double w_, double x_, double y_, double z_) : w(w_), x(x_), y(y_), z(z_) {}

    static Quat identity() { return {1.0, 0.0, 0.0, 0.0}; }
    static Quat from_axis_angle(const Vec3& axis, double angle_rad);
    // Throws NonOrthonormalInput unless R is orthonormal with det +1 (1e-6).
    static Quat from_matrix(const Mat3& r);

    double norm() const { return std::sqrt(w * w + x * x + y * y + z * z); }
    double dot(const Quat& o) const { return w * o.w + x * o.x + y * o.y + z * o.z; }

    Quat normalized() const;
    Quat canonical() const;
    Quat conjugate() const { return {w, -x, -y, -z}; }

    Quat operator*(const Quat& o) const;
    Quat operator-() const { return {-w, -x, -y, -z}; }

    Vec3 rotate(const Vec3& v) const;
    Mat3 to_matrix() const;

    /// Rotation angle in [0, pi] between the two rotations (double cover folded).
    double angle_to(const Quat& o) const;
};

/// Geodesic interpolation with shortest-path sign handling; falls back to
/// normalized lerp below 1e-7 radians. Inputs are normalized defensively.
Quat slerp(const Quat& q0, const Quat& q1, double t);

struct Intrinsics {
    double fx = 1.0, fy = 1.0, cx = 0.0, cy = 0.0;
};

/// World-from-camera rigid pose plus pinhole intrinsics. Camera frame is
/// right-handed, +x right, +y down, +z forward.
struct CameraPose {
    Quat rotation;       // world-from-camera
    Vec3 translation = Vec3::Zero();
    Intrinsics intr;

    Vec3 center() const { return translation; }
    Vec3 camera_to_world(const Vec3& p_cam) const { return rotation.rotate(p_cam) + translation; }
    Vec3 world_to_camera(const Vec3& p_world) const {
        return rotation.conjugate().rotate(p_world - translation);
    }
    /// Unit forward (+z), right (+x) and down (+y) axes in world coordinates.
    Vec3 forward() const { return rotation.rotate(Vec3(0, 0, 1)); }

    CameraPose inverse_convention() const;  // world-from-camera <-> camera-from-world
};

struct Trajectory {
    std::vector<CameraPose> poses;
    double fps = 30.0;

    size_t size() const { return poses.size(); }
    bool empty() const { return poses.empty(); }
    double duration_s() const { return poses.empty() ? 0.0 : (poses.size() - 1) / fps; }
    double timestamp(size_t i) const { return static_cast<double>(i) / fps; }
};

/// 7-DoF similarity: p -> scale * R * p + t. Composition and inversion closed.
struct SimilarityTransform {
    double scale = 1.0;
    Quat rotation;
    Vec3 translation = Vec3::Zero();

    static SimilarityTransform identity() { return {}; }

    Vec3 apply(const Vec3& p) const { return scale * rotation.rotate(p) + translation; }
    /// Camera center moves by the point map, orientation is left-multiplied,
    /// intrinsics are untouched.
    CameraPose apply(const CameraPose& pose) const;

    SimilarityTransform inverse() const;
    /// (a * b) means apply b first, then a.
    SimilarityTransform operator*(const SimilarityTransform& o) const;
};

struct ProjectedPoint {
    double u = 0.0, v = 0.0, depth = 0.0;
};

inline constexpr double kNearPlane = 1e-4;

/// Pinhole projection. Empty when the point is behind the near plane or the
/// pixel falls outside [0,W) x [0,H).
std::optional<ProjectedPoint> project_point(const Vec3& p_world, const CameraPose& pose,
                                            int width, int height);

/// Upsample: output has (len-1)*factor + 1 poses at fps*factor. Rotations are
/// slerped, translations lerped, intrinsics copied from the earlier endpoint.
/// Original poses are preserved bit-exactly at indices i*factor.
Trajectory interpolate_trajectory(const Trajectory& traj, long long factor);

Trajectory apply_transform(const SimilarityTransform& s, const Trajectory& traj);

enum class PoseConvention { WorldFromCamera, CameraFromWorld };

/// Pose text format, one line per frame:
///   frame_index qw qx qy qz tx ty tz fx fy cx cy
/// `#` starts a comment. save_trajectory emits an `# fps <value>` comment that
/// load_trajectory picks up; values round-trip exactly.
void save_trajectory(const std::string& path, const Trajectory& traj);
Trajectory load_trajectory(const std::string& path,
                           PoseConvention convention = PoseConvention::WorldFromCamera,
                           std::optional<double> fps_override = std::nullopt);

}  // namespace keysplat
