#include "keysplat/geometry.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace keysplat {

Quat Quat::from_axis_angle(const Vec3& axis, double angle_rad) {
    const double n = axis.norm();
    if (n < 1e-300) return identity();
    const double half = 0.5 * angle_rad;
    const double s = std::sin(half) / n;
    return Quat{std::cos(half), axis.x() * s, axis.y() * s, axis.z() * s};
}

Quat Quat::from_matrix(const Mat3& r) {
    const Mat3 gram = r.transpose() * r - Mat3::Identity();
    double dev = gram.cwiseAbs().maxCoeff();
    dev = std::max(dev, std::abs(r.determinant() - 1.0));
    if (dev > 1e-6) throw NonOrthonormalInput(dev);

    // Shepperd's method: branch on the largest diagonal combination.
    const double t = r.trace();
    Quat q;
    if (t > 0.0) {
        double s = std::sqrt(t + 1.0) * 2.0;
        q = Quat{0.25 * s, (r(2, 1) - r(1, 2)) / s, (r(0, 2) - r(2, 0)) / s,
                 (r(1, 0) - r(0, 1)) / s};
    } else if (r(0, 0) > r(1, 1) && r(0, 0) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(0, 0) - r(1, 1) - r(2, 2)) * 2.0;
        q = Quat{(r(2, 1) - r(1, 2)) / s, 0.25 * s, (r(0, 1) + r(1, 0)) / s,
                 (r(0, 2) + r(2, 0)) / s};
    } else if (r(1, 1) > r(2, 2)) {
        double s = std::sqrt(1.0 + r(1, 1) - r(0, 0) - r(2, 2)) * 2.0;
        q = Quat{(r(0, 2) - r(2, 0)) / s, (r(0, 1) + r(1, 0)) / s, 0.25 * s,
                 (r(1, 2) + r(2, 1)) / s};
    } else {
        double s = std::sqrt(1.0 + r(2, 2) - r(0, 0) - r(1, 1)) * 2.0;
        q = Quat{(r(1, 0) - r(0, 1)) / s, (r(0, 2) + r(2, 0)) / s, (r(1, 2) + r(2, 1)) / s,
                 0.25 * s};
    }
    return q.normalized().canonical();
}

Quat Quat::normalized() const {
    const double n = norm();
    if (n < 1e-300) return identity();
    return {w / n, x / n, y / n, z / n};
}

Quat Quat::canonical() const {
    if (w > 0.0) return *this;
    if (w < 0.0) return -*this;
    if (x > 0.0) return *this;
    if (x < 0.0) return -*this;
    if (y > 0.0) return *this;
    if (y < 0.0) return -*this;
    if (z >= 0.0) return *this;
    return -*this;
}

Quat Quat::operator*(const Quat& o) const {
    return {w * o.w - x * o.x - y * o.y - z * o.z, w * o.x + x * o.w + y * o.z - z * o.y,
            w * o.y - x * o.z + y * o.w + z * o.x, w * o.z + x * o.y - y * o.x + z * o.w};
}

Vec3 Quat::rotate(const Vec3& v) const {
    // v' = v + 2w(u x v) + 2(u x (u x v)) with u = (x,y,z)
    const Vec3 u(x, y, z);
    const Vec3 uv = u.cross(v);
    return v + 2.0 * (w * uv + u.cross(uv));
}

Mat3 Quat::to_matrix() const {
    const double xx = x * x, yy = y * y, zz = z * z;
    const double xy = x * y, xz = x * z, yz = y * z;
    const double wx = w * x, wy = w * y, wz = w * z;
    Mat3 r;
    r << 1 - 2 * (yy + zz), 2 * (xy - wz), 2 * (xz + wy),
         2 * (xy + wz), 1 - 2 * (xx + zz), 2 * (yz - wx),
         2 * (xz - wy), 2 * (yz + wx), 1 - 2 * (xx + yy);
    return r;
}

double Quat::angle_to(const Quat& o) const {
    const double d = std::min(1.0, std::abs(normalized().dot(o.normalized())));
    return 2.0 * std::acos(d);
}

Quat slerp(const Quat& q0, const Quat& q1, double t) {
    Quat a = q0.normalized();
    Quat b = q1.normalized();
    double d = a.dot(b);
    if (d < 0.0) {
        b = -b;
        d = -d;
    }
    d = std::min(d, 1.0);
    const double angle = std::acos(d);
    if (angle < 1e-7) {
        Quat r{a.w + t * (b.w - a.w), a.x + t * (b.x - a.x), a.y + t * (b.y - a.y),
               a.z + t * (b.z - a.z)};
        return r.normalized();
    }
    const double s = std::sin(angle);
    const double c0 = std::sin((1.0 - t) * angle) / s;
    const double c1 = std::sin(t * angle) / s;
    Quat r{c0 * a.w + c1 * b.w, c0 * a.x + c1 * b.x, c0 * a.y + c1 * b.y, c0 * a.z + c1 * b.z};
    return r.normalized();
}

CameraPose CameraPose::inverse_convention() const {
    CameraPose out;
    out.rotation = rotation.conjugate().normalized();
    out.translation = -out.rotation.rotate(translation);
    out.intr = intr;
    return out;
}

CameraPose SimilarityTransform::apply(const CameraPose& pose) const {
    CameraPose out;
    out.rotation = (rotation * pose.rotation).normalized();
    out.translation = apply(pose.translation);
    out.intr = pose.intr;
    return out;
}

SimilarityTransform SimilarityTransform::inverse() const {
    SimilarityTransform inv;
    inv.scale = 1.0 / scale;
    inv.rotation = rotation.conjugate().normalized();
    inv.translation = -inv.scale * inv.rotation.rotate(translation);
    return inv;
}

SimilarityTransform SimilarityTransform::operator*(const SimilarityTransform& o) const {
    SimilarityTransform out;
    out.scale = scale * o.scale;
    out.rotation = (rotation * o.rotation).normalized();
    out.translation = scale * rotation.rotate(o.translation) + translation;
    return out;
}

std::optional<ProjectedPoint> project_point(const Vec3& p_world, const CameraPose& pose,
                                            int width, int height) {
    const Vec3 p = pose.world_to_camera(p_world);
    if (p.z() <= kNearPlane) return std::nullopt;
    ProjectedPoint out;
    out.u = pose.intr.fx * p.x() / p.z() + pose.intr.cx;
    out.v = pose.intr.fy * p.y() / p.z() + pose.intr.cy;
    out.depth = p.z();
    if (out.u < 0.0 || out.u >= width || out.v < 0.0 || out.v >= height) return std::nullopt;
    return out;
}

Trajectory interpolate_trajectory(const Trajectory& traj, long long factor) {
    if (traj.poses.empty()) throw EmptyTrajectory();
    if (factor < 1) throw InvalidFactor(factor);
    Trajectory out;
    out.fps = traj.fps * static_cast<double>(factor);
    if (factor == 1 || traj.poses.size() == 1) {
        out.poses = traj.poses;
        if (traj.poses.size() == 1) out.fps = traj.fps * static_cast<double>(factor);
        return out;
    }
    const size_t n = traj.poses.size();
    out.poses.reserve((n - 1) * factor + 1);
    for (size_t i = 0; i + 1 < n; ++i) {
        const CameraPose& a = traj.poses[i];
        const CameraPose& b = traj.poses[i + 1];
        out.poses.push_back(a);
        for (long long s = 1; s < factor; ++s) {
            const double t = static_cast<double>(s) / static_cast<double>(factor);
            CameraPose mid;
            mid.rotation = slerp(a.rotation, b.rotation, t);
            mid.translation = (1.0 - t) * a.translation + t * b.translation;
            mid.intr = a.intr;
            out.poses.push_back(mid);
        }
    }
    out.poses.push_back(traj.poses.back());
    return out;
}

Trajectory apply_transform(const SimilarityTransform& s, const Trajectory& traj) {
    Trajectory out;
    out.fps = traj.fps;
    out.poses.reserve(traj.poses.size());
    for (const CameraPose& p : traj.poses) out.poses.push_back(s.apply(p));
    return out;
}

void save_trajectory(const std::string& path, const Trajectory& traj) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    char buf[512];
    std::snprintf(buf, sizeof(buf), "# fps %.17g\n", traj.fps);
    f << "# frame_index qw qx qy qz tx ty tz fx fy cx cy\n" << buf;
    for (size_t i = 0; i < traj.poses.size(); ++i) {
        const CameraPose& p = traj.poses[i];
        std::snprintf(buf, sizeof(buf),
                      "%zu %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g %.17g\n", i,
                      p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z, p.translation.x(),
                      p.translation.y(), p.translation.z(), p.intr.fx, p.intr.fy, p.intr.cx,
                      p.intr.cy);
        f << buf;
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

Trajectory load_trajectory(const std::string& path, PoseConvention convention,
                           std::optional<double> fps_override) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open pose file: " + path);
    Trajectory traj;
    bool fps_from_file = false;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty()) continue;
        if (line[0] == '#') {
            double fps = 0.0;
            if (std::sscanf(line.c_str(), "# fps %lf", &fps) == 1 && fps > 0.0) {
                traj.fps = fps;
                fps_from_file = true;
            }
            continue;
        }
        std::istringstream ss(line);
        long long idx = 0;
        CameraPose p;
        ss >> idx >> p.rotation.w >> p.rotation.x >> p.rotation.y >> p.rotation.z >>
            p.translation.x() >> p.translation.y() >> p.translation.z() >> p.intr.fx >>
            p.intr.fy >> p.intr.cx >> p.intr.cy;
        if (!ss) throw std::runtime_error("malformed pose line: " + line);
        if (convention == PoseConvention::CameraFromWorld) p = p.inverse_convention();
        traj.poses.push_back(p);
    }
    if (fps_override) traj.fps = *fps_override;
    else if (!fps_from_file) traj.fps = 30.0;
    if (traj.poses.empty()) throw EmptyTrajectory();
    return traj;
}

}  // namespace keysplat
