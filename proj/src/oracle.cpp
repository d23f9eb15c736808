#include "keysplat/oracle.hpp"

#include "keysplat/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace keysplat {

PointCloud visible_points_from_frame(const RenderedFrame& frame, const CameraPose& pose,
                                     int stride, int frame_idx) {
    if (stride < 1) throw std::invalid_argument("stride must be >= 1");
    PointCloud cloud;
    for (int y = 0; y < frame.height; y += stride) {
        for (int x = 0; x < frame.width; x += stride) {
            if (frame.a(x, y) < 0.5f) continue;
            const double z = frame.d(x, y);
            if (z <= kNearPlane) continue;
            const Vec3 p_cam((x + 0.5 - pose.intr.cx) / pose.intr.fx * z,
                             (y + 0.5 - pose.intr.cy) / pose.intr.fy * z, z);
            cloud.points.push_back(pose.camera_to_world(p_cam).cast<float>());
            cloud.frame_index.push_back(frame_idx);
        }
    }
    return cloud;
}

PointCloud visible_points(const GaussianScene& scene, const CameraPose& pose, int width,
                          int height, int stride, int frame_idx) {
    return visible_points_from_frame(render(scene, pose, width, height), pose, stride,
                                     frame_idx);
}

std::vector<Keyframe> oracle_keyframes(const GaussianScene& scene,
                                       const std::vector<CameraPose>& poses, int width,
                                       int height, const Corruption& corruption,
                                       const RenderSettings& settings) {
    if (poses.empty()) throw std::invalid_argument("oracle_keyframes: empty pose sequence");

    Vec3 drift_axis = Vec3::UnitZ(), drift_dir = Vec3::UnitX();
    if (corruption.kind == CorruptionKind::Drift) {
        std::mt19937_64 rng(hash_u64(corruption.seed ^ 0x6472696674ull));
        auto unit = [&rng] {
            Vec3 v;
            do {
                v = Vec3(normal01(rng), normal01(rng), normal01(rng));
            } while (v.norm() < 1e-6);
            return Vec3(v.normalized());
        };
        drift_axis = unit();
        drift_dir = unit();
    }

    std::vector<Keyframe> out;
    out.reserve(poses.size());
    for (std::size_t k = 0; k < poses.size(); ++k) {
        Keyframe kf;
        kf.frame_index = static_cast<int>(k);
        kf.pose = poses[k];
        if (corruption.kind == CorruptionKind::Drift && k > 0) {
            const double step = corruption.drift_rate * static_cast<double>(k);
            kf.pose.rotation =
                (Quat::from_axis_angle(drift_axis, step) * kf.pose.rotation).normalized();
            kf.pose.translation += step * drift_dir;
        }
        kf.frame = render(scene, kf.pose, width, height, settings);
        if (corruption.kind == CorruptionKind::Noise && corruption.noise_sigma != 0.0) {
            std::mt19937_64 rng(hash_u64(corruption.seed ^ (0x6e6f697365ull + k)));
            for (float& c : kf.frame.color) {
                c = std::clamp(
                    c + static_cast<float>(corruption.noise_sigma * normal01(rng)), 0.0f,
                    1.0f);
            }
        }
        out.push_back(std::move(kf));
    }
    return out;
}

}  // namespace keysplat
