#pragma once

#include "keysplat/renderer.hpp"
#include "keysplat/scene.hpp"

#include <cstdint>
#include <vector>

namespace keysplat {

/// Deterministic visibility stand-in for a feed-forward reconstruction
/// network: one 3D point per `stride x stride` pixel block, taken at the
/// renderer's expected depth, for pixels whose alpha >= 0.5. Every returned
/// point re-projects into the image within 0.5 px.
PointCloud visible_points(const GaussianScene& scene, const CameraPose& pose, int width,
                          int height, int stride = 4, int frame_idx = -1);

/// Same, reusing an already rendered frame for `pose`.
PointCloud visible_points_from_frame(const RenderedFrame& frame, const CameraPose& pose,
                                     int stride = 4, int frame_idx = -1);

enum class CorruptionKind { None, Noise, Drift };

struct Corruption {
    CorruptionKind kind = CorruptionKind::None;
    double noise_sigma = 0.0;  // Gaussian pixel noise stddev, color channels
    double drift_rate = 0.0;   // radians (and world units) per keyframe index
    std::uint64_t seed = 0;
};

/// One generated keyframe: the pose the image was actually rendered from
/// (drift moves it away from the requested pose) plus the rendered frame.
struct Keyframe {
    int frame_index = -1;  // position in the requested pose sequence by default
    CameraPose pose;
    RenderedFrame frame;
};

/// Ground-truth keyframe provider standing in for a generative model. `noise`
/// adds i.i.d. Gaussian pixel noise to the color channels (clamped to [0,1]);
/// `drift` perturbs pose k by a rotation of angle k*rate about a seeded fixed
/// axis and a translation of length k*rate along a seeded fixed direction,
/// rendering from the perturbed pose.
std::vector<Keyframe> oracle_keyframes(const GaussianScene& scene,
                                       const std::vector<CameraPose>& poses, int width,
                                       int height, const Corruption& corruption = {},
                                       const RenderSettings& settings = {});

}  // namespace keysplat
