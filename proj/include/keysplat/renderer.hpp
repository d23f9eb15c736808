#pragma once

#include "keysplat/geometry.hpp"
#include "keysplat/scene.hpp"

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace keysplat {

struct UncoveredFrameIndex : std::runtime_error {
    explicit UncoveredFrameIndex(size_t frame)
        : std::runtime_error("no chunk covers trajectory frame " + std::to_string(frame)),
          index(frame) {}
    size_t index;
};

struct RenderSettings {
    float low_pass_px2 = 0.3f;        // screen-space covariance regularizer
    float alpha_clamp = 0.99f;        // per-splat alpha ceiling
    float min_alpha = 1.0f / 255.0f;  // cull / skip threshold
    float transmittance_eps = 1e-4f;  // stop compositing once T drops below
};

struct RenderedFrame {
    int width = 0, height = 0;
    std::vector<float> color;  // rgb interleaved, 3*W*H
    std::vector<float> alpha;  // W*H, 1 - final transmittance
    std::vector<float> depth;  // W*H, expected depth where alpha > 0, else 0

    float& r(int x, int y) { return color[3 * (static_cast<size_t>(y) * width + x)]; }
    const float* rgb(int x, int y) const {
        return &color[3 * (static_cast<size_t>(y) * width + x)];
    }
    float a(int x, int y) const { return alpha[static_cast<size_t>(y) * width + x]; }
    float d(int x, int y) const { return depth[static_cast<size_t>(y) * width + x]; }
};

/// Forward EWA splatting: project, globally depth-sort (ties by primitive
/// index), bin into 16x16 tiles, composite front-to-back. Deterministic and
/// tile-parallel-safe (tiles touch disjoint pixels).
RenderedFrame render(const GaussianScene& scene, const CameraPose& pose, int width, int height,
                     const RenderSettings& settings = {});

struct VideoRenderStats {
    std::vector<double> frame_ms;
    double total_s = 0.0;
};

std::vector<RenderedFrame> render_video(const GaussianScene& scene, const Trajectory& traj,
                                        int width, int height, const RenderSettings& settings = {},
                                        VideoRenderStats* stats = nullptr);

/// Renders each frame from the chunk whose inclusive index range covers it;
/// overlapping ranges resolve to the earliest chunk. Throws UncoveredFrameIndex
/// when some frame index falls in no range.
std::vector<RenderedFrame> render_video_chunked(
    const std::vector<GaussianScene>& chunks,
    const std::vector<std::pair<size_t, size_t>>& ranges, const Trajectory& traj, int width,
    int height, const RenderSettings& settings = {}, VideoRenderStats* stats = nullptr);

// --- image I/O --------------------------------------------------------------
// Binary PPM (P6, 8-bit, maxval 255); floats quantized by lround(clamp01(c)*255).
void save_ppm(const std::string& path, const RenderedFrame& frame);
struct PpmImage {
    int width = 0, height = 0;
    std::vector<uint8_t> rgb;  // 3*W*H
};
PpmImage load_ppm(const std::string& path);

// Raw little-endian f32 sidecars for alpha / depth planes.
void save_f32(const std::string& path, const std::vector<float>& data);
std::vector<float> load_f32(const std::string& path);

}  // namespace keysplat
