#pragma once

#include "keysplat/geometry.hpp"
#include "keysplat/scene.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace keysplat {

struct InvalidCount : std::runtime_error {
    explicit InvalidCount(const std::string& what) : std::runtime_error(what) {}
};

struct CoverageReport {
    double tau = 0.9;
    std::vector<double> ratios;   // r_1 is defined as 1
    std::vector<bool> selected;   // selected[0] is always true

    std::vector<int> selected_indices() const;
    std::string to_json() const;  // keys: tau, ratios, selected
};

struct GenerationBatch {
    std::vector<int> targets;       // keyframe positions generated by this batch
    std::vector<int> conditioning;  // previously generated keyframe positions (empty = input image only)
};

struct KeyframePlan {
    int count = 0;
    std::vector<int> indices;  // into the dense trajectory, strictly increasing
    std::vector<GenerationBatch> batches;

    std::string to_json() const;  // keys: count, indices, batches
};

/// Fraction of image pixels marked by projecting the cloud, each in-frustum
/// point marking a (2r+1)^2 pixel square. Empty or fully-behind cloud -> 0.
/// When `z_test` is given (expected-depth map of this view, row-major W*H),
/// a point only marks pixels if its depth is within `z_margin` (relative)
/// of the map's depth at its center pixel; off by default.
double coverage_ratio(const PointCloud& cloud, const CameraPose& pose, int width, int height,
                      int splat_radius_px = 2, const std::vector<float>* z_test = nullptr,
                      double z_margin = 0.05);

/// Iterative selection: S <- {frame 0}, C <- cloud 0; for each later frame,
/// record r_i = coverage of the accumulated C in that view; if r_i < tau the
/// frame joins S and its cloud is merged into C.
CoverageReport select_keyframes(const std::vector<PointCloud>& frame_clouds,
                                const std::vector<CameraPose>& poses, double tau, int width,
                                int height, int splat_radius_px = 2);

/// index_j = round(j * (n_frames - 1) / (K - 1)); includes both endpoints.
std::vector<int> uniform_keyframe_indices(int n_frames, int K);

/// Two-stage schedule over keyframe positions 0..K-1: batch 1 generates
/// `window` positions uniformly spanning the trajectory (all, if K <= window)
/// conditioned on the input image only; the remaining positions are packed
/// per gap, in trajectory order, each batch conditioned on the nearest
/// already-generated position on each side, with at most
/// window - |conditioning| targets per batch.
std::vector<GenerationBatch> plan_generation_batches(int K, int window = 8);

/// Convenience: uniform indices + batches in one plan.
KeyframePlan make_keyframe_plan(int n_frames, int K, int window = 8);

}  // namespace keysplat
