#pragma once

#include "keysplat/density.hpp"
#include "keysplat/oracle.hpp"
#include "keysplat/planner.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace keysplat {

/// How ground-truth keyframe counts are computed: iterative selection over
/// visibility clouds, run at a decimated frame rate to keep labeling cheap.
struct LabelConfig {
    double tau = 0.9;
    int stride = 4;
    int splat_radius_px = 2;
    int width = 256, height = 256;
    double label_fps = 5.0;
};

/// Every `round(fps / label_fps)`-th pose; fps adjusted to match.
Trajectory resample_for_labels(const Trajectory& dense, double label_fps);

/// Renders each pose, lifts visibility clouds, runs iterative selection.
CoverageReport label_coverage(const GaussianScene& scene, const Trajectory& label_traj,
                              const LabelConfig& cfg = {});

int count_label_keyframes(const GaussianScene& scene, const Trajectory& label_traj,
                          const LabelConfig& cfg = {});

/// Procedural stand-in for an image embedding: bounding-box extents, primitive
/// count (scaled), mean nearest-neighbor distance over a seeded subsample,
/// zero-padded to descriptor_dim.
VecX scene_descriptor(const GaussianScene& scene, int descriptor_dim, std::uint64_t seed = 0);

struct DatasetConfig {
    int n_samples = 200;
    LabelConfig label;
    int descriptor_dim = 16;
    int scene_budget = 12000;
    double duration_s = 20.0;
    double fps = 30.0;
    // checker-plane is excluded: its open horizon leaves most pixels without
    // geometry, so the coverage ratio can never reach tau and selection
    // degenerates to every frame
    std::vector<std::string> scene_names = {"room", "cloudfield"};
    std::vector<std::string> traj_kinds = {"orbit", "dolly", "smooth-random-walk"};
};

/// One (trajectory, descriptor, n_gt) sample; the stored trajectory is the
/// label-rate resampled one, which is also what the predictor consumes.
DensitySample make_label_sample(const DatasetConfig& cfg, std::uint64_t seed);

std::vector<DensitySample> build_label_dataset(const DatasetConfig& cfg, std::uint64_t seed);

void save_label_dataset(const std::string& path, const std::vector<DensitySample>& dataset);
std::vector<DensitySample> load_label_dataset(const std::string& path);

}  // namespace keysplat
