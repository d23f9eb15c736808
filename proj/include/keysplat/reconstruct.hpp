#pragma once

#include "keysplat/geometry.hpp"
#include "keysplat/oracle.hpp"
#include "keysplat/scene.hpp"

#include <stdexcept>
#include <string>
#include <vector>

namespace keysplat {

struct NoValidDepth : std::runtime_error {
    NoValidDepth() : std::runtime_error("no keyframe pixel has valid depth") {}
};

struct CountMismatch : std::runtime_error {
    CountMismatch(size_t a, size_t b)
        : std::runtime_error("pose sequences differ in length: " + std::to_string(a) +
                             " vs " + std::to_string(b)) {}
};

struct DegenerateConfiguration : std::runtime_error {
    explicit DegenerateConfiguration(const std::string& what) : std::runtime_error(what) {}
};

/// Lifts every reliable keyframe pixel (alpha >= 0.5, depth in front of the
/// near plane) to a colored 3D point, buckets the points into a voxel grid of
/// edge `voxel_size`, and emits one isotropic gaussian per occupied voxel:
/// mean = centroid, scale = max(voxel_size / 2, point std), color = mean
/// color, opacity 0.95. Points are reduced in a sorted, provenance-free order,
/// so the result is bit-identical under keyframe permutation.
///
/// voxel_size <= 0 selects the default: point bounding-box diagonal / 256.
/// The scene background is estimated from near-empty pixels (alpha < 0.05)
/// when any exist.
GaussianScene reconstruct(const std::vector<Keyframe>& keyframes, double voxel_size = 0.0);

struct SimilarityFit {
    SimilarityTransform transform;  // maps src centers onto dst centers
    double residual_rms = 0.0;
};

/// Closed-form least-squares similarity between camera-center sets
/// (Umeyama: SVD of the cross-covariance with determinant correction,
/// scale = trace(D * S) / src variance). Requires >= 3 poses with centers
/// spanning at least a plane.
SimilarityFit fit_similarity(const std::vector<CameraPose>& src,
                             const std::vector<CameraPose>& dst);

struct Chunk {
    std::vector<int> keyframes;  // dense-trajectory frame indices, ascending
    int frame_begin = 0;         // dense frames [frame_begin, frame_end)
    int frame_end = 0;
};

struct ChunkPlan {
    std::vector<Chunk> chunks;
    std::vector<int> shared;  // shared[j]: keyframe joining chunks j and j+1
    std::string to_json() const;
};

/// Splits the keyframe set into temporal chunks of at most `chunk_duration_s`
/// (equal spans), where consecutive chunks share exactly one keyframe: the one
/// closest to the span boundary (ties to the earlier frame). Dense frames go
/// to the chunk whose keyframe span contains their timestamp; a frame exactly
/// on a shared keyframe goes to the earlier chunk.
ChunkPlan make_chunk_plan(const std::vector<int>& keyframe_indices, const Trajectory& traj,
                          double chunk_duration_s = 10.0);

/// A reconstruction in its own coordinate frame plus the keyframe poses it
/// believes in, ordered like the chunk's keyframe list.
struct ChunkReconstruction {
    GaussianScene scene;
    std::vector<CameraPose> keyframe_poses;
};

struct AlignedChunk {
    GaussianScene scene;           // mapped into the stitched frame
    SimilarityTransform to_chunk;  // input-trajectory coords -> stitched frame
    double fit_residual_rms = 0.0;
    std::vector<double> keyframe_center_errors;  // after boundary correction
};

struct AlignedReconstruction {
    std::vector<AlignedChunk> chunks;
};

/// Per-chunk similarity fit of the input trajectory onto the chunk's estimated
/// keyframe poses, then a rigid (no rescale) boundary correction composed into
/// every chunk after the first so the shared keyframe's pose maps identically
/// through both adjacent transforms. Two-keyframe chunks fall back to a
/// pair fit (scale from the center distance ratio, rotation from averaged
/// relative orientations); the shared-keyframe correction absorbs the
/// remaining freedom. Degeneracies are reported with their chunk index.
AlignedReconstruction align_chunks(const ChunkPlan& plan,
                                   const std::vector<ChunkReconstruction>& chunks,
                                   const Trajectory& traj);

/// Writes chunk_%03d.splat per chunk plus manifest.json (transforms as
/// {scale, quat, t}, chunk ranges, residuals) into `dir`.
void save_aligned(const std::string& dir, const AlignedReconstruction& rec,
                  const ChunkPlan& plan);

struct LoadedAligned {
    AlignedReconstruction rec;
    ChunkPlan plan;
};

LoadedAligned load_aligned(const std::string& manifest_path);

}  // namespace keysplat
