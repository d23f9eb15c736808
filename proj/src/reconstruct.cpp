#include "keysplat/reconstruct.hpp"

#include "keysplat/renderer.hpp"

#include <json.hpp>

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>

namespace keysplat {

namespace {

using nlohmann::json;

struct VoxelPoint {
    int64_t kx, ky, kz;
    double px, py, pz;
    float r, g, b;
};

bool voxel_less(const VoxelPoint& a, const VoxelPoint& b) {
    return std::tie(a.kx, a.ky, a.kz, a.px, a.py, a.pz, a.r, a.g, a.b) <
           std::tie(b.kx, b.ky, b.kz, b.px, b.py, b.pz, b.r, b.g, b.b);
}

bool same_voxel(const VoxelPoint& a, const VoxelPoint& b) {
    return a.kx == b.kx && a.ky == b.ky && a.kz == b.kz;
}

constexpr float kMinValidAlpha = 0.5f;  // expected depth is unreliable below

}  // namespace

GaussianScene reconstruct(const std::vector<Keyframe>& keyframes, double voxel_size) {
    if (keyframes.empty()) throw std::invalid_argument("reconstruct needs at least one keyframe");

    std::vector<VoxelPoint> pts;
    Vec3 bg_sum = Vec3::Zero();
    long long bg_count = 0;
    for (const Keyframe& kf : keyframes) {
        const RenderedFrame& f = kf.frame;
        const Intrinsics& in = kf.pose.intr;
        for (int y = 0; y < f.height; ++y) {
            for (int x = 0; x < f.width; ++x) {
                const size_t i = static_cast<size_t>(y) * f.width + x;
                const float a = f.alpha[i];
                if (a < 0.05f) {
                    bg_sum += Vec3(f.color[3 * i], f.color[3 * i + 1], f.color[3 * i + 2])
                                  .cast<double>();
                    ++bg_count;
                }
                if (a < kMinValidAlpha) continue;
                const double z = f.depth[i];
                if (z <= kNearPlane) continue;
                const Vec3 p_cam((x + 0.5 - in.cx) / in.fx * z, (y + 0.5 - in.cy) / in.fy * z, z);
                const Vec3 p = kf.pose.camera_to_world(p_cam);
                pts.push_back({0, 0, 0, p.x(), p.y(), p.z(), f.color[3 * i],
                               f.color[3 * i + 1], f.color[3 * i + 2]});
            }
        }
    }
    if (pts.empty()) throw NoValidDepth();

    if (voxel_size <= 0.0) {
        Vec3 lo(pts[0].px, pts[0].py, pts[0].pz), hi = lo;
        for (const VoxelPoint& p : pts) {
            lo = lo.cwiseMin(Vec3(p.px, p.py, p.pz));
            hi = hi.cwiseMax(Vec3(p.px, p.py, p.pz));
        }
        voxel_size = std::max((hi - lo).norm() / 256.0, 1e-9);
    }

    for (VoxelPoint& p : pts) {
        p.kx = static_cast<int64_t>(std::floor(p.px / voxel_size));
        p.ky = static_cast<int64_t>(std::floor(p.py / voxel_size));
        p.kz = static_cast<int64_t>(std::floor(p.pz / voxel_size));
    }
    // value order, not insertion order: the reduction forgets keyframe order
    std::sort(pts.begin(), pts.end(), voxel_less);

    GaussianScene out;
    if (bg_count > 0) out.background = (bg_sum / static_cast<double>(bg_count)).cast<float>();
    for (size_t lo = 0; lo < pts.size();) {
        size_t hi = lo;
        while (hi < pts.size() && same_voxel(pts[lo], pts[hi])) ++hi;
        const auto n = static_cast<double>(hi - lo);
        Vec3 psum = Vec3::Zero(), csum = Vec3::Zero();
        for (size_t i = lo; i < hi; ++i) {
            psum += Vec3(pts[i].px, pts[i].py, pts[i].pz);
            csum += Vec3(pts[i].r, pts[i].g, pts[i].b);
        }
        const Vec3 centroid = psum / n;
        double sq = 0.0;
        for (size_t i = lo; i < hi; ++i)
            sq += (Vec3(pts[i].px, pts[i].py, pts[i].pz) - centroid).squaredNorm();
        const double sigma = std::sqrt(sq / n / 3.0);  // isotropic per-axis std

        Gaussian3D g;
        g.mean = centroid.cast<float>();
        const double s = std::max(voxel_size / 2.0, sigma);
        g.scale = Vec3(s, s, s).cast<float>();
        g.opacity = 0.95f;
        g.color = (csum / n).cast<float>();
        out.gaussians.push_back(g);
        lo = hi;
    }
    return out;
}

SimilarityFit fit_similarity(const std::vector<CameraPose>& src,
                             const std::vector<CameraPose>& dst) {
    if (src.size() != dst.size()) throw CountMismatch(src.size(), dst.size());
    const auto n = static_cast<Eigen::Index>(src.size());
    if (n < 3) throw DegenerateConfiguration("need at least 3 poses, got " + std::to_string(n));

    Eigen::Matrix3Xd s(3, n), d(3, n);
    for (Eigen::Index i = 0; i < n; ++i) {
        s.col(i) = src[i].center();
        d.col(i) = dst[i].center();
    }
    const Vec3 mu_s = s.rowwise().mean(), mu_d = d.rowwise().mean();
    s.colwise() -= mu_s;
    d.colwise() -= mu_d;

    const double var_src = s.squaredNorm() / static_cast<double>(n);
    const double span = std::max(1.0, mu_s.norm());
    if (std::sqrt(var_src) < 1e-12 * span)
        throw DegenerateConfiguration("source camera centers coincide");
    {
        Eigen::JacobiSVD<Eigen::Matrix3Xd> rank_svd(s);
        const auto& sv = rank_svd.singularValues();
        if (sv(1) < 1e-9 * sv(0))
            throw DegenerateConfiguration("source camera centers are collinear");
    }

    const Mat3 h = d * s.transpose() / static_cast<double>(n);
    Eigen::JacobiSVD<Mat3> svd(h, Eigen::ComputeFullU | Eigen::ComputeFullV);
    Vec3 dm = Vec3::Ones();
    if ((svd.matrixU() * svd.matrixV().transpose()).determinant() < 0.0) dm(2) = -1.0;
    const Mat3 r = svd.matrixU() * dm.asDiagonal() * svd.matrixV().transpose();
    const double scale = svd.singularValues().dot(dm) / var_src;

    SimilarityFit fit;
    fit.transform.scale = scale;
    fit.transform.rotation = Quat::from_matrix(r);
    fit.transform.translation = mu_d - scale * (r * mu_s);

    double sq = 0.0;
    for (size_t i = 0; i < src.size(); ++i)
        sq += (fit.transform.apply(src[i].center()) - dst[i].center()).squaredNorm();
    fit.residual_rms = std::sqrt(sq / static_cast<double>(n));
    return fit;
}

std::string ChunkPlan::to_json() const {
    json j;
    j["chunks"] = json::array();
    for (const Chunk& c : chunks)
        j["chunks"].push_back({{"keyframes", c.keyframes},
                               {"frame_begin", c.frame_begin},
                               {"frame_end", c.frame_end}});
    j["shared"] = shared;
    return j.dump(2);
}

ChunkPlan make_chunk_plan(const std::vector<int>& keyframe_indices, const Trajectory& traj,
                          double chunk_duration_s) {
    if (traj.poses.empty()) throw EmptyTrajectory();
    if (!(chunk_duration_s > 0.0))
        throw std::invalid_argument("chunk duration must be positive");
    if (keyframe_indices.empty())
        throw std::invalid_argument("chunk plan needs at least one keyframe");
    const int n_frames = static_cast<int>(traj.poses.size());
    for (size_t i = 0; i < keyframe_indices.size(); ++i) {
        const int k = keyframe_indices[i];
        if (k < 0 || k >= n_frames)
            throw std::invalid_argument("keyframe index out of range: " + std::to_string(k));
        if (i > 0 && k <= keyframe_indices[i - 1])
            throw std::invalid_argument("keyframe indices must be strictly increasing");
    }

    const std::vector<int>& kf = keyframe_indices;
    const double total_s = n_frames / traj.fps;
    const int n_chunks = std::max(1, static_cast<int>(std::ceil(total_s / chunk_duration_s - 1e-9)));

    ChunkPlan plan;
    // shared keyframe per interior boundary: nearest to the boundary time,
    // ties to the earlier frame; strictly increasing so chunks stay non-empty
    std::vector<size_t> cuts;  // positions into kf
    size_t prev = 0;
    for (int b = 1; b < n_chunks; ++b) {
        const double tb = total_s * b / n_chunks;
        size_t best = 0;
        double best_err = 0.0;
        bool found = false;
        for (size_t i = prev + 1; i + 1 < kf.size(); ++i) {
            const double err = std::abs(kf[i] / traj.fps - tb);
            if (!found || err < best_err) {
                found = true;
                best = i;
                best_err = err;
            }
        }
        if (!found) continue;  // too few keyframes left: merge into the previous chunk
        cuts.push_back(best);
        prev = best;
    }

    size_t start = 0;
    int frame_begin = 0;
    for (size_t c = 0; c <= cuts.size(); ++c) {
        const size_t stop = c < cuts.size() ? cuts[c] : kf.size() - 1;
        Chunk chunk;
        chunk.keyframes.assign(kf.begin() + static_cast<long>(start),
                               kf.begin() + static_cast<long>(stop) + 1);
        chunk.frame_begin = frame_begin;
        chunk.frame_end = c < cuts.size() ? kf[cuts[c]] + 1 : n_frames;
        frame_begin = chunk.frame_end;
        plan.chunks.push_back(std::move(chunk));
        if (c < cuts.size()) plan.shared.push_back(kf[cuts[c]]);
        start = stop;
    }
    return plan;
}

namespace {

/// Two-pose fit: scale from the center distance ratio, rotation from the
/// averaged relative orientation, translation matching the centroids.
SimilarityFit fit_pair(const std::vector<CameraPose>& src, const std::vector<CameraPose>& dst) {
    const Vec3 ds = src[1].center() - src[0].center();
    const Vec3 dd = dst[1].center() - dst[0].center();
    if (ds.norm() < 1e-12 || dd.norm() < 1e-12)
        throw DegenerateConfiguration("pair fit with coincident centers");

    Quat q0 = (dst[0].rotation * src[0].rotation.conjugate()).normalized();
    Quat q1 = (dst[1].rotation * src[1].rotation.conjugate()).normalized();
    if (q0.dot(q1) < 0.0) q1 = -q1;
    const Quat q = Quat{q0.w + q1.w, q0.x + q1.x, q0.y + q1.y, q0.z + q1.z}.normalized();

    SimilarityFit fit;
    fit.transform.scale = dd.norm() / ds.norm();
    fit.transform.rotation = q;
    const Vec3 mu_s = 0.5 * (src[0].center() + src[1].center());
    const Vec3 mu_d = 0.5 * (dst[0].center() + dst[1].center());
    fit.transform.translation = mu_d - fit.transform.scale * q.rotate(mu_s);

    double sq = 0.0;
    for (int i = 0; i < 2; ++i)
        sq += (fit.transform.apply(src[i].center()) - dst[i].center()).squaredNorm();
    fit.residual_rms = std::sqrt(sq / 2.0);
    return fit;
}

}  // namespace

AlignedReconstruction align_chunks(const ChunkPlan& plan,
                                   const std::vector<ChunkReconstruction>& chunks,
                                   const Trajectory& traj) {
    if (plan.chunks.size() != chunks.size())
        throw std::invalid_argument("plan and reconstruction counts differ");
    if (plan.chunks.empty()) throw std::invalid_argument("empty chunk plan");

    AlignedReconstruction out;
    out.chunks.resize(chunks.size());
    for (size_t c = 0; c < chunks.size(); ++c) {
        const std::vector<int>& kfi = plan.chunks[c].keyframes;
        if (kfi.size() != chunks[c].keyframe_poses.size())
            throw CountMismatch(kfi.size(), chunks[c].keyframe_poses.size());
        std::vector<CameraPose> src;
        src.reserve(kfi.size());
        for (const int k : kfi) {
            if (k < 0 || static_cast<size_t>(k) >= traj.poses.size())
                throw std::invalid_argument("keyframe index outside trajectory");
            src.push_back(traj.poses[static_cast<size_t>(k)]);
        }
        try {
            SimilarityFit fit = src.size() == 2 ? fit_pair(src, chunks[c].keyframe_poses)
                                                : fit_similarity(src, chunks[c].keyframe_poses);
            out.chunks[c].to_chunk = fit.transform;
            out.chunks[c].fit_residual_rms = fit.residual_rms;
        } catch (const DegenerateConfiguration& e) {
            throw DegenerateConfiguration("chunk " + std::to_string(c) + ": " + e.what());
        }
        out.chunks[c].scene = chunks[c].scene;
    }

    // rigid boundary corrections, chunk order: pin each shared keyframe's
    // mapped pose to its image under the previous (already corrected) chunk
    std::vector<SimilarityTransform> corr(chunks.size(), SimilarityTransform::identity());
    for (size_t c = 1; c < out.chunks.size(); ++c) {
        const int s = plan.shared[c - 1];
        const CameraPose& phi = traj.poses[static_cast<size_t>(s)];
        const CameraPose p = out.chunks[c].to_chunk.apply(phi);
        const CameraPose q = out.chunks[c - 1].to_chunk.apply(phi);
        corr[c].scale = 1.0;
        corr[c].rotation = (q.rotation * p.rotation.conjugate()).normalized();
        corr[c].translation = q.center() - corr[c].rotation.rotate(p.center());
        out.chunks[c].to_chunk = corr[c] * out.chunks[c].to_chunk;
        out.chunks[c].scene = apply_transform(corr[c], out.chunks[c].scene);
    }

    // residuals: mapped input keyframe vs the chunk's own estimate, both in
    // the corrected frame
    for (size_t c = 0; c < out.chunks.size(); ++c) {
        const std::vector<int>& kfi = plan.chunks[c].keyframes;
        for (size_t i = 0; i < kfi.size(); ++i) {
            const Vec3 mapped =
                out.chunks[c].to_chunk.apply(traj.poses[static_cast<size_t>(kfi[i])]).center();
            const Vec3 est = corr[c].apply(chunks[c].keyframe_poses[i].center());
            out.chunks[c].keyframe_center_errors.push_back((mapped - est).norm());
        }
    }
    return out;
}

void save_aligned(const std::string& dir, const AlignedReconstruction& rec,
                  const ChunkPlan& plan) {
    namespace fs = std::filesystem;
    fs::create_directories(dir);
    json j;
    j["format"] = "chunk-manifest-v1";
    j["chunks"] = json::array();
    for (size_t c = 0; c < rec.chunks.size(); ++c) {
        char name[32];
        std::snprintf(name, sizeof name, "chunk_%03zu.splat", c);
        save_scene((fs::path(dir) / name).string(), rec.chunks[c].scene);
        const SimilarityTransform& t = rec.chunks[c].to_chunk;
        j["chunks"].push_back(
            {{"splat", name},
             {"keyframes", plan.chunks[c].keyframes},
             {"frame_begin", plan.chunks[c].frame_begin},
             {"frame_end", plan.chunks[c].frame_end},
             {"transform",
              {{"scale", t.scale},
               {"quat", {t.rotation.w, t.rotation.x, t.rotation.y, t.rotation.z}},
               {"t", {t.translation.x(), t.translation.y(), t.translation.z()}}}},
             {"fit_residual_rms", rec.chunks[c].fit_residual_rms},
             {"keyframe_center_errors", rec.chunks[c].keyframe_center_errors}});
    }
    j["shared"] = plan.shared;
    std::ofstream out(fs::path(dir) / "manifest.json");
    out << j.dump(2) << "\n";
}

LoadedAligned load_aligned(const std::string& manifest_path) {
    namespace fs = std::filesystem;
    std::ifstream in(manifest_path);
    if (!in) throw std::runtime_error("cannot open manifest: " + manifest_path);
    json j;
    in >> j;
    if (j.value("format", "") != "chunk-manifest-v1")
        throw std::runtime_error("unrecognized manifest format in " + manifest_path);

    LoadedAligned out;
    const fs::path base = fs::path(manifest_path).parent_path();
    for (const json& cj : j.at("chunks")) {
        AlignedChunk ac;
        ac.scene = load_scene((base / cj.at("splat").get<std::string>()).string());
        const json& tj = cj.at("transform");
        ac.to_chunk.scale = tj.at("scale").get<double>();
        const auto qv = tj.at("quat").get<std::vector<double>>();
        ac.to_chunk.rotation = Quat{qv.at(0), qv.at(1), qv.at(2), qv.at(3)};
        const auto tv = tj.at("t").get<std::vector<double>>();
        ac.to_chunk.translation = Vec3(tv.at(0), tv.at(1), tv.at(2));
        ac.fit_residual_rms = cj.at("fit_residual_rms").get<double>();
        ac.keyframe_center_errors = cj.at("keyframe_center_errors").get<std::vector<double>>();
        out.rec.chunks.push_back(std::move(ac));

        Chunk ch;
        ch.keyframes = cj.at("keyframes").get<std::vector<int>>();
        ch.frame_begin = cj.at("frame_begin").get<int>();
        ch.frame_end = cj.at("frame_end").get<int>();
        out.plan.chunks.push_back(std::move(ch));
    }
    out.plan.shared = j.at("shared").get<std::vector<int>>();
    return out;
}

}  // namespace keysplat
