#include "keysplat/planner.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>

namespace keysplat {

std::vector<int> CoverageReport::selected_indices() const {
    std::vector<int> out;
    for (std::size_t i = 0; i < selected.size(); ++i)
        if (selected[i]) out.push_back(static_cast<int>(i));
    return out;
}

std::string CoverageReport::to_json() const {
    nlohmann::json j;
    j["tau"] = tau;
    j["ratios"] = ratios;
    j["selected"] = std::vector<bool>(selected);
    return j.dump(2);
}

std::string KeyframePlan::to_json() const {
    nlohmann::json j;
    j["count"] = count;
    j["indices"] = indices;
    j["batches"] = nlohmann::json::array();
    for (const auto& b : batches)
        j["batches"].push_back({{"targets", b.targets}, {"conditioning", b.conditioning}});
    return j.dump(2);
}

double coverage_ratio(const PointCloud& cloud, const CameraPose& pose, int width, int height,
                      int splat_radius_px, const std::vector<float>* z_test, double z_margin) {
    if (width <= 0 || height <= 0) throw std::invalid_argument("empty image");
    if (splat_radius_px < 0) throw std::invalid_argument("splat radius must be >= 0");
    if (cloud.points.empty()) return 0.0;

    std::vector<uint8_t> mask(static_cast<std::size_t>(width) * height, 0);
    std::size_t marked = 0;
    const int r = splat_radius_px;
    for (const Vec3f& p : cloud.points) {
        const auto proj = project_point(p.cast<double>(), pose, width, height);
        if (!proj) continue;
        const int px = static_cast<int>(proj->u);
        const int py = static_cast<int>(proj->v);
        if (z_test) {
            const float zref = (*z_test)[static_cast<std::size_t>(py) * width + px];
            if (zref > 0.0f && proj->depth > double(zref) * (1.0 + z_margin)) continue;
        }
        const int x0 = std::max(px - r, 0), x1 = std::min(px + r, width - 1);
        const int y0 = std::max(py - r, 0), y1 = std::min(py + r, height - 1);
        for (int y = y0; y <= y1; ++y) {
            uint8_t* row = mask.data() + static_cast<std::size_t>(y) * width;
            for (int x = x0; x <= x1; ++x) {
                marked += 1 - row[x];
                row[x] = 1;
            }
        }
    }
    return static_cast<double>(marked) / (static_cast<double>(width) * height);
}

CoverageReport select_keyframes(const std::vector<PointCloud>& frame_clouds,
                                const std::vector<CameraPose>& poses, double tau, int width,
                                int height, int splat_radius_px) {
    if (frame_clouds.empty()) throw std::invalid_argument("no frames");
    if (frame_clouds.size() != poses.size())
        throw std::invalid_argument("clouds/poses length mismatch");
    if (tau < 0.0 || tau > 1.01) throw std::invalid_argument("tau outside [0, 1.01]");

    CoverageReport report;
    report.tau = tau;
    report.ratios.assign(frame_clouds.size(), 1.0);
    report.selected.assign(frame_clouds.size(), false);
    report.selected[0] = true;

    PointCloud accumulated = frame_clouds[0];
    for (std::size_t i = 1; i < frame_clouds.size(); ++i) {
        const double r = coverage_ratio(accumulated, poses[i], width, height, splat_radius_px);
        report.ratios[i] = r;
        if (r < tau) {
            report.selected[i] = true;
            accumulated.append(frame_clouds[i]);
        }
    }
    return report;
}

std::vector<int> uniform_keyframe_indices(int n_frames, int K) {
    if (K < 2) throw InvalidCount("keyframe count must be >= 2, got " + std::to_string(K));
    if (K > n_frames)
        throw InvalidCount("keyframe count " + std::to_string(K) + " exceeds frame count " +
                           std::to_string(n_frames));
    std::vector<int> out(static_cast<std::size_t>(K));
    for (int j = 0; j < K; ++j)
        out[static_cast<std::size_t>(j)] = static_cast<int>(
            std::lround(static_cast<double>(j) * (n_frames - 1) / (K - 1)));
    return out;
}

std::vector<GenerationBatch> plan_generation_batches(int K, int window) {
    if (K < 1) throw InvalidCount("keyframe count must be >= 1");
    if (window < 2) throw std::invalid_argument("window must be >= 2");

    std::vector<GenerationBatch> batches;
    std::vector<bool> generated(static_cast<std::size_t>(K), false);

    GenerationBatch first;
    if (K <= window) {
        for (int i = 0; i < K; ++i) first.targets.push_back(i);
    } else {
        first.targets = uniform_keyframe_indices(K, window);
    }
    for (int t : first.targets) generated[static_cast<std::size_t>(t)] = true;
    batches.push_back(std::move(first));

    // remaining positions, per gap between generated anchors, in order
    int i = 0;
    while (i < K) {
        if (generated[static_cast<std::size_t>(i)]) {
            ++i;
            continue;
        }
        int j = i;
        while (j < K && !generated[static_cast<std::size_t>(j)]) ++j;  // [i, j) is one gap

        int lo = i;
        while (lo < j) {
            GenerationBatch b;
            if (lo > 0) b.conditioning.push_back(lo - 1);  // nearest generated below
            if (j < K) b.conditioning.push_back(j);        // nearest generated above
            if (window - static_cast<int>(b.conditioning.size()) < 1 &&
                b.conditioning.size() == 2) {
                // tiny window: keep only the nearer conditioner (tie -> earlier);
                // the left anchor is always adjacent to the first target
                b.conditioning = {lo - 1};
            }
            const int capacity = std::max(1, window - static_cast<int>(b.conditioning.size()));
            const int hi = std::min(j, lo + capacity);
            for (int t = lo; t < hi; ++t) b.targets.push_back(t);
            // a split gap is anchored below by its own last chunk
            for (int t : b.targets) generated[static_cast<std::size_t>(t)] = true;
            batches.push_back(std::move(b));
            lo = hi;
        }
        i = j;
    }
    return batches;
}

KeyframePlan make_keyframe_plan(int n_frames, int K, int window) {
    KeyframePlan plan;
    plan.count = K;
    plan.indices = uniform_keyframe_indices(n_frames, K);
    plan.batches = plan_generation_batches(K, window);
    return plan;
}

}  // namespace keysplat
