#include "keysplat/labels.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <fstream>

namespace keysplat {

Trajectory resample_for_labels(const Trajectory& dense, double label_fps) {
    if (dense.poses.empty()) throw EmptyTrajectory();
    if (label_fps <= 0.0) throw std::invalid_argument("label fps must be positive");
    const long long step = std::max(1LL, std::llround(dense.fps / label_fps));
    Trajectory out;
    out.fps = dense.fps / static_cast<double>(step);
    for (std::size_t i = 0; i < dense.poses.size(); i += static_cast<std::size_t>(step))
        out.poses.push_back(dense.poses[i]);
    return out;
}

CoverageReport label_coverage(const GaussianScene& scene, const Trajectory& label_traj,
                              const LabelConfig& cfg) {
    if (label_traj.poses.empty()) throw EmptyTrajectory();
    std::vector<PointCloud> clouds;
    clouds.reserve(label_traj.poses.size());
    for (std::size_t i = 0; i < label_traj.poses.size(); ++i)
        clouds.push_back(visible_points(scene, label_traj.poses[i], cfg.width, cfg.height,
                                        cfg.stride, static_cast<int>(i)));
    return select_keyframes(clouds, label_traj.poses, cfg.tau, cfg.width, cfg.height,
                            cfg.splat_radius_px);
}

int count_label_keyframes(const GaussianScene& scene, const Trajectory& label_traj,
                          const LabelConfig& cfg) {
    return static_cast<int>(label_coverage(scene, label_traj, cfg).selected_indices().size());
}

VecX scene_descriptor(const GaussianScene& scene, int descriptor_dim, std::uint64_t seed) {
    if (descriptor_dim < 5)
        throw std::invalid_argument("descriptor needs at least 5 slots");
    if (scene.gaussians.empty()) throw std::invalid_argument("empty scene");

    const BoundingBox box = scene_bounds(scene);
    VecX d = VecX::Zero(descriptor_dim);
    d(0) = box.extent().x();
    d(1) = box.extent().y();
    d(2) = box.extent().z();
    d(3) = static_cast<double>(scene.gaussians.size()) * 1e-4;

    // mean nearest-neighbor distance over a seeded subsample of means
    std::mt19937_64 rng(hash_u64(seed ^ 0x64657363ull));
    const std::size_t n = scene.gaussians.size();
    const std::size_t k = std::min<std::size_t>(512, n);
    std::vector<Vec3f> sample(k);
    for (std::size_t i = 0; i < k; ++i)
        sample[i] = scene.gaussians[rng() % n].mean;
    double total = 0.0;
    for (std::size_t i = 0; i < k; ++i) {
        float best = std::numeric_limits<float>::max();
        for (std::size_t j = 0; j < k; ++j) {
            if (i == j) continue;
            best = std::min(best, (sample[i] - sample[j]).squaredNorm());
        }
        total += std::sqrt(static_cast<double>(best));
    }
    d(4) = k > 1 ? total / static_cast<double>(k) : 0.0;
    return d;
}

DensitySample make_label_sample(const DatasetConfig& cfg, std::uint64_t seed) {
    if (cfg.scene_names.empty() || cfg.traj_kinds.empty())
        throw std::invalid_argument("dataset config needs scene and trajectory kinds");
    std::mt19937_64 rng(hash_u64(seed ^ 0x6c6162656cull));

    SceneRecipe recipe;
    recipe.name = cfg.scene_names[rng() % cfg.scene_names.size()];
    recipe.budget = cfg.scene_budget;
    const std::uint64_t scene_seed = rng();
    const GaussianScene scene = generate_scene(recipe, scene_seed);

    TrajectoryRecipe traj_recipe;
    traj_recipe.kind = cfg.traj_kinds[rng() % cfg.traj_kinds.size()];
    traj_recipe.duration_s = cfg.duration_s;
    traj_recipe.fps = cfg.fps;
    const Trajectory dense = generate_trajectory(traj_recipe, rng(), scene_layout(recipe));

    DensitySample sample;
    sample.traj = resample_for_labels(dense, cfg.label.label_fps);
    sample.descriptor = scene_descriptor(scene, cfg.descriptor_dim, scene_seed);
    sample.n_gt = count_label_keyframes(scene, sample.traj, cfg.label);
    return sample;
}

std::vector<DensitySample> build_label_dataset(const DatasetConfig& cfg, std::uint64_t seed) {
    std::vector<DensitySample> out;
    out.reserve(static_cast<std::size_t>(cfg.n_samples));
    for (int i = 0; i < cfg.n_samples; ++i)
        out.push_back(make_label_sample(cfg, hash_u64(seed) + static_cast<std::uint64_t>(i)));
    return out;
}

void save_label_dataset(const std::string& path, const std::vector<DensitySample>& dataset) {
    nlohmann::json j;
    j["format"] = "density-dataset-v1";
    j["samples"] = nlohmann::json::array();
    for (const auto& s : dataset) {
        nlohmann::json js;
        js["fps"] = s.traj.fps;
        js["n_gt"] = s.n_gt;
        js["descriptor"] = std::vector<double>(s.descriptor.data(),
                                               s.descriptor.data() + s.descriptor.size());
        auto& poses = js["poses"] = nlohmann::json::array();
        for (const CameraPose& p : s.traj.poses) {
            poses.push_back({p.rotation.w, p.rotation.x, p.rotation.y, p.rotation.z,
                             p.translation.x(), p.translation.y(), p.translation.z(),
                             p.intr.fx, p.intr.fy, p.intr.cx, p.intr.cy});
        }
        j["samples"].push_back(std::move(js));
    }
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << j.dump() << "\n";
}

std::vector<DensitySample> load_label_dataset(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open: " + path);
    const nlohmann::json j = nlohmann::json::parse(f);
    if (j.value("format", "") != "density-dataset-v1")
        throw std::runtime_error("unrecognized dataset format in " + path);
    std::vector<DensitySample> out;
    for (const auto& js : j.at("samples")) {
        DensitySample s;
        s.traj.fps = js.at("fps").get<double>();
        s.n_gt = js.at("n_gt").get<int>();
        const auto desc = js.at("descriptor").get<std::vector<double>>();
        s.descriptor = Eigen::Map<const VecX>(desc.data(), static_cast<Eigen::Index>(desc.size()));
        for (const auto& row : js.at("poses")) {
            CameraPose p;
            p.rotation = Quat{row[0].get<double>(), row[1].get<double>(), row[2].get<double>(),
                              row[3].get<double>()};
            p.translation = Vec3(row[4].get<double>(), row[5].get<double>(), row[6].get<double>());
            p.intr = {row[7].get<double>(), row[8].get<double>(), row[9].get<double>(),
                      row[10].get<double>()};
            s.traj.poses.push_back(p);
        }
        out.push_back(std::move(s));
    }
    return out;
}

}  // namespace keysplat
