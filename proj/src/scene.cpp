#include "keysplat/scene.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <sstream>

namespace keysplat {

namespace {

double hash01(uint64_t a, uint64_t b, uint64_t salt) {
    return static_cast<double>(hash_u64(a * 0x100000001b3ull ^ hash_u64(b ^ salt)) >> 11) *
           0x1.0p-53;
}

double smoothstep(double t) { return t * t * (3.0 - 2.0 * t); }

/// Lattice value noise in [0,1], cell size 1.
double value_noise(double u, double v, uint64_t salt) {
    const double fu = std::floor(u), fv = std::floor(v);
    const auto iu = static_cast<int64_t>(fu), iv = static_cast<int64_t>(fv);
    const double tu = smoothstep(u - fu), tv = smoothstep(v - fv);
    const double n00 = hash01(static_cast<uint64_t>(iu), static_cast<uint64_t>(iv), salt);
    const double n10 = hash01(static_cast<uint64_t>(iu + 1), static_cast<uint64_t>(iv), salt);
    const double n01 = hash01(static_cast<uint64_t>(iu), static_cast<uint64_t>(iv + 1), salt);
    const double n11 = hash01(static_cast<uint64_t>(iu + 1), static_cast<uint64_t>(iv + 1), salt);
    const double a = n00 + (n10 - n00) * tu;
    const double b = n01 + (n11 - n01) * tu;
    return a + (b - a) * tv;
}

double texture(double u, double v, uint64_t salt) {
    return 0.65 * value_noise(0.9 * u, 0.9 * v, salt) +
           0.35 * value_noise(2.3 * u, 2.3 * v, salt ^ 0x5bd1e995u);
}

Vec3f mix_color(const Vec3f& a, const Vec3f& b, double t) {
    const float tf = static_cast<float>(t);
    return a + (b - a) * tf;
}

Quat quat_from_z_to(const Vec3& n_in) {
    const Vec3 n = n_in.normalized();
    const Vec3 z(0, 0, 1);
    const double c = z.dot(n);
    if (c > 1.0 - 1e-12) return Quat::identity();
    if (c < -1.0 + 1e-12) return Quat{0, 1, 0, 0};  // 180 deg about x
    const Vec3 axis = z.cross(n);
    return Quat::from_axis_angle(axis, std::acos(std::clamp(c, -1.0, 1.0))).normalized();
}

struct SurfacePatch {
    Vec3 origin;   // corner
    Vec3 u_axis;   // full edge vector
    Vec3 v_axis;   // full edge vector
    Vec3 normal;   // unit
    Vec3f color_a;
    Vec3f color_b;
    uint64_t salt = 0;
    double checker_cell = 0.0;  // 0 disables the checker overlay
};

void emit_surface(std::vector<Gaussian3D>& out, const SurfacePatch& s, double spacing,
                  std::mt19937_64& rng) {
    const double lu = s.u_axis.norm(), lv = s.v_axis.norm();
    const int nu = std::max(1, static_cast<int>(std::lround(lu / spacing)));
    const int nv = std::max(1, static_cast<int>(std::lround(lv / spacing)));
    const Vec3 du = s.u_axis / nu, dv = s.v_axis / nv;
    const Quat orient = quat_from_z_to(s.normal);
    const double sigma_t = 0.75 * spacing;   // tangential
    const double sigma_n = 0.08 * spacing;   // across the surface
    for (int i = 0; i < nu; ++i) {
        for (int j = 0; j < nv; ++j) {
            const double ju = uniform_in(rng, -0.3, 0.3);
            const double jv = uniform_in(rng, -0.3, 0.3);
            const Vec3 p = s.origin + du * (i + 0.5 + ju) + dv * (j + 0.5 + jv);
            const double uc = (i + 0.5) * lu / nu, vc = (j + 0.5) * lv / nv;
            double t = texture(uc, vc, s.salt);
            if (s.checker_cell > 0.0) {
                const auto cu = static_cast<int64_t>(std::floor(uc / s.checker_cell));
                const auto cv = static_cast<int64_t>(std::floor(vc / s.checker_cell));
                t = ((cu + cv) & 1) ? 0.18 + 0.12 * t : 0.82 - 0.12 * t;
            }
            Gaussian3D g;
            g.mean = p.cast<float>();
            g.scale = Vec3(sigma_t, sigma_t, sigma_n).cast<float>();
            g.qw = static_cast<float>(orient.w);
            g.qx = static_cast<float>(orient.x);
            g.qy = static_cast<float>(orient.y);
            g.qz = static_cast<float>(orient.z);
            g.opacity = 0.92f;
            g.color = mix_color(s.color_a, s.color_b, t);
            out.push_back(g);
        }
    }
}

long long surface_count(const SurfacePatch& s, double spacing) {
    const int nu = std::max(1, static_cast<int>(std::lround(s.u_axis.norm() / spacing)));
    const int nv = std::max(1, static_cast<int>(std::lround(s.v_axis.norm() / spacing)));
    return static_cast<long long>(nu) * nv;
}

/// Spacing such that the summed grid counts land in [0.92, 0.995] * budget.
double fit_spacing(const std::vector<SurfacePatch>& patches, long long budget) {
    double area = 0.0;
    for (const auto& s : patches) area += s.u_axis.norm() * s.v_axis.norm();
    double spacing = std::sqrt(area / (0.96 * static_cast<double>(budget)));
    for (int iter = 0; iter < 64; ++iter) {
        long long total = 0;
        for (const auto& s : patches) total += surface_count(s, spacing);
        if (total > static_cast<long long>(0.995 * budget)) spacing *= 1.02;
        else if (total < static_cast<long long>(0.92 * budget)) spacing *= 0.985;
        else break;
    }
    return spacing;
}

Vec3f palette(std::mt19937_64& rng, double v_lo, double v_hi) {
    return Vec3(uniform_in(rng, v_lo, v_hi), uniform_in(rng, v_lo, v_hi),
                uniform_in(rng, v_lo, v_hi))
        .cast<float>();
}

GaussianScene make_room(int budget, uint64_t seed) {
    std::mt19937_64 rng(hash_u64(seed ^ 0x726f6f6dull));
    const Vec3 lo(-4, -3, 0), hi(4, 3, 3);

    std::vector<SurfacePatch> patches;
    auto add = [&](Vec3 origin, Vec3 u, Vec3 v, Vec3 n, double checker) {
        SurfacePatch s;
        s.origin = origin;
        s.u_axis = u;
        s.v_axis = v;
        s.normal = n;
        s.color_a = palette(rng, 0.25, 0.55);
        s.color_b = palette(rng, 0.45, 0.85);
        s.salt = rng();
        s.checker_cell = checker;
        patches.push_back(s);
    };
    // floor, ceiling, four walls
    add(lo, Vec3(8, 0, 0), Vec3(0, 6, 0), Vec3(0, 0, 1), 1.0);
    add(Vec3(-4, -3, 3), Vec3(8, 0, 0), Vec3(0, 6, 0), Vec3(0, 0, -1), 0.0);
    add(Vec3(-4, -3, 0), Vec3(8, 0, 0), Vec3(0, 0, 3), Vec3(0, 1, 0), 0.0);
    add(Vec3(-4, 3, 0), Vec3(8, 0, 0), Vec3(0, 0, 3), Vec3(0, -1, 0), 0.0);
    add(Vec3(-4, -3, 0), Vec3(0, 6, 0), Vec3(0, 0, 3), Vec3(1, 0, 0), 0.0);
    add(Vec3(4, -3, 0), Vec3(0, 6, 0), Vec3(0, 0, 3), Vec3(-1, 0, 0), 0.0);

    // props: axis-aligned crates near the walls, clear of the camera region
    const int n_props = 4;
    const double prop_spots[n_props][2] = {{-2.9, -2.1}, {2.8, 2.0}, {-2.7, 2.2}, {3.0, -2.0}};
    for (int k = 0; k < n_props; ++k) {
        const double sx = uniform_in(rng, 0.45, 0.85);
        const double sy = uniform_in(rng, 0.45, 0.85);
        const double sz = uniform_in(rng, 0.5, 1.2);
        const Vec3 c(prop_spots[k][0], prop_spots[k][1], 0.0);
        const Vec3 b0 = c - Vec3(sx / 2, sy / 2, 0);
        const Vec3f ca = palette(rng, 0.3, 0.9), cb = palette(rng, 0.2, 0.7);
        auto addp = [&](Vec3 origin, Vec3 u, Vec3 v, Vec3 n) {
            SurfacePatch s;
            s.origin = origin;
            s.u_axis = u;
            s.v_axis = v;
            s.normal = n;
            s.color_a = ca;
            s.color_b = cb;
            s.salt = rng();
            s.checker_cell = 0.0;
            patches.push_back(s);
        };
        addp(b0 + Vec3(0, 0, sz), Vec3(sx, 0, 0), Vec3(0, sy, 0), Vec3(0, 0, 1));  // top
        addp(b0, Vec3(sx, 0, 0), Vec3(0, 0, sz), Vec3(0, -1, 0));
        addp(b0 + Vec3(0, sy, 0), Vec3(sx, 0, 0), Vec3(0, 0, sz), Vec3(0, 1, 0));
        addp(b0, Vec3(0, sy, 0), Vec3(0, 0, sz), Vec3(-1, 0, 0));
        addp(b0 + Vec3(sx, 0, 0), Vec3(0, sy, 0), Vec3(0, 0, sz), Vec3(1, 0, 0));
    }

    const double spacing = fit_spacing(patches, budget);
    GaussianScene scene;
    scene.background = Vec3f(0.42f, 0.44f, 0.47f);
    scene.gaussians.reserve(static_cast<size_t>(budget));
    for (const auto& s : patches) emit_surface(scene.gaussians, s, spacing, rng);
    return scene;
}

GaussianScene make_checker_plane(int budget, uint64_t seed) {
    std::mt19937_64 rng(hash_u64(seed ^ 0x636865636bull));
    const double half = 6.0;
    const int n = std::max(2, static_cast<int>(std::floor(std::sqrt(0.96 * budget))));
    const double spacing = 2.0 * half / n;
    GaussianScene scene;
    scene.background = Vec3f(0.55f, 0.6f, 0.68f);
    scene.gaussians.reserve(static_cast<size_t>(n) * n);
    const Vec3f dark(0.12f, 0.12f, 0.14f), light(0.85f, 0.84f, 0.8f);
    for (int i = 0; i < n; ++i) {
        for (int j = 0; j < n; ++j) {
            const double x = -half + (i + 0.5 + uniform_in(rng, -0.3, 0.3)) * spacing;
            const double y = -half + (j + 0.5 + uniform_in(rng, -0.3, 0.3)) * spacing;
            const auto cu = static_cast<int64_t>(std::floor(x));
            const auto cv = static_cast<int64_t>(std::floor(y));
            const double t = texture(x, y, 0x706c616e65ull);
            Gaussian3D g;
            g.mean = Vec3f(static_cast<float>(x), static_cast<float>(y), 0.0f);
            g.scale = Vec3(0.75 * spacing, 0.75 * spacing, 0.06 * spacing).cast<float>();
            g.opacity = 0.92f;
            g.color = ((cu + cv) & 1) ? mix_color(dark, light, 0.1 * t)
                                      : mix_color(light, dark, 0.1 * t);
            scene.gaussians.push_back(g);
        }
    }
    return scene;
}

GaussianScene make_cloudfield(int budget, uint64_t seed) {
    std::mt19937_64 rng(hash_u64(seed ^ 0x636c6f7564ull));
    GaussianScene scene;
    scene.background = Vec3f(0.08f, 0.09f, 0.12f);
    scene.gaussians.reserve(static_cast<size_t>(budget));

    // enclosing shell so every view direction hits geometry
    const int n_shell = static_cast<int>(0.30 * budget);
    const double shell_r = 12.0;
    const Vec3f shell_a(0.10f, 0.12f, 0.18f), shell_b(0.22f, 0.24f, 0.3f);
    for (int i = 0; i < n_shell; ++i) {
        const double z = uniform_in(rng, -1.0, 1.0);
        const double phi = uniform_in(rng, 0.0, 2.0 * M_PI);
        const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 n(rxy * std::cos(phi), rxy * std::sin(phi), z);
        Gaussian3D g;
        g.mean = (shell_r * n).cast<float>();
        const Quat q = quat_from_z_to(-n);
        g.qw = static_cast<float>(q.w);
        g.qx = static_cast<float>(q.x);
        g.qy = static_cast<float>(q.y);
        g.qz = static_cast<float>(q.z);
        g.scale = Vec3(0.55, 0.55, 0.1).cast<float>();
        g.opacity = 0.9f;
        g.color = mix_color(shell_a, shell_b, texture(4.0 * n.x() + 8.0, 4.0 * n.y() + 8.0 * z,
                                                      0x7368656c6cull));
        scene.gaussians.push_back(g);
    }

    const int n_clusters = 14;
    const int per_cluster = (budget - n_shell) / n_clusters;
    for (int c = 0; c < n_clusters; ++c) {
        const double dist = uniform_in(rng, 2.8, 5.5);
        const double z = uniform_in(rng, -0.55, 0.75);
        const double phi = uniform_in(rng, 0.0, 2.0 * M_PI);
        const double rxy = std::sqrt(std::max(0.0, 1.0 - z * z));
        const Vec3 center = dist * Vec3(rxy * std::cos(phi), rxy * std::sin(phi), z);
        const Quat axes = Quat{uniform_in(rng, -1, 1), uniform_in(rng, -1, 1),
                               uniform_in(rng, -1, 1), uniform_in(rng, -1, 1)}
                              .normalized();
        const Vec3 sig(uniform_in(rng, 0.25, 0.7), uniform_in(rng, 0.25, 0.7),
                       uniform_in(rng, 0.15, 0.45));
        const Vec3f ca = palette(rng, 0.35, 0.95), cb = palette(rng, 0.2, 0.8);
        for (int i = 0; i < per_cluster; ++i) {
            const Vec3 local(sig.x() * normal01(rng), sig.y() * normal01(rng),
                             sig.z() * normal01(rng));
            Gaussian3D g;
            g.mean = (center + axes.rotate(local)).cast<float>();
            const double s = uniform_in(rng, 0.05, 0.11);
            g.scale = Vec3(s, s, s).cast<float>();
            g.opacity = static_cast<float>(uniform_in(rng, 0.55, 0.95));
            g.color = mix_color(ca, cb, uniform01(rng));
            scene.gaussians.push_back(g);
        }
    }
    return scene;
}

}  // namespace

double normal01(std::mt19937_64& rng) {
    const double u1 = 1.0 - uniform01(rng);
    const double u2 = uniform01(rng);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

GaussianScene apply_transform(const SimilarityTransform& s, const GaussianScene& scene) {
    GaussianScene out;
    out.background = scene.background;
    out.gaussians.reserve(scene.gaussians.size());
    for (const Gaussian3D& g : scene.gaussians) {
        Gaussian3D h = g;
        h.mean = s.apply(g.mean.cast<double>()).cast<float>();
        h.scale = (static_cast<float>(s.scale)) * g.scale;
        const Quat q = (s.rotation * Quat(g.qw, g.qx, g.qy, g.qz)).normalized();
        h.qw = static_cast<float>(q.w);
        h.qx = static_cast<float>(q.x);
        h.qy = static_cast<float>(q.y);
        h.qz = static_cast<float>(q.z);
        out.gaussians.push_back(h);
    }
    return out;
}

BoundingBox scene_bounds(const GaussianScene& scene) {
    BoundingBox b;
    if (scene.empty()) return b;
    Vec3 lo = scene.gaussians[0].mean.cast<double>(), hi = lo;
    for (const Gaussian3D& g : scene.gaussians) {
        const Vec3 m = g.mean.cast<double>();
        lo = lo.cwiseMin(m);
        hi = hi.cwiseMax(m);
    }
    b.min = lo;
    b.max = hi;
    return b;
}

void PointCloud::append(const PointCloud& other) {
    points.insert(points.end(), other.points.begin(), other.points.end());
    frame_index.insert(frame_index.end(), other.frame_index.begin(), other.frame_index.end());
}

void save_scene(const std::string& path, const GaussianScene& scene) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write("SPLATv1", 7);
    const auto count = static_cast<uint32_t>(scene.gaussians.size());
    f.write(reinterpret_cast<const char*>(&count), sizeof(count));
    for (const Gaussian3D& g : scene.gaussians) {
        float rec[14] = {g.mean.x(),  g.mean.y(),  g.mean.z(),  g.scale.x(), g.scale.y(),
                         g.scale.z(), g.qw,        g.qx,        g.qy,        g.qz,
                         g.opacity,   g.color.x(), g.color.y(), g.color.z()};
        f.write(reinterpret_cast<const char*>(rec), sizeof(rec));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

GaussianScene load_scene(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open scene file: " + path);
    char magic[7];
    f.read(magic, 7);
    if (!f || std::memcmp(magic, "SPLATv1", 7) != 0)
        throw std::runtime_error("not a SPLATv1 file: " + path);
    uint32_t count = 0;
    f.read(reinterpret_cast<char*>(&count), sizeof(count));
    GaussianScene scene;
    scene.gaussians.resize(count);
    for (uint32_t i = 0; i < count; ++i) {
        float rec[14];
        f.read(reinterpret_cast<char*>(rec), sizeof(rec));
        if (!f) throw std::runtime_error("truncated SPLATv1 file: " + path);
        Gaussian3D& g = scene.gaussians[i];
        g.mean = Vec3f(rec[0], rec[1], rec[2]);
        g.scale = Vec3f(rec[3], rec[4], rec[5]);
        g.qw = rec[6];
        g.qx = rec[7];
        g.qy = rec[8];
        g.qz = rec[9];
        g.opacity = rec[10];
        g.color = Vec3f(rec[11], rec[12], rec[13]);
    }
    return scene;
}

void save_pointcloud(const std::string& path, const PointCloud& cloud) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    char buf[160];
    for (size_t i = 0; i < cloud.points.size(); ++i) {
        const int32_t idx = i < cloud.frame_index.size() ? cloud.frame_index[i] : -1;
        std::snprintf(buf, sizeof(buf), "%.9g %.9g %.9g %d\n", cloud.points[i].x(),
                      cloud.points[i].y(), cloud.points[i].z(), idx);
        f << buf;
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

PointCloud load_pointcloud(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open point cloud: " + path);
    PointCloud cloud;
    std::string line;
    while (std::getline(f, line)) {
        if (line.empty() || line[0] == '#') continue;
        float x, y, z;
        int idx;
        if (std::sscanf(line.c_str(), "%f %f %f %d", &x, &y, &z, &idx) != 4)
            throw std::runtime_error("malformed point line: " + line);
        cloud.points.emplace_back(x, y, z);
        cloud.frame_index.push_back(idx);
    }
    return cloud;
}

GaussianScene generate_scene(const SceneRecipe& recipe, uint64_t seed) {
    if (recipe.name == "room") return make_room(recipe.budget, seed);
    if (recipe.name == "checker-plane") return make_checker_plane(recipe.budget, seed);
    if (recipe.name == "cloudfield") return make_cloudfield(recipe.budget, seed);
    throw UnknownRecipe(recipe.name);
}

SceneLayout scene_layout(const SceneRecipe& recipe) {
    SceneLayout layout;
    if (recipe.name == "room") {
        layout.free_space = {Vec3(-2.2, -1.5, 0.6), Vec3(2.2, 1.5, 2.4)};
        layout.focus = Vec3(0, 0, 1.4);
        layout.orbit_radius = 1.6;
    } else if (recipe.name == "checker-plane") {
        layout.free_space = {Vec3(-2.0, -2.0, 0.8), Vec3(2.0, 2.0, 2.8)};
        layout.focus = Vec3(0, 0, 0);
        layout.orbit_radius = 1.8;
    } else if (recipe.name == "cloudfield") {
        layout.free_space = {Vec3(-1.2, -1.2, -1.2), Vec3(1.2, 1.2, 1.2)};
        layout.focus = Vec3(0, 0, 0);
        layout.orbit_radius = 0.9;
    } else {
        throw UnknownRecipe(recipe.name);
    }
    return layout;
}

CameraPose look_at(const Vec3& eye, const Vec3& target, const Intrinsics& intr) {
    Vec3 fwd = target - eye;
    if (fwd.norm() < 1e-12) fwd = Vec3(1, 0, 0);
    fwd.normalize();
    Vec3 up(0, 0, 1);
    if (std::abs(fwd.dot(up)) > 1.0 - 1e-9) up = Vec3(1, 0, 0);
    const Vec3 right = fwd.cross(up).normalized();
    const Vec3 down = fwd.cross(right).normalized();
    Mat3 r;
    r.col(0) = right;
    r.col(1) = down;
    r.col(2) = fwd;
    CameraPose pose;
    pose.rotation = Quat::from_matrix(r);
    pose.translation = eye;
    pose.intr = intr;
    return pose;
}

Trajectory make_orbit_trajectory(const Vec3& pivot, double radius, const Vec3& focus,
                                 double start_angle_rad, double sweep_rad, double duration_s,
                                 double fps, const Intrinsics& intr) {
    Trajectory traj;
    traj.fps = fps;
    const auto n = static_cast<size_t>(std::llround(duration_s * fps));
    traj.poses.reserve(n);
    for (size_t i = 0; i < n; ++i) {
        const double t = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        const double a = start_angle_rad + sweep_rad * t;
        const Vec3 eye = pivot + Vec3(radius * std::cos(a), radius * std::sin(a), 0.0);
        traj.poses.push_back(look_at(eye, focus, intr));
    }
    return traj;
}

namespace {

Vec3 clamp_to(const BoundingBox& box, const Vec3& p) {
    return p.cwiseMax(box.min).cwiseMin(box.max);
}

Trajectory make_dolly(const TrajectoryRecipe& rec, std::mt19937_64& rng,
                      const SceneLayout& layout) {
    Trajectory traj;
    traj.fps = rec.fps;
    const auto n = static_cast<size_t>(std::llround(rec.duration_s * rec.fps));
    const Vec3 c = layout.free_space.center();
    const double az = uniform_in(rng, 0.0, 2.0 * M_PI);
    const Vec3 dir(std::cos(az), std::sin(az), uniform_in(rng, -0.06, 0.06));
    const Vec3 d = dir.normalized();
    // longest segment through the free box along d, then take most of it
    double t0 = -1e18, t1 = 1e18;
    for (int k = 0; k < 3; ++k) {
        if (std::abs(d[k]) < 1e-12) continue;
        double a = (layout.free_space.min[k] - c[k]) / d[k];
        double b = (layout.free_space.max[k] - c[k]) / d[k];
        if (a > b) std::swap(a, b);
        t0 = std::max(t0, a);
        t1 = std::min(t1, b);
    }
    const double span = 0.85 * (t1 - t0);
    const Vec3 start = c + d * (t0 + 0.075 * (t1 - t0));
    // guaranteed minimum sweep so the view always leaves its starting frustum
    const double pan =
        (uniform01(rng) < 0.5 ? -1.0 : 1.0) * uniform_in(rng, 0.45, 0.85);
    const double look_ahead = 4.0;
    for (size_t i = 0; i < n; ++i) {
        const double t = n > 1 ? static_cast<double>(i) / static_cast<double>(n - 1) : 0.0;
        const Vec3 eye = start + d * (span * t);
        const double yaw = pan * (t - 0.5);
        const Vec3 ld(std::cos(az + yaw), std::sin(az + yaw), d.z());
        traj.poses.push_back(look_at(eye, eye + look_ahead * ld.normalized(), rec.intr));
    }
    return traj;
}

Trajectory make_walk(const TrajectoryRecipe& rec, std::mt19937_64& rng,
                     const SceneLayout& layout) {
    Trajectory traj;
    traj.fps = rec.fps;
    const auto n = static_cast<size_t>(std::llround(rec.duration_s * rec.fps));
    const double dt = 1.0 / rec.fps;
    const double max_step_rad = (150.0 * M_PI / 180.0) * dt;  // 5 deg/frame at 30 fps

    // Confine the wander to the central half of free space: views taken from a
    // compact region overlap heavily, which keeps the trajectory smooth-looking.
    BoundingBox walk_box;
    walk_box.min = layout.free_space.center() - 0.25 * layout.free_space.extent();
    walk_box.max = layout.free_space.center() + 0.25 * layout.free_space.extent();
    // Keep the camera out of a horizontal cylinder around the focus: a near
    // pass would flip the look-at direction across the scene within frames.
    const double keep_out =
        std::min(0.45 * layout.orbit_radius,
                 0.7 * 0.5 * std::min(walk_box.extent().x(), walk_box.extent().y()));
    const double look_amp = std::min(0.5, 0.35 * keep_out);
    const auto push_out = [&](Vec3 p) {
        Vec3 d = p - layout.focus;
        d.z() = 0.0;
        if (d.norm() < keep_out) {
            const Vec3 u = d.norm() > 1e-9 ? Vec3(d.normalized()) : Vec3(1.0, 0.0, 0.0);
            p.x() = layout.focus.x() + keep_out * u.x();
            p.y() = layout.focus.y() + keep_out * u.y();
        }
        return p;
    };
    Vec3 pos = walk_box.center() +
               0.3 * Vec3(normal01(rng), normal01(rng), normal01(rng))
                         .cwiseProduct(0.5 * walk_box.extent());
    pos = push_out(clamp_to(walk_box, pos));
    Vec3 vel = Vec3::Zero();
    Vec3 look_target = layout.focus;
    Vec3 target_vel = Vec3::Zero();
    const double rho = std::exp(-dt / 2.0);
    const double rho_t = std::exp(-dt / 4.0);
    const double accel = 0.12;

    Quat prev_rot;
    bool have_prev = false;
    for (size_t i = 0; i < n; ++i) {
        CameraPose pose = look_at(pos, look_target, rec.intr);
        if (have_prev) {
            const double ang = prev_rot.angle_to(pose.rotation);
            if (ang > max_step_rad)
                pose.rotation = slerp(prev_rot, pose.rotation, max_step_rad / ang);
        }
        prev_rot = pose.rotation;
        have_prev = true;
        traj.poses.push_back(pose);

        vel = rho * vel + accel * std::sqrt(dt) *
                              Vec3(normal01(rng), normal01(rng), 0.4 * normal01(rng));
        Vec3 next = pos + vel * dt;
        for (int k = 0; k < 3; ++k) {  // reflect at the wander-region boundary
            if (next[k] < walk_box.min[k] || next[k] > walk_box.max[k]) {
                vel[k] = -vel[k];
                next[k] = std::clamp(next[k], walk_box.min[k], walk_box.max[k]);
            }
        }
        Vec3 radial = next - layout.focus;
        radial.z() = 0.0;
        if (radial.norm() < keep_out) {  // reflect off the keep-out cylinder
            const Vec3 u = radial.norm() > 1e-9 ? Vec3(radial.normalized()) : Vec3(1.0, 0.0, 0.0);
            const double vr = vel.dot(u);
            if (vr < 0.0) vel -= 2.0 * vr * u;
            next = push_out(next);
        }
        pos = next;
        target_vel = rho_t * target_vel +
                     0.10 * std::sqrt(dt) * Vec3(normal01(rng), normal01(rng), 0.3 * normal01(rng));
        look_target += target_vel * dt;
        const Vec3 off = look_target - layout.focus;
        if (off.norm() > look_amp) look_target = layout.focus + look_amp * off.normalized();
    }
    return traj;
}

}  // namespace

Trajectory generate_trajectory(const TrajectoryRecipe& recipe, uint64_t seed,
                               const SceneLayout& layout) {
    if (!(recipe.duration_s > 0.0) || !(recipe.fps > 0.0))
        throw std::invalid_argument("trajectory duration and fps must be positive");
    std::mt19937_64 rng(hash_u64(seed ^ 0x74726a6bull));
    if (recipe.kind == "orbit") {
        const double radius = layout.orbit_radius * uniform_in(rng, 0.85, 1.15);
        const double zlo = layout.free_space.min.z(), zhi = layout.free_space.max.z();
        const double height = zlo + uniform_in(rng, 0.45, 0.8) * (zhi - zlo);
        const Vec3 pivot(layout.focus.x(), layout.focus.y(), height);
        const double start = uniform_in(rng, 0.0, 2.0 * M_PI);
        const double sweep = uniform_in(rng, 70.0, 160.0) * (M_PI / 180.0) *
                             (uniform01(rng) < 0.5 ? -1.0 : 1.0);
        return make_orbit_trajectory(pivot, radius, layout.focus, start, sweep,
                                     recipe.duration_s, recipe.fps, recipe.intr);
    }
    if (recipe.kind == "dolly") return make_dolly(recipe, rng, layout);
    if (recipe.kind == "smooth-random-walk") return make_walk(recipe, rng, layout);
    throw UnknownKind(recipe.kind);
}

}  // namespace keysplat
