#include "keysplat/renderer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

namespace keysplat {

namespace {

constexpr int kTile = 16;

// scene-constant data laid out for the projection loop: L = R * diag(scale)
// (sqrt-covariance), so the camera-space covariance is (W L)(W L)^T
struct ScenePrep {
    size_t n = 0;
    std::vector<float> mean;     // 3n
    std::vector<float> l;        // 9n, row-major
    std::vector<float> opacity;  // n
    std::vector<float> color;    // 3n
};

ScenePrep prep_scene(const GaussianScene& scene) {
    ScenePrep p;
    p.n = scene.size();
    p.mean.resize(3 * p.n);
    p.l.resize(9 * p.n);
    p.opacity.resize(p.n);
    p.color.resize(3 * p.n);
    for (size_t i = 0; i < p.n; ++i) {
        const Gaussian3D& g = scene.gaussians[i];
        p.mean[3 * i + 0] = g.mean.x();
        p.mean[3 * i + 1] = g.mean.y();
        p.mean[3 * i + 2] = g.mean.z();
        const float qw = g.qw, qx = g.qx, qy = g.qy, qz = g.qz;
        const float r[9] = {1 - 2 * (qy * qy + qz * qz), 2 * (qx * qy - qw * qz),
                            2 * (qx * qz + qw * qy),     2 * (qx * qy + qw * qz),
                            1 - 2 * (qx * qx + qz * qz), 2 * (qy * qz - qw * qx),
                            2 * (qx * qz - qw * qy),     2 * (qy * qz + qw * qx),
                            1 - 2 * (qx * qx + qy * qy)};
        for (int row = 0; row < 3; ++row)
            for (int col = 0; col < 3; ++col)
                p.l[9 * i + 3 * row + col] = r[3 * row + col] * g.scale[col];
        p.opacity[i] = g.opacity;
        p.color[3 * i + 0] = g.color.x();
        p.color[3 * i + 1] = g.color.y();
        p.color[3 * i + 2] = g.color.z();
    }
    return p;
}

struct Splat2D {
    float u, v;                       // projected mean, pixel units
    float conic_a, conic_b, conic_c;  // inverse 2D covariance
    float q_max;                      // Mahalanobis^2 bound where alpha >= min_alpha
    float depth;
    float opacity;
    float r, g, b;
    int x0, x1, y0, y1;  // pixel bbox, half-open
};

void project_splats(const ScenePrep& prep, const CameraPose& pose, int width, int height,
                    const RenderSettings& st, std::vector<Splat2D>& out,
                    std::vector<uint32_t>& order) {
    const Eigen::Matrix3f w_cf_m = pose.rotation.conjugate().to_matrix().cast<float>();
    float w_cf[9];
    for (int r = 0; r < 3; ++r)
        for (int c = 0; c < 3; ++c) w_cf[3 * r + c] = w_cf_m(r, c);
    const float tx0 = static_cast<float>(pose.translation.x());
    const float ty0 = static_cast<float>(pose.translation.y());
    const float tz0 = static_cast<float>(pose.translation.z());
    const float fx = static_cast<float>(pose.intr.fx), fy = static_cast<float>(pose.intr.fy);
    const float cx = static_cast<float>(pose.intr.cx), cy = static_cast<float>(pose.intr.cy);
    const float lim_x = 1.3f * (0.5f * width + std::abs(cx - 0.5f * width)) / fx;
    const float lim_y = 1.3f * (0.5f * height + std::abs(cy - 0.5f * height)) / fy;
    const float near = static_cast<float>(kNearPlane);

    out.clear();
    out.reserve(prep.n);
    for (size_t i = 0; i < prep.n; ++i) {
        const float op = std::min(prep.opacity[i], st.alpha_clamp);
        if (op < st.min_alpha) continue;
        const float mx = prep.mean[3 * i] - tx0, my = prep.mean[3 * i + 1] - ty0,
                    mz = prep.mean[3 * i + 2] - tz0;
        const float pz = w_cf[6] * mx + w_cf[7] * my + w_cf[8] * mz;
        if (pz <= near) continue;
        const float px = w_cf[0] * mx + w_cf[1] * my + w_cf[2] * mz;
        const float py = w_cf[3] * mx + w_cf[4] * my + w_cf[5] * mz;
        const float inv_z = 1.0f / pz;
        const float u = fx * px * inv_z + cx;
        const float v = fy * py * inv_z + cy;

        // M = W * L, then rows of N = J * M give the 2D sqrt-covariance
        const float* l = &prep.l[9 * i];
        float m[9];
        for (int r = 0; r < 3; ++r) {
            m[3 * r + 0] = w_cf[3 * r] * l[0] + w_cf[3 * r + 1] * l[3] + w_cf[3 * r + 2] * l[6];
            m[3 * r + 1] = w_cf[3 * r] * l[1] + w_cf[3 * r + 1] * l[4] + w_cf[3 * r + 2] * l[7];
            m[3 * r + 2] = w_cf[3 * r] * l[2] + w_cf[3 * r + 1] * l[5] + w_cf[3 * r + 2] * l[8];
        }
        const float bx = std::clamp(px * inv_z, -lim_x, lim_x);
        const float by = std::clamp(py * inv_z, -lim_y, lim_y);
        const float j00 = fx * inv_z, j02 = -fx * bx * inv_z;
        const float j11 = fy * inv_z, j12 = -fy * by * inv_z;
        const float n0[3] = {j00 * m[0] + j02 * m[6], j00 * m[1] + j02 * m[7],
                             j00 * m[2] + j02 * m[8]};
        const float n1[3] = {j11 * m[3] + j12 * m[6], j11 * m[4] + j12 * m[7],
                             j11 * m[5] + j12 * m[8]};
        const float ca = n0[0] * n0[0] + n0[1] * n0[1] + n0[2] * n0[2] + st.low_pass_px2;
        const float cb = n0[0] * n1[0] + n0[1] * n1[1] + n0[2] * n1[2];
        const float cc = n1[0] * n1[0] + n1[1] * n1[1] + n1[2] * n1[2] + st.low_pass_px2;

        const float det = ca * cc - cb * cb;
        if (!(det > 0.0f)) continue;
        const float inv_det = 1.0f / det;

        // Mahalanobis^2 at which alpha falls to the cull threshold, and the
        // bounding radius from the major eigenvalue
        const float q_max = 2.0f * std::log(op / st.min_alpha);
        if (!(q_max > 0.0f)) continue;
        const float mid = 0.5f * (ca + cc);
        const float lam_max = mid + std::sqrt(std::max(0.01f, mid * mid - det));
        const float radius = std::ceil(std::sqrt(q_max * lam_max)) + 1.0f;

        Splat2D s;
        s.x0 = std::max(0, static_cast<int>(std::floor(u - radius)));
        s.x1 = std::min(width, static_cast<int>(std::ceil(u + radius)) + 1);
        s.y0 = std::max(0, static_cast<int>(std::floor(v - radius)));
        s.y1 = std::min(height, static_cast<int>(std::ceil(v + radius)) + 1);
        if (s.x0 >= s.x1 || s.y0 >= s.y1) continue;
        s.u = u;
        s.v = v;
        s.conic_a = cc * inv_det;
        s.conic_b = -cb * inv_det;
        s.conic_c = ca * inv_det;
        s.q_max = q_max;
        s.depth = pz;
        s.opacity = op;
        s.r = prep.color[3 * i];
        s.g = prep.color[3 * i + 1];
        s.b = prep.color[3 * i + 2];
        out.push_back(s);
    }

    order.resize(out.size());
    std::iota(order.begin(), order.end(), 0u);
    std::sort(order.begin(), order.end(), [&](uint32_t a, uint32_t b) {
        if (out[a].depth != out[b].depth) return out[a].depth < out[b].depth;
        return a < b;  // ties by primitive index: total order, insertion-stable
    });
}

struct TileAccum {
    float t[kTile * kTile];
    float rgb[kTile * kTile * 3];
    float dsum[kTile * kTile];
    float wsum[kTile * kTile];
};

RenderedFrame render_prepared(const ScenePrep& prep, const Vec3f& background,
                              const CameraPose& pose, int width, int height,
                              const RenderSettings& settings) {
    RenderedFrame frame;
    frame.width = width;
    frame.height = height;
    const size_t n_px = static_cast<size_t>(width) * height;
    frame.color.resize(3 * n_px);
    frame.alpha.assign(n_px, 0.0f);
    frame.depth.assign(n_px, 0.0f);
    for (size_t i = 0; i < n_px; ++i) {
        frame.color[3 * i + 0] = background.x();
        frame.color[3 * i + 1] = background.y();
        frame.color[3 * i + 2] = background.z();
    }
    if (prep.n == 0) return frame;

    std::vector<Splat2D> splats;
    std::vector<uint32_t> order;
    project_splats(prep, pose, width, height, settings, splats, order);
    if (splats.empty()) return frame;

    // bin depth-sorted splats into tiles (counting pass, then fill)
    const int tiles_x = (width + kTile - 1) / kTile;
    const int tiles_y = (height + kTile - 1) / kTile;
    const size_t n_tiles = static_cast<size_t>(tiles_x) * tiles_y;
    std::vector<uint32_t> tile_count(n_tiles + 1, 0);
    for (uint32_t idx : order) {
        const Splat2D& s = splats[idx];
        const int tx0 = s.x0 / kTile, tx1 = (s.x1 - 1) / kTile;
        const int ty0 = s.y0 / kTile, ty1 = (s.y1 - 1) / kTile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                tile_count[static_cast<size_t>(ty) * tiles_x + tx + 1]++;
    }
    for (size_t t = 0; t < n_tiles; ++t) tile_count[t + 1] += tile_count[t];
    std::vector<uint32_t> tile_lists(tile_count[n_tiles]);
    std::vector<uint32_t> cursor(tile_count.begin(), tile_count.end() - 1);
    for (uint32_t idx : order) {
        const Splat2D& s = splats[idx];
        const int tx0 = s.x0 / kTile, tx1 = (s.x1 - 1) / kTile;
        const int ty0 = s.y0 / kTile, ty1 = (s.y1 - 1) / kTile;
        for (int ty = ty0; ty <= ty1; ++ty)
            for (int tx = tx0; tx <= tx1; ++tx)
                tile_lists[cursor[static_cast<size_t>(ty) * tiles_x + tx]++] = idx;
    }

    // composite tile by tile; tiles write disjoint pixels
    TileAccum acc;
    for (int ty = 0; ty < tiles_y; ++ty) {
        for (int tx = 0; tx < tiles_x; ++tx) {
            const size_t t = static_cast<size_t>(ty) * tiles_x + tx;
            const uint32_t begin = tile_count[t], end = tile_count[t + 1];
            if (begin == end) continue;
            const int px0 = tx * kTile, py0 = ty * kTile;
            const int tw = std::min(kTile, width - px0), th = std::min(kTile, height - py0);
            for (int i = 0; i < tw * th; ++i) {
                acc.t[i] = 1.0f;
                acc.dsum[i] = 0.0f;
                acc.wsum[i] = 0.0f;
            }
            std::memset(acc.rgb, 0, sizeof(float) * 3 * static_cast<size_t>(tw) * th);
            int live = tw * th;

            for (uint32_t k = begin; k < end && live > 0; ++k) {
                const Splat2D& s = splats[tile_lists[k]];
                const int iy0 = std::max(s.y0, py0), iy1 = std::min(s.y1, py0 + th);
                for (int y = iy0; y < iy1; ++y) {
                    const float dy = (static_cast<float>(y) + 0.5f) - s.v;
                    // solve conic_a*dx^2 + 2*conic_b*dy*dx + conic_c*dy^2 <= q_max
                    // so only pixels with alpha >= min_alpha are touched
                    const float disc =
                        s.conic_b * s.conic_b * dy * dy -
                        s.conic_a * (s.conic_c * dy * dy - s.q_max);
                    if (!(disc > 0.0f)) continue;
                    const float sq = std::sqrt(disc);
                    const float inv_a = 1.0f / s.conic_a;
                    const float dx_lo = (-s.conic_b * dy - sq) * inv_a;
                    const float dx_hi = (-s.conic_b * dy + sq) * inv_a;
                    int x_lo = static_cast<int>(std::ceil(s.u + dx_lo - 0.5f));
                    int x_hi = static_cast<int>(std::floor(s.u + dx_hi - 0.5f));
                    x_lo = std::max({x_lo, s.x0, px0});
                    x_hi = std::min({x_hi, s.x1 - 1, px0 + tw - 1});
                    const int row = (y - py0) * tw - px0;
                    for (int x = x_lo; x <= x_hi; ++x) {
                        const int p = row + x;
                        const float tcur = acc.t[p];
                        if (tcur < settings.transmittance_eps) continue;
                        const float dx = (static_cast<float>(x) + 0.5f) - s.u;
                        const float power =
                            -0.5f * (s.conic_a * dx * dx + s.conic_c * dy * dy) -
                            s.conic_b * dx * dy;
                        const float a =
                            std::min(settings.alpha_clamp, s.opacity * std::exp(power));
                        if (a < settings.min_alpha) continue;
                        const float w = a * tcur;
                        acc.rgb[3 * p + 0] += s.r * w;
                        acc.rgb[3 * p + 1] += s.g * w;
                        acc.rgb[3 * p + 2] += s.b * w;
                        acc.dsum[p] += s.depth * w;
                        acc.wsum[p] += w;
                        const float tnew = tcur * (1.0f - a);
                        acc.t[p] = tnew;
                        if (tnew < settings.transmittance_eps) --live;
                    }
                }
            }

            for (int y = 0; y < th; ++y) {
                for (int x = 0; x < tw; ++x) {
                    const int p = y * tw + x;
                    const size_t o = static_cast<size_t>(py0 + y) * width + (px0 + x);
                    const float tfin = acc.t[p];
                    frame.alpha[o] = 1.0f - tfin;
                    frame.color[3 * o + 0] = acc.rgb[3 * p + 0] + tfin * background.x();
                    frame.color[3 * o + 1] = acc.rgb[3 * p + 1] + tfin * background.y();
                    frame.color[3 * o + 2] = acc.rgb[3 * p + 2] + tfin * background.z();
                    frame.depth[o] = acc.wsum[p] > 0.0f ? acc.dsum[p] / acc.wsum[p] : 0.0f;
                }
            }
        }
    }
    return frame;
}

}  // namespace

RenderedFrame render(const GaussianScene& scene, const CameraPose& pose, int width, int height,
                     const RenderSettings& settings) {
    return render_prepared(prep_scene(scene), scene.background, pose, width, height, settings);
}

std::vector<RenderedFrame> render_video(const GaussianScene& scene, const Trajectory& traj,
                                        int width, int height, const RenderSettings& settings,
                                        VideoRenderStats* stats) {
    const ScenePrep prep = prep_scene(scene);
    std::vector<RenderedFrame> frames;
    frames.reserve(traj.size());
    if (stats) {
        stats->frame_ms.clear();
        stats->total_s = 0.0;
    }
    for (const CameraPose& pose : traj.poses) {
        const auto t0 = std::chrono::steady_clock::now();
        frames.push_back(render_prepared(prep, scene.background, pose, width, height, settings));
        const auto t1 = std::chrono::steady_clock::now();
        if (stats) {
            const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            stats->frame_ms.push_back(ms);
            stats->total_s += ms / 1000.0;
        }
    }
    return frames;
}

std::vector<RenderedFrame> render_video_chunked(
    const std::vector<GaussianScene>& chunks,
    const std::vector<std::pair<size_t, size_t>>& ranges, const Trajectory& traj, int width,
    int height, const RenderSettings& settings, VideoRenderStats* stats) {
    if (chunks.size() != ranges.size())
        throw std::invalid_argument("chunk scene/range count mismatch");
    std::vector<int> owner(traj.size(), -1);
    for (size_t c = 0; c < ranges.size(); ++c) {
        for (size_t i = ranges[c].first; i <= ranges[c].second && i < traj.size(); ++i) {
            if (owner[i] < 0) owner[i] = static_cast<int>(c);  // earlier chunk keeps overlaps
        }
    }
    for (size_t i = 0; i < traj.size(); ++i)
        if (owner[i] < 0) throw UncoveredFrameIndex(i);

    std::vector<ScenePrep> preps(chunks.size());
    std::vector<bool> prepped(chunks.size(), false);
    std::vector<RenderedFrame> frames;
    frames.reserve(traj.size());
    if (stats) {
        stats->frame_ms.clear();
        stats->total_s = 0.0;
    }
    for (size_t i = 0; i < traj.size(); ++i) {
        const auto c = static_cast<size_t>(owner[i]);
        if (!prepped[c]) {
            preps[c] = prep_scene(chunks[c]);
            prepped[c] = true;
        }
        const auto t0 = std::chrono::steady_clock::now();
        frames.push_back(render_prepared(preps[c], chunks[c].background, traj.poses[i], width,
                                         height, settings));
        const auto t1 = std::chrono::steady_clock::now();
        if (stats) {
            const double ms = std::chrono::duration<double, std::milli>(t1 - t0).count();
            stats->frame_ms.push_back(ms);
            stats->total_s += ms / 1000.0;
        }
    }
    return frames;
}

void save_ppm(const std::string& path, const RenderedFrame& frame) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f << "P6\n" << frame.width << " " << frame.height << "\n255\n";
    std::vector<uint8_t> row(static_cast<size_t>(frame.width) * 3);
    for (int y = 0; y < frame.height; ++y) {
        for (int x = 0; x < frame.width; ++x) {
            const float* c = frame.rgb(x, y);
            for (int k = 0; k < 3; ++k) {
                const float v = std::clamp(c[k], 0.0f, 1.0f);
                row[3 * x + k] = static_cast<uint8_t>(std::lround(v * 255.0f));
            }
        }
        f.write(reinterpret_cast<const char*>(row.data()), static_cast<std::streamsize>(row.size()));
    }
    if (!f) throw std::runtime_error("write failed: " + path);
}

PpmImage load_ppm(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open image: " + path);
    std::string magic;
    f >> magic;
    if (magic != "P6") throw std::runtime_error("not a binary PPM: " + path);
    int w = 0, h = 0, maxval = 0;
    f >> w >> h >> maxval;
    if (w <= 0 || h <= 0 || maxval != 255)
        throw std::runtime_error("unsupported PPM header in " + path);
    f.get();  // single whitespace after maxval
    PpmImage img;
    img.width = w;
    img.height = h;
    img.rgb.resize(static_cast<size_t>(w) * h * 3);
    f.read(reinterpret_cast<char*>(img.rgb.data()), static_cast<std::streamsize>(img.rgb.size()));
    if (!f) throw std::runtime_error("truncated PPM: " + path);
    return img;
}

void save_f32(const std::string& path, const std::vector<float>& data) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot open for writing: " + path);
    f.write(reinterpret_cast<const char*>(data.data()),
            static_cast<std::streamsize>(data.size() * sizeof(float)));
    if (!f) throw std::runtime_error("write failed: " + path);
}

std::vector<float> load_f32(const std::string& path) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open raw file: " + path);
    const auto bytes = static_cast<size_t>(f.tellg());
    if (bytes % sizeof(float) != 0) throw std::runtime_error("bad f32 raw size: " + path);
    std::vector<float> data(bytes / sizeof(float));
    f.seekg(0);
    f.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("read failed: " + path);
    return data;
}

}  // namespace keysplat
