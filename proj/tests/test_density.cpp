#include "keysplat/density.hpp"
#include "keysplat/scene.hpp"

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <random>

using namespace keysplat;
namespace fs = std::filesystem;

namespace {

CameraPose random_pose(std::mt19937_64& rng) {
    Vec3 axis(normal01(rng), normal01(rng), normal01(rng));
    if (axis.norm() < 1e-9) axis = Vec3(0, 0, 1);
    axis.normalize();
    CameraPose p;
    p.rotation = Quat::from_axis_angle(axis, uniform_in(rng, -3.0, 3.0));
    p.translation = Vec3(uniform_in(rng, -4, 4), uniform_in(rng, -4, 4), uniform_in(rng, -4, 4));
    p.intr = {221.7, 221.7, 128.0, 128.0};
    return p;
}

Trajectory random_traj(std::mt19937_64& rng, int n) {
    Trajectory t;
    t.fps = 5.0;
    for (int i = 0; i < n; ++i) t.poses.push_back(random_pose(rng));
    return t;
}

VecX random_descriptor(std::mt19937_64& rng, int dim) {
    VecX d(dim);
    for (int i = 0; i < dim; ++i) d(i) = normal01(rng);
    return d;
}

Eigen::Index expected_param_count(const DensityConfig& c) {
    const Eigen::Index d = c.dim, f = Eigen::Index(c.ffn_mult) * d;
    Eigen::Index n = (7 * d + d) + (d * d + d) + (Eigen::Index(c.descriptor_dim) * d + d);
    n += Eigen::Index(c.blocks) * (2 * d + 4 * (d * d + d) + 2 * d + (d * f + f) + (f * d + d));
    n += 3 * (d * d + d) + (d + 1);
    return n;
}

}  // namespace

TEST_CASE("parameter store layout and construction guards") {
    DensityConfig cfg;  // defaults: d=64 H=4 L=4
    DensityModel model(cfg, 11);
    CHECK(model.params().values.size() == expected_param_count(cfg));
    CHECK(model.params().values.allFinite());
    CHECK(model.params().grads.size() == model.params().values.size());

    DensityConfig tiny{16, 4, 2, 8, 4};
    CHECK(DensityModel(tiny, 0).params().values.size() == expected_param_count(tiny));

    DensityConfig bad{30, 4, 4, 16, 4};
    CHECK_THROWS_AS(DensityModel(bad, 0), ShapeMismatch);
}

TEST_CASE("pose input assembly matches hand-built [quat | translation] rows") {
    Trajectory traj;
    CameraPose p;
    p.rotation = Quat::from_axis_angle(Vec3(0, 1, 0), 0.7);
    p.translation = Vec3(1.5, -2.25, 0.125);
    traj.poses.push_back(p);
    // negative-w quaternion must arrive sign-canonicalized
    CameraPose q = p;
    q.rotation = Quat{-p.rotation.w, -p.rotation.x, -p.rotation.y, -p.rotation.z};
    q.translation = Vec3(-8, 0.5, 3);
    traj.poses.push_back(q);

    const MatX x = DensityModel::assemble_pose_inputs(traj);
    REQUIRE(x.rows() == 2);
    REQUIRE(x.cols() == 7);
    const Quat c = p.rotation.normalized().canonical();
    CHECK(x(0, 0) == doctest::Approx(c.w).epsilon(1e-15));
    CHECK(x(0, 1) == doctest::Approx(c.x).epsilon(1e-15));
    CHECK(x(0, 2) == doctest::Approx(c.y).epsilon(1e-15));
    CHECK(x(0, 3) == doctest::Approx(c.z).epsilon(1e-15));
    CHECK(x(0, 4) == 1.5);
    CHECK(x(0, 5) == -2.25);
    CHECK(x(0, 6) == 0.125);
    // both rows carry the same canonical quaternion despite the sign flip
    CHECK(x(1, 0) == x(0, 0));
    CHECK(x(1, 1) == x(0, 1));
    CHECK(x(1, 2) == x(0, 2));
    CHECK(x(1, 3) == x(0, 3));
    CHECK(x(1, 4) == -8.0);

    Trajectory empty;
    CHECK_THROWS_AS(DensityModel::assemble_pose_inputs(empty), EmptyTrajectory);
}

TEST_CASE("zero-weight embedding MLP maps every pose to the bias vector") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 3);
    auto& v = model.params().values;
    v.setZero();
    const Eigen::Index d = cfg.dim;
    const Eigen::Index embed2_bias = 8 * d + d * d;  // after embed1 W,b and embed2 W
    VecX beta(d);
    for (Eigen::Index j = 0; j < d; ++j) beta(j) = 0.25 + 0.01 * double(j);
    v.segment(embed2_bias, d) = beta;

    std::mt19937_64 rng(5);
    const MatX tokens = model.embed_pose_tokens(random_traj(rng, 4));
    REQUIRE(tokens.rows() == 4);
    for (Eigen::Index i = 0; i < tokens.rows(); ++i)
        for (Eigen::Index j = 0; j < d; ++j) CHECK(tokens(i, j) == beta(j));
}

TEST_CASE("identical poses embed to identical tokens") {
    DensityConfig cfg{32, 4, 2, 8, 4};
    DensityModel model(cfg, 19);
    std::mt19937_64 rng(2);
    const CameraPose p = random_pose(rng);
    Trajectory traj;
    traj.poses = {p, random_pose(rng), p};
    const MatX tokens = model.embed_pose_tokens(traj);
    // rows sit in different GEMM panels, so equality is to rounding, not bits
    CHECK((tokens.row(0) - tokens.row(2)).cwiseAbs().maxCoeff() < 1e-12);
    CHECK((tokens.row(0) - tokens.row(1)).cwiseAbs().maxCoeff() > 1e-3);

    // the same trajectory embedded twice is bit-identical
    const MatX again = model.embed_pose_tokens(traj);
    CHECK((again.array() == tokens.array()).all());
}

TEST_CASE("permuting camera tokens leaves the pooled output unchanged") {
    DensityConfig cfg{32, 4, 3, 12, 4};
    DensityModel model(cfg, 23);
    std::mt19937_64 rng(7);
    Trajectory traj = random_traj(rng, 9);
    const VecX desc = random_descriptor(rng, cfg.descriptor_dim);
    const double y_ref = model.forward(traj, desc);

    std::mt19937_64 shuffle_rng(99);
    for (int rep = 0; rep < 5; ++rep) {
        Trajectory shuffled = traj;
        std::shuffle(shuffled.poses.begin(), shuffled.poses.end(), shuffle_rng);
        CHECK(model.forward(shuffled, desc) == doctest::Approx(y_ref).epsilon(1e-12));
    }
}

TEST_CASE("single-pose trajectory gives a valid two-token forward pass") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 31);
    std::mt19937_64 rng(4);
    Trajectory traj = random_traj(rng, 1);
    const VecX desc = random_descriptor(rng, cfg.descriptor_dim);
    const double y = model.forward(traj, desc);
    CHECK(std::isfinite(y));
    CHECK(model.predicted_count(traj, desc) == 2);  // single frame clamps to the floor
}

TEST_CASE("shape guards") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 1);
    std::mt19937_64 rng(1);
    Trajectory traj = random_traj(rng, 3);
    CHECK_THROWS_AS(model.forward(traj, random_descriptor(rng, 9)), ShapeMismatch);
    CHECK_THROWS_AS(model.forward(traj, random_descriptor(rng, 7)), ShapeMismatch);
    CHECK_NOTHROW(model.forward(traj, random_descriptor(rng, 8)));
}

TEST_CASE("loss zero point and direct substitution") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 8);
    model.params().values.setZero();  // every token scalar = 0, so ybar = 0
    std::mt19937_64 rng(3);
    DensitySample s;
    s.traj = random_traj(rng, 4);
    s.descriptor = random_descriptor(rng, cfg.descriptor_dim);
    s.n_gt = 10;
    CHECK(model.forward(s.traj, s.descriptor) == 0.0);
    CHECK(model.sample_loss(s) == 1.0);  // (0 - 0.1*10)^2

    // ybar == 0.1 * n_gt -> zero loss: force ybar via the final head bias
    model.params().values(model.params().values.size() - 1) = 0.4;
    s.n_gt = 4;
    CHECK(model.forward(s.traj, s.descriptor) == doctest::Approx(0.4).epsilon(1e-15));
    CHECK(model.sample_loss(s) == doctest::Approx(0.0).epsilon(1e-24));

    // batch loss = mean over samples
    DensitySample s2 = s;
    s2.n_gt = 9;  // (0.4 - 0.9)^2 = 0.25
    const double mean = dataset_loss(model, {s, s2});
    CHECK(mean == doctest::Approx(0.125).epsilon(1e-12));
}

TEST_CASE("predicted count clamps into [2, n_frames]") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 8);
    auto& v = model.params().values;
    std::mt19937_64 rng(6);
    Trajectory traj = random_traj(rng, 12);
    const VecX desc = random_descriptor(rng, cfg.descriptor_dim);

    v.setZero();
    v(v.size() - 1) = 10.0;  // ybar = 10 -> 100 keyframes, clamped to 12 frames
    CHECK(model.predicted_count(traj, desc) == 12);
    v(v.size() - 1) = -3.0;  // negative -> floor of 2
    CHECK(model.predicted_count(traj, desc) == 2);
    v(v.size() - 1) = 0.58;  // 5.8 -> rounds to 6
    CHECK(model.predicted_count(traj, desc) == 6);
}

TEST_CASE("analytic gradient matches central finite differences on every parameter") {
    DensityConfig cfg{16, 4, 4, 16, 4};  // full depth, tiny width
    DensityModel model(cfg, 42);
    std::mt19937_64 rng(17);
    DensitySample s;
    s.traj = random_traj(rng, 2);  // 2 pose tokens + descriptor = 3 tokens
    s.descriptor = random_descriptor(rng, cfg.descriptor_dim);
    s.n_gt = 5;

    model.params().zero_grad();
    const double loss0 = model.loss_and_grad(s);
    CHECK(loss0 > 0.0);
    const VecX analytic = model.params().grads;

    const double eps = 1e-4;
    auto& v = model.params().values;
    double max_rel = 0.0;
    Eigen::Index worst = -1;
    for (Eigen::Index i = 0; i < v.size(); ++i) {
        const double keep = v(i);
        v(i) = keep + eps;
        const double lp = model.sample_loss(s);
        v(i) = keep - eps;
        const double lm = model.sample_loss(s);
        v(i) = keep;
        const double fd = (lp - lm) / (2.0 * eps);
        const double denom = std::max({std::abs(fd), std::abs(analytic(i)), 1e-7});
        const double rel = std::abs(fd - analytic(i)) / denom;
        if (rel > max_rel) {
            max_rel = rel;
            worst = i;
        }
    }
    MESSAGE("gradcheck over ", v.size(), " parameters, max relative error ", max_rel,
            " at flat index ", worst);
    CHECK(max_rel < 1e-4);
}

TEST_CASE("gradient accumulation scales linearly") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 9);
    std::mt19937_64 rng(12);
    DensitySample s;
    s.traj = random_traj(rng, 3);
    s.descriptor = random_descriptor(rng, cfg.descriptor_dim);
    s.n_gt = 6;

    model.params().zero_grad();
    model.loss_and_grad(s, 1.0);
    const VecX g1 = model.params().grads;
    model.params().zero_grad();
    model.loss_and_grad(s, 0.5);
    model.loss_and_grad(s, 0.5);
    const VecX g2 = model.params().grads;
    CHECK((g1 - g2).cwiseAbs().maxCoeff() < 1e-12 * std::max(1.0, g1.cwiseAbs().maxCoeff()));
}

TEST_CASE("training on a constant-label dataset drives loss to zero") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 77);
    std::mt19937_64 rng(21);
    std::vector<DensitySample> dataset;
    for (int i = 0; i < 6; ++i) {
        DensitySample s;
        s.traj = random_traj(rng, 8 + (i % 4));  // >= 8 frames so the count clamp stays inert
        s.descriptor = random_descriptor(rng, cfg.descriptor_dim);
        s.n_gt = 7;
        dataset.push_back(std::move(s));
    }
    TrainConfig tc;
    tc.steps = 600;
    tc.batch_size = 4;
    tc.lr = 3e-3;
    tc.seed = 5;
    const TrainResult r = train_density_model(model, dataset, tc);
    MESSAGE("constant-label: initial ", r.initial_loss, " final ", r.final_loss);
    CHECK(r.final_loss < 1e-4);
    for (const auto& s : dataset) CHECK(model.predicted_count(s.traj, s.descriptor) == 7);
    CHECK(r.curve.size() == 600);
    CHECK(r.curve.front().first == 1);
}

TEST_CASE("linearly separable toy dataset trains below 1e-3") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 55);
    std::mt19937_64 rng(33);
    const Trajectory traj = random_traj(rng, 1);
    std::vector<DensitySample> dataset;
    for (int i = 0; i < 24; ++i) {
        DensitySample s;
        s.traj = traj;
        s.n_gt = 2 + (i % 11);
        s.descriptor = VecX::Zero(cfg.descriptor_dim);
        s.descriptor(0) = 0.1 * double(s.n_gt);  // target is linearly present
        dataset.push_back(std::move(s));
    }
    TrainConfig tc;
    tc.steps = 1500;
    tc.batch_size = 8;
    tc.lr = 3e-3;
    tc.seed = 2;
    const TrainResult r = train_density_model(model, dataset, tc);
    MESSAGE("toy separable: initial ", r.initial_loss, " final ", r.final_loss);
    CHECK(r.final_loss < 1e-3);
}

TEST_CASE("training reduces loss on a mixed orbit/dolly synthetic set") {
    DensityConfig cfg{32, 4, 2, 12, 4};
    DensityModel model(cfg, 100);
    std::mt19937_64 rng(64);
    std::vector<DensitySample> dataset;
    SceneRecipe recipe;
    for (int i = 0; i < 40; ++i) {
        TrajectoryRecipe tr;
        tr.kind = (i % 2 == 0) ? "orbit" : "dolly";
        tr.duration_s = 4.0;
        tr.fps = 5.0;
        DensitySample s;
        s.traj = generate_trajectory(tr, 1000 + i, scene_layout(recipe));
        double span = 0.0;
        for (size_t a = 1; a < s.traj.poses.size(); ++a)
            span += (s.traj.poses[a].center() - s.traj.poses[a - 1].center()).norm();
        s.n_gt = std::clamp(int(std::lround(2.0 + 3.0 * span)), 2, 18);
        s.descriptor = random_descriptor(rng, cfg.descriptor_dim);
        dataset.push_back(std::move(s));
    }
    TrainConfig tc;
    tc.steps = 400;
    tc.batch_size = 8;
    tc.lr = 1e-3;
    tc.seed = 3;
    const TrainResult r = train_density_model(model, dataset, tc);
    MESSAGE("mixed synthetic: initial ", r.initial_loss, " final ", r.final_loss);
    CHECK(r.final_loss < 0.1 * r.initial_loss);
}

TEST_CASE("training is deterministic and logs a loss CSV") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    std::mt19937_64 rng(41);
    std::vector<DensitySample> dataset;
    for (int i = 0; i < 5; ++i) {
        DensitySample s;
        s.traj = random_traj(rng, 4);
        s.descriptor = random_descriptor(rng, cfg.descriptor_dim);
        s.n_gt = 3 + i;
        dataset.push_back(std::move(s));
    }
    const fs::path csv = fs::temp_directory_path() / "keysplat_density_loss.csv";
    TrainConfig tc;
    tc.steps = 50;
    tc.batch_size = 4;
    tc.seed = 9;
    tc.loss_csv = csv;

    DensityModel m1(cfg, 7), m2(cfg, 7);
    const TrainResult r1 = train_density_model(m1, dataset, tc);
    const TrainResult r2 = train_density_model(m2, dataset, tc);
    CHECK(std::memcmp(m1.params().values.data(), m2.params().values.data(),
                      size_t(m1.params().values.size()) * sizeof(double)) == 0);
    CHECK(r1.final_loss == r2.final_loss);

    std::ifstream in(csv);
    REQUIRE(in.good());
    std::string header;
    std::getline(in, header);
    CHECK(header == "step,loss");
    int lines = 0;
    for (std::string line; std::getline(in, line);)
        if (!line.empty()) ++lines;
    CHECK(lines == 50);
    fs::remove(csv);
}

TEST_CASE("non-finite loss aborts with the step index") {
    DensityConfig cfg{16, 4, 2, 8, 4};
    DensityModel model(cfg, 2);
    model.params().values.setConstant(std::numeric_limits<double>::quiet_NaN());
    std::mt19937_64 rng(14);
    DensitySample s;
    s.traj = random_traj(rng, 3);
    s.descriptor = random_descriptor(rng, cfg.descriptor_dim);
    s.n_gt = 5;
    TrainConfig tc;
    tc.steps = 10;
    tc.batch_size = 2;
    try {
        train_density_model(model, {s}, tc);
        FAIL("expected NonFiniteLoss");
    } catch (const NonFiniteLoss& e) {
        CHECK(e.step == 1);
    }
}

TEST_CASE("checkpoint round trip preserves parameters bit-exactly") {
    DensityConfig cfg{32, 4, 3, 12, 4};
    DensityModel model(cfg, 1234);
    std::mt19937_64 rng(8);
    Trajectory traj = random_traj(rng, 6);
    const VecX desc = random_descriptor(rng, cfg.descriptor_dim);
    const double y_before = model.forward(traj, desc);

    const fs::path dir = fs::temp_directory_path();
    const fs::path bin = dir / "keysplat_density.bin";
    const fs::path manifest = dir / "keysplat_density.json";
    model.save(bin, manifest);

    const DensityModel loaded = DensityModel::load(bin, manifest);
    CHECK(loaded.config().dim == cfg.dim);
    CHECK(loaded.config().blocks == cfg.blocks);
    CHECK(std::memcmp(loaded.params().values.data(), model.params().values.data(),
                      size_t(model.params().values.size()) * sizeof(double)) == 0);
    CHECK(loaded.forward(traj, desc) == y_before);

    // truncated checkpoint is rejected
    const fs::path cut = dir / "keysplat_density_cut.bin";
    {
        std::ifstream src(bin, std::ios::binary);
        std::ofstream dst(cut, std::ios::binary);
        std::vector<char> buf(1024);
        src.read(buf.data(), 1024);
        dst.write(buf.data(), src.gcount());
    }
    CHECK_THROWS_AS(DensityModel::load(cut, manifest), std::runtime_error);
    CHECK_THROWS_AS(DensityModel::load(dir / "keysplat_nope.bin", manifest),
                    std::runtime_error);
    fs::remove(bin);
    fs::remove(manifest);
    fs::remove(cut);
}
