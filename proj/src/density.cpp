#include "keysplat/density.hpp"

#include <json.hpp>

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>

namespace keysplat {

DensityModel::DensityModel(const DensityConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
    if (cfg_.dim <= 0 || cfg_.heads <= 0 || cfg_.blocks <= 0 || cfg_.descriptor_dim <= 0 ||
        cfg_.ffn_mult <= 0)
        throw ShapeMismatch("density model dimensions must be positive");
    if (cfg_.dim % cfg_.heads != 0)
        throw ShapeMismatch("model width not divisible by head count");

    const Eigen::Index d = cfg_.dim;
    embed1_.build(params_, 7, d);
    embed2_.build(params_, d, d);
    desc_proj_.build(params_, cfg_.descriptor_dim, d);
    blocks_.resize(cfg_.blocks);
    for (auto& b : blocks_) b.build(params_, d, cfg_.heads, d * cfg_.ffn_mult);
    head1_.build(params_, d, d);
    head2_.build(params_, d, d);
    head3_.build(params_, d, d);
    head4_.build(params_, d, 1);
    params_.finalize();

    std::mt19937_64 rng(seed ^ 0x64656e73697479ull);
    embed1_.init(params_, rng);
    embed2_.init(params_, rng);
    desc_proj_.init(params_, rng);
    for (auto& b : blocks_) b.init(params_, rng);
    head1_.init(params_, rng);
    head2_.init(params_, rng);
    head3_.init(params_, rng);
    head4_.init(params_, rng);
}

MatX DensityModel::assemble_pose_inputs(const Trajectory& traj) {
    if (traj.poses.empty()) throw EmptyTrajectory();
    MatX x(static_cast<Eigen::Index>(traj.poses.size()), 7);
    for (Eigen::Index i = 0; i < x.rows(); ++i) {
        const CameraPose& p = traj.poses[static_cast<std::size_t>(i)];
        const Quat q = p.rotation.normalized().canonical();
        x(i, 0) = q.w;
        x(i, 1) = q.x;
        x(i, 2) = q.y;
        x(i, 3) = q.z;
        x(i, 4) = p.translation.x();
        x(i, 5) = p.translation.y();
        x(i, 6) = p.translation.z();
    }
    return x;
}

MatX DensityModel::embed_pose_tokens(const Trajectory& traj) const {
    const MatX pose_inputs = assemble_pose_inputs(traj);
    return embed2_.forward(params_, gelu(embed1_.forward(params_, pose_inputs)));
}

struct DensityModel::ForwardCache {
    MatX pose_inputs;
    MatX embed1_out;      // pre-activation
    MatX embed_act;       // gelu(embed1_out)
    MatX desc_row;        // 1 x descriptor_dim
    MatX x0;              // tokens entering the encoder
    std::vector<MatX> block_in;
    std::vector<EncoderBlock::Cache> block_caches;
    MatX enc_out;
    MatX h1, h2, h3;      // head pre-activations
    MatX g1, g2, g3;      // gelu outputs feeding the next head layer
    Eigen::Index tokens = 0;
};

double DensityModel::run_forward(const MatX& pose_inputs, const VecX& descriptor,
                                 ForwardCache* cache) const {
    if (pose_inputs.cols() != 7) throw ShapeMismatch("pose inputs must be len x 7");
    if (pose_inputs.rows() < 1) throw ShapeMismatch("pose inputs empty");
    if (descriptor.size() != cfg_.descriptor_dim)
        throw ShapeMismatch("descriptor length does not match model");

    ForwardCache local;
    ForwardCache& c = cache ? *cache : local;
    c.pose_inputs = pose_inputs;
    c.embed1_out = embed1_.forward(params_, pose_inputs);
    c.embed_act = gelu(c.embed1_out);
    MatX pose_tokens = embed2_.forward(params_, c.embed_act);

    c.desc_row = descriptor.transpose();
    MatX desc_token = desc_proj_.forward(params_, c.desc_row);

    const Eigen::Index n = pose_tokens.rows();
    c.tokens = n + 1;
    c.x0.resize(n + 1, cfg_.dim);
    c.x0.topRows(n) = pose_tokens;
    c.x0.row(n) = desc_token.row(0);

    c.block_in.clear();
    c.block_caches.assign(blocks_.size(), {});
    MatX x = c.x0;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
        c.block_in.push_back(x);
        x = blocks_[i].forward(params_, x, c.block_caches[i]);
    }
    c.enc_out = std::move(x);

    c.h1 = head1_.forward(params_, c.enc_out);
    c.g1 = gelu(c.h1);
    c.h2 = head2_.forward(params_, c.g1);
    c.g2 = gelu(c.h2);
    c.h3 = head3_.forward(params_, c.g2);
    c.g3 = gelu(c.h3);
    const MatX y = head4_.forward(params_, c.g3);
    return y.mean();
}

double DensityModel::forward(const Trajectory& traj, const VecX& descriptor) const {
    return run_forward(assemble_pose_inputs(traj), descriptor, nullptr);
}

double DensityModel::sample_loss(const DensitySample& sample) const {
    const double ybar = forward(sample.traj, sample.descriptor);
    const double target = 0.1 * static_cast<double>(sample.n_gt);
    return (ybar - target) * (ybar - target);
}

double DensityModel::loss_and_grad(const DensitySample& sample, double grad_scale) {
    ForwardCache c;
    const double ybar = run_forward(assemble_pose_inputs(sample.traj), sample.descriptor, &c);
    const double target = 0.1 * static_cast<double>(sample.n_gt);
    const double loss = (ybar - target) * (ybar - target);

    const double dybar = grad_scale * 2.0 * (ybar - target);
    MatX dy = MatX::Constant(c.tokens, 1, dybar / static_cast<double>(c.tokens));

    MatX dg3 = head4_.backward(params_, c.g3, dy);
    MatX dh3 = gelu_backward(c.h3, dg3);
    MatX dg2 = head3_.backward(params_, c.g2, dh3);
    MatX dh2 = gelu_backward(c.h2, dg2);
    MatX dg1 = head2_.backward(params_, c.g1, dh2);
    MatX dh1 = gelu_backward(c.h1, dg1);
    MatX dx = head1_.backward(params_, c.enc_out, dh1);

    for (std::size_t i = blocks_.size(); i-- > 0;)
        dx = blocks_[i].backward(params_, c.block_caches[i], dx);

    const Eigen::Index n = c.tokens - 1;
    desc_proj_.backward(params_, c.desc_row, dx.row(n));
    MatX d_embed_act = embed2_.backward(params_, c.embed_act, dx.topRows(n));
    MatX d_embed1 = gelu_backward(c.embed1_out, d_embed_act);
    embed1_.backward(params_, c.pose_inputs, d_embed1);
    return loss;
}

int DensityModel::predicted_count(const Trajectory& traj, const VecX& descriptor) const {
    const double ybar = forward(traj, descriptor);
    const long n_frames = static_cast<long>(traj.poses.size());
    const long hi = std::max<long>(2, n_frames);
    return static_cast<int>(std::clamp(std::lround(ybar / 0.1), 2L, hi));
}

void DensityModel::save(const std::filesystem::path& bin_path,
                        const std::filesystem::path& manifest_path) const {
    std::ofstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + bin_path.string());
    bin.write(reinterpret_cast<const char*>(params_.values.data()),
              static_cast<std::streamsize>(params_.values.size() * sizeof(double)));
    if (!bin) throw std::runtime_error("short write to " + bin_path.string());

    nlohmann::json manifest = {
        {"format", "density-checkpoint-v1"},
        {"dim", cfg_.dim},
        {"heads", cfg_.heads},
        {"blocks", cfg_.blocks},
        {"descriptor_dim", cfg_.descriptor_dim},
        {"ffn_mult", cfg_.ffn_mult},
        {"param_count", params_.values.size()},
    };
    std::ofstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open " + manifest_path.string());
    mf << manifest.dump(2) << "\n";
}

DensityModel DensityModel::load(const std::filesystem::path& bin_path,
                                const std::filesystem::path& manifest_path) {
    std::ifstream mf(manifest_path);
    if (!mf) throw std::runtime_error("cannot open " + manifest_path.string());
    nlohmann::json manifest = nlohmann::json::parse(mf);
    if (manifest.value("format", "") != "density-checkpoint-v1")
        throw std::runtime_error("unrecognized checkpoint manifest format");
    DensityConfig cfg;
    cfg.dim = manifest.at("dim").get<int>();
    cfg.heads = manifest.at("heads").get<int>();
    cfg.blocks = manifest.at("blocks").get<int>();
    cfg.descriptor_dim = manifest.at("descriptor_dim").get<int>();
    cfg.ffn_mult = manifest.at("ffn_mult").get<int>();

    DensityModel model(cfg, 0);
    const auto expected = manifest.at("param_count").get<Eigen::Index>();
    if (expected != model.params_.values.size())
        throw ShapeMismatch("checkpoint parameter count does not match manifest shapes");

    std::ifstream bin(bin_path, std::ios::binary);
    if (!bin) throw std::runtime_error("cannot open " + bin_path.string());
    bin.read(reinterpret_cast<char*>(model.params_.values.data()),
             static_cast<std::streamsize>(expected * sizeof(double)));
    if (bin.gcount() != static_cast<std::streamsize>(expected * sizeof(double)))
        throw std::runtime_error("checkpoint truncated: " + bin_path.string());
    if (!model.params_.values.allFinite())
        throw std::runtime_error("checkpoint contains non-finite parameters");
    return model;
}

double dataset_loss(const DensityModel& model, const std::vector<DensitySample>& dataset) {
    if (dataset.empty()) throw std::invalid_argument("empty dataset");
    double total = 0.0;
    for (const auto& s : dataset) total += model.sample_loss(s);
    return total / static_cast<double>(dataset.size());
}

TrainResult train_density_model(DensityModel& model, const std::vector<DensitySample>& dataset,
                                const TrainConfig& cfg) {
    if (dataset.empty()) throw std::invalid_argument("empty dataset");
    for (const auto& s : dataset) {
        if (s.traj.poses.empty()) throw EmptyTrajectory();
        if (s.n_gt < 1) throw std::invalid_argument("n_gt must be >= 1");
    }

    TrainResult result;
    result.initial_loss = dataset_loss(model, dataset);

    AdamW opt;
    opt.lr = cfg.lr;
    opt.weight_decay = cfg.weight_decay;

    std::mt19937_64 rng(cfg.seed ^ 0x747261696eull);
    std::vector<std::size_t> order(dataset.size());
    std::iota(order.begin(), order.end(), 0);
    std::size_t cursor = order.size();  // force shuffle on first use

    std::ofstream csv;
    if (cfg.loss_csv) {
        csv.open(*cfg.loss_csv);
        if (!csv) throw std::runtime_error("cannot open " + cfg.loss_csv->string());
        csv << "step,loss\n";
    }

    const int batch = std::max(1, cfg.batch_size);
    result.curve.reserve(static_cast<std::size_t>(cfg.steps));
    for (long long step = 1; step <= cfg.steps; ++step) {
        model.params().zero_grad();
        double batch_loss = 0.0;
        for (int b = 0; b < batch; ++b) {
            if (cursor >= order.size()) {
                std::shuffle(order.begin(), order.end(), rng);
                cursor = 0;
            }
            batch_loss += model.loss_and_grad(dataset[order[cursor++]], 1.0 / batch);
        }
        batch_loss /= batch;
        if (!std::isfinite(batch_loss)) throw NonFiniteLoss(step);
        opt.step(model.params());
        result.curve.emplace_back(step, batch_loss);
        if (csv.is_open()) {
            char line[64];
            std::snprintf(line, sizeof line, "%lld,%.17g\n", step, batch_loss);
            csv << line;
        }
    }
    result.final_loss = dataset_loss(model, dataset);
    return result;
}

}  // namespace keysplat
