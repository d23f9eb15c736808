#pragma once

#include "keysplat/geometry.hpp"
#include "keysplat/nn.hpp"

#include <cstdint>
#include <filesystem>
#include <optional>
#include <utility>
#include <vector>

namespace keysplat {

struct NonFiniteLoss : std::runtime_error {
    long long step;
    explicit NonFiniteLoss(long long step_index)
        : std::runtime_error("non-finite loss at training step " + std::to_string(step_index)),
          step(step_index) {}
};

struct DensityConfig {
    int dim = 64;
    int heads = 4;
    int blocks = 4;
    int descriptor_dim = 16;
    int ffn_mult = 4;
};

struct DensitySample {
    Trajectory traj;
    VecX descriptor;
    int n_gt = 1;
};

/// Sequence-regression model mapping (trajectory, scene descriptor) to a
/// keyframe count: 7D camera tokens -> embedding MLP -> self-attention encoder
/// (pre-norm, no positional encodings) -> per-token scalar head -> mean, with
/// the 0.1 target scaling applied outside the network.
///
/// Flat parameter layout (this is the checkpoint binary format; every Linear
/// stores W column-major then b, every layer norm gamma then beta):
///   embed1 (d x 7), embed2 (d x d), desc_proj (d x descriptor_dim),
///   then per encoder block: ln1, attn {wq, wk, wv, wo}, ln2, fc1 (f x d),
///   fc2 (d x f) with f = ffn_mult * d,
///   then head1..head3 (d x d) and head4 (1 x d); the final scalar entry is
///   head4's bias.
class DensityModel {
public:
    explicit DensityModel(const DensityConfig& cfg = {}, std::uint64_t seed = 0);

    const DensityConfig& config() const { return cfg_; }
    ParamStore& params() { return params_; }
    const ParamStore& params() const { return params_; }

    /// Row i = [q_w q_x q_y q_z t_x t_y t_z] with the quaternion sign-canonicalized.
    static MatX assemble_pose_inputs(const Trajectory& traj);

    /// Pose tokens after the embedding MLP only; (len x d).
    MatX embed_pose_tokens(const Trajectory& traj) const;

    /// Mean of the per-token scalar head over pose tokens plus the descriptor token.
    double forward(const Trajectory& traj, const VecX& descriptor) const;

    double sample_loss(const DensitySample& sample) const;

    /// Accumulates d(loss)/d(params) into params().grads scaled by `grad_scale`;
    /// returns the sample loss.
    double loss_and_grad(const DensitySample& sample, double grad_scale = 1.0);

    int predicted_count(const Trajectory& traj, const VecX& descriptor) const;

    void save(const std::filesystem::path& bin_path,
              const std::filesystem::path& manifest_path) const;
    static DensityModel load(const std::filesystem::path& bin_path,
                             const std::filesystem::path& manifest_path);

private:
    struct ForwardCache;
    double run_forward(const MatX& pose_inputs, const VecX& descriptor, ForwardCache* cache) const;

    DensityConfig cfg_;
    ParamStore params_;
    Linear embed1_, embed2_;
    Linear desc_proj_;
    std::vector<EncoderBlock> blocks_;
    Linear head1_, head2_, head3_, head4_;
};

struct TrainConfig {
    long long steps = 2000;
    int batch_size = 16;
    double lr = 1e-4;
    double weight_decay = 0.01;
    std::uint64_t seed = 0;
    std::optional<std::filesystem::path> loss_csv;  // `step,loss` when set
};

struct TrainResult {
    std::vector<std::pair<long long, double>> curve;  // per-step minibatch loss
    double initial_loss = 0.0;                        // full-dataset loss before training
    double final_loss = 0.0;                          // full-dataset loss after training
};

double dataset_loss(const DensityModel& model, const std::vector<DensitySample>& dataset);

TrainResult train_density_model(DensityModel& model, const std::vector<DensitySample>& dataset,
                                const TrainConfig& cfg = {});

}  // namespace keysplat
