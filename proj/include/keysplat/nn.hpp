#pragma once

#include <Eigen/Dense>

#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace keysplat {

struct ShapeMismatch : std::runtime_error {
    explicit ShapeMismatch(const std::string& what) : std::runtime_error(what) {}
};

using MatX = Eigen::MatrixXd;
using VecX = Eigen::VectorXd;

/// All learnable parameters live in one flat vector (with a parallel gradient
/// vector) so finite-difference checking can walk every entry.
struct ParamStore {
    VecX values;
    VecX grads;
    Eigen::Index total = 0;

    Eigen::Index alloc(Eigen::Index n) {
        const Eigen::Index off = total;
        total += n;
        return off;
    }
    void finalize() {
        values = VecX::Zero(total);
        grads = VecX::Zero(total);
    }
    void zero_grad() { grads.setZero(); }

    Eigen::Map<MatX> mat(Eigen::Index off, Eigen::Index rows, Eigen::Index cols) {
        return {values.data() + off, rows, cols};
    }
    Eigen::Map<const MatX> mat(Eigen::Index off, Eigen::Index rows, Eigen::Index cols) const {
        return {values.data() + off, rows, cols};
    }
    Eigen::Map<MatX> gmat(Eigen::Index off, Eigen::Index rows, Eigen::Index cols) {
        return {grads.data() + off, rows, cols};
    }
    Eigen::Map<VecX> vec(Eigen::Index off, Eigen::Index n) { return {values.data() + off, n}; }
    Eigen::Map<const VecX> vec(Eigen::Index off, Eigen::Index n) const {
        return {values.data() + off, n};
    }
    Eigen::Map<VecX> gvec(Eigen::Index off, Eigen::Index n) { return {grads.data() + off, n}; }
};

double nn_normal(std::mt19937_64& rng);  // same bit-pinned mapping as scene sampling

// exact-erf GELU; smooth everywhere so finite-difference checks pass
MatX gelu(const MatX& x);
MatX gelu_backward(const MatX& x, const MatX& dy);

/// y = x W^T + b, rows are tokens.
struct Linear {
    Eigen::Index in = 0, out = 0, w_off = 0, b_off = 0;

    void build(ParamStore& s, Eigen::Index in_dim, Eigen::Index out_dim) {
        in = in_dim;
        out = out_dim;
        w_off = s.alloc(in * out);
        b_off = s.alloc(out);
    }
    void init(ParamStore& s, std::mt19937_64& rng) {
        auto w = s.mat(w_off, out, in);
        const double scale = std::sqrt(2.0 / static_cast<double>(in + out));
        for (Eigen::Index i = 0; i < w.size(); ++i) w.data()[i] = scale * nn_normal(rng);
        s.vec(b_off, out).setZero();
    }
    MatX forward(const ParamStore& s, const MatX& x) const {
        if (x.cols() != in) throw ShapeMismatch("linear input width mismatch");
        return (x * s.mat(w_off, out, in).transpose()).rowwise() +
               s.vec(b_off, out).transpose();
    }
    /// accumulates parameter gradients, returns dL/dx
    MatX backward(ParamStore& s, const MatX& x, const MatX& dy) const {
        s.gmat(w_off, out, in).noalias() += dy.transpose() * x;
        s.gvec(b_off, out).noalias() += dy.colwise().sum().transpose();
        return dy * s.mat(w_off, out, in);
    }
};

struct LayerNorm {
    Eigen::Index dim = 0, g_off = 0, b_off = 0;
    static constexpr double kEps = 1e-5;

    struct Cache {
        MatX xhat;       // normalized input
        VecX inv_sigma;  // per row
    };

    void build(ParamStore& s, Eigen::Index d) {
        dim = d;
        g_off = s.alloc(d);
        b_off = s.alloc(d);
    }
    void init(ParamStore& s) {
        s.vec(g_off, dim).setOnes();
        s.vec(b_off, dim).setZero();
    }
    MatX forward(const ParamStore& s, const MatX& x, Cache& c) const;
    MatX backward(ParamStore& s, const Cache& c, const MatX& dy) const;
};

struct SelfAttention {
    Eigen::Index dim = 0, heads = 0, head_dim = 0;
    Linear wq, wk, wv, wo;

    struct Cache {
        MatX x, q, k, v;
        std::vector<MatX> attn;  // per head, rows softmaxed
        MatX concat;
    };

    void build(ParamStore& s, Eigen::Index d, Eigen::Index n_heads) {
        if (d % n_heads != 0) throw ShapeMismatch("model width not divisible by head count");
        dim = d;
        heads = n_heads;
        head_dim = d / n_heads;
        wq.build(s, d, d);
        wk.build(s, d, d);
        wv.build(s, d, d);
        wo.build(s, d, d);
    }
    void init(ParamStore& s, std::mt19937_64& rng) {
        wq.init(s, rng);
        wk.init(s, rng);
        wv.init(s, rng);
        wo.init(s, rng);
    }
    MatX forward(const ParamStore& s, const MatX& x, Cache& c) const;
    MatX backward(ParamStore& s, const Cache& c, const MatX& dy) const;
};

/// Pre-norm transformer block: x += attn(ln1(x)); x += fc2(gelu(fc1(ln2(x)))).
struct EncoderBlock {
    LayerNorm ln1, ln2;
    SelfAttention attn;
    Linear fc1, fc2;

    struct Cache {
        LayerNorm::Cache ln1c, ln2c;
        SelfAttention::Cache attnc;
        MatX x_mid;     // after attention residual
        MatX ln2_out;
        MatX fc1_out;   // pre-activation
    };

    void build(ParamStore& s, Eigen::Index d, Eigen::Index n_heads, Eigen::Index ffn_dim) {
        ln1.build(s, d);
        attn.build(s, d, n_heads);
        ln2.build(s, d);
        fc1.build(s, d, ffn_dim);
        fc2.build(s, ffn_dim, d);
    }
    void init(ParamStore& s, std::mt19937_64& rng) {
        ln1.init(s);
        attn.init(s, rng);
        ln2.init(s);
        fc1.init(s, rng);
        fc2.init(s, rng);
    }
    MatX forward(const ParamStore& s, const MatX& x, Cache& c) const;
    MatX backward(ParamStore& s, const Cache& c, const MatX& dy) const;
};

/// Decoupled-weight-decay adaptive moments (AdamW).
struct AdamW {
    double lr = 1e-4, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, weight_decay = 0.01;
    VecX m, v;
    long long t = 0;

    void step(ParamStore& s);
};

}  // namespace keysplat
