#include "keysplat/nn.hpp"

#include <cmath>

namespace keysplat {

double nn_normal(std::mt19937_64& rng) {
    const double u1 = 1.0 - (rng() >> 11) * 0x1.0p-53;
    const double u2 = (rng() >> 11) * 0x1.0p-53;
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
}  // namespace

MatX gelu(const MatX& x) {
    return x.unaryExpr([](double v) { return 0.5 * v * (1.0 + std::erf(v * kInvSqrt2)); });
}

MatX gelu_backward(const MatX& x, const MatX& dy) {
    MatX d = x.unaryExpr([](double v) {
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
    });
    return dy.cwiseProduct(d);
}

MatX LayerNorm::forward(const ParamStore& s, const MatX& x, Cache& c) const {
    if (x.cols() != dim) throw ShapeMismatch("layernorm input width mismatch");
    const Eigen::Index n = x.rows();
    c.xhat.resize(n, dim);
    c.inv_sigma.resize(n);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double mu = x.row(i).mean();
        const double var = (x.row(i).array() - mu).square().mean();
        const double inv = 1.0 / std::sqrt(var + kEps);
        c.inv_sigma(i) = inv;
        c.xhat.row(i) = (x.row(i).array() - mu) * inv;
    }
    const auto gamma = s.vec(g_off, dim);
    const auto beta = s.vec(b_off, dim);
    return ((c.xhat.array().rowwise() * gamma.transpose().array()).rowwise() +
            beta.transpose().array())
        .matrix();
}

MatX LayerNorm::backward(ParamStore& s, const Cache& c, const MatX& dy) const {
    const Eigen::Index n = dy.rows();
    s.gvec(g_off, dim).noalias() += dy.cwiseProduct(c.xhat).colwise().sum().transpose();
    s.gvec(b_off, dim).noalias() += dy.colwise().sum().transpose();

    const auto gamma = s.vec(g_off, dim);
    const MatX dxhat = (dy.array().rowwise() * gamma.transpose().array()).matrix();
    MatX dx(n, dim);
    for (Eigen::Index i = 0; i < n; ++i) {
        const double m1 = dxhat.row(i).mean();
        const double m2 = dxhat.row(i).cwiseProduct(c.xhat.row(i)).mean();
        dx.row(i) = (c.inv_sigma(i) *
                     (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2))
                        .matrix();
    }
    return dx;
}

MatX SelfAttention::forward(const ParamStore& s, const MatX& x, Cache& c) const {
    const Eigen::Index n = x.rows();
    c.x = x;
    c.q = wq.forward(s, x);
    c.k = wk.forward(s, x);
    c.v = wv.forward(s, x);
    c.attn.assign(heads, MatX());
    c.concat.resize(n, dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (Eigen::Index h = 0; h < heads; ++h) {
        const auto qh = c.q.middleCols(h * head_dim, head_dim);
        const auto kh = c.k.middleCols(h * head_dim, head_dim);
        const auto vh = c.v.middleCols(h * head_dim, head_dim);
        MatX logits = scale * (qh * kh.transpose());
        for (Eigen::Index i = 0; i < n; ++i) {
            const double mx = logits.row(i).maxCoeff();
            logits.row(i) = (logits.row(i).array() - mx).exp().matrix();
            logits.row(i) /= logits.row(i).sum();
        }
        c.attn[h] = std::move(logits);
        c.concat.middleCols(h * head_dim, head_dim).noalias() = c.attn[h] * vh;
    }
    return wo.forward(s, c.concat);
}

MatX SelfAttention::backward(ParamStore& s, const Cache& c, const MatX& dy) const {
    const Eigen::Index n = c.x.rows();
    MatX dconcat = wo.backward(s, c.concat, dy);
    MatX dq(n, dim), dk(n, dim), dv(n, dim);
    const double scale = 1.0 / std::sqrt(static_cast<double>(head_dim));
    for (Eigen::Index h = 0; h < heads; ++h) {
        const auto qh = c.q.middleCols(h * head_dim, head_dim);
        const auto kh = c.k.middleCols(h * head_dim, head_dim);
        const auto vh = c.v.middleCols(h * head_dim, head_dim);
        const auto dout = dconcat.middleCols(h * head_dim, head_dim);
        const MatX& a = c.attn[h];

        dv.middleCols(h * head_dim, head_dim).noalias() = a.transpose() * dout;
        MatX da = dout * vh.transpose();
        // softmax rows: dS = A .* (dA - rowsum(dA .* A))
        MatX ds = a.cwiseProduct(da);
        const Eigen::VectorXd row_dot = ds.rowwise().sum();
        ds = a.cwiseProduct(da.colwise() - row_dot);
        dq.middleCols(h * head_dim, head_dim).noalias() = scale * (ds * kh);
        dk.middleCols(h * head_dim, head_dim).noalias() = scale * (ds.transpose() * qh);
    }
    MatX dx = wq.backward(s, c.x, dq);
    dx.noalias() += wk.backward(s, c.x, dk);
    dx.noalias() += wv.backward(s, c.x, dv);
    return dx;
}

MatX EncoderBlock::forward(const ParamStore& s, const MatX& x, Cache& c) const {
    c.x_mid = x + attn.forward(s, ln1.forward(s, x, c.ln1c), c.attnc);
    c.ln2_out = ln2.forward(s, c.x_mid, c.ln2c);
    c.fc1_out = fc1.forward(s, c.ln2_out);
    return c.x_mid + fc2.forward(s, gelu(c.fc1_out));
}

MatX EncoderBlock::backward(ParamStore& s, const Cache& c, const MatX& dy) const {
    MatX d_mid = dy;
    MatX d_gelu = fc2.backward(s, gelu(c.fc1_out), dy);
    MatX d_fc1 = gelu_backward(c.fc1_out, d_gelu);
    d_mid.noalias() += ln2.backward(s, c.ln2c, fc1.backward(s, c.ln2_out, d_fc1));

    MatX dx = d_mid;
    MatX d_attn = attn.backward(s, c.attnc, d_mid);
    dx.noalias() += ln1.backward(s, c.ln1c, d_attn);
    return dx;
}

void AdamW::step(ParamStore& s) {
    if (m.size() != s.values.size()) {
        m = VecX::Zero(s.values.size());
        v = VecX::Zero(s.values.size());
        t = 0;
    }
    ++t;
    m = beta1 * m + (1.0 - beta1) * s.grads;
    v = beta2 * v + (1.0 - beta2) * s.grads.cwiseProduct(s.grads);
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
    const VecX mhat = m / bc1;
    const VecX vhat = v / bc2;
    s.values.array() -=
        lr * (mhat.array() / (vhat.array().sqrt() + eps) + weight_decay * s.values.array());
}

}  // namespace keysplat
