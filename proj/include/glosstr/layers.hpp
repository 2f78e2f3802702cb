#pragma once

#include <cmath>
#include <cstdint>
#include <limits>
#include <random>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "glosstr/errors.hpp"
#include "glosstr/text.hpp"

namespace glosstr::nn {

using Index = Eigen::Index;

template <class T>
using Mat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

struct ParamInfo {
    std::string name;
    bool trainable = true;
    bool decay = true; ///< subject to decoupled weight decay
    bool lora = false; ///< adapter tensor
};

/// Flat, index-addressed parameter storage. Layers refer to tensors by index.
template <class T>
class ParameterSet {
  public:
    std::size_t add(std::string name, Index rows, Index cols, bool decay = true, bool lora = false) {
        info_.push_back({std::move(name), true, decay, lora});
        values_.push_back(Mat<T>::Zero(rows, cols));
        return values_.size() - 1;
    }

    std::size_t size() const { return values_.size(); }
    Mat<T> &value(std::size_t i) { return values_[i]; }
    const Mat<T> &value(std::size_t i) const { return values_[i]; }
    const ParamInfo &info(std::size_t i) const { return info_[i]; }
    bool trainable(std::size_t i) const { return info_[i].trainable; }
    void set_trainable(std::size_t i, bool on) { info_[i].trainable = on; }

    std::size_t find(const std::string &name) const {
        for (std::size_t i = 0; i < info_.size(); ++i)
            if (info_[i].name == name)
                return i;
        throw LookupError("no parameter named '" + name + "'");
    }

    std::size_t count(bool trainable_only = false) const {
        std::size_t n = 0;
        for (std::size_t i = 0; i < values_.size(); ++i)
            if (!trainable_only || info_[i].trainable)
                n += static_cast<std::size_t>(values_[i].size());
        return n;
    }

    std::vector<Mat<T>> zeros_like() const {
        std::vector<Mat<T>> g;
        g.reserve(values_.size());
        for (const auto &v : values_)
            g.push_back(Mat<T>::Zero(v.rows(), v.cols()));
        return g;
    }

    /// Checksum over the float32 image of the selected tensors (all non-adapter tensors by default).
    std::uint64_t checksum(bool include_lora = false) const {
        Fnv1a h;
        for (std::size_t i = 0; i < values_.size(); ++i) {
            if (info_[i].lora && !include_lora)
                continue;
            h.update(info_[i].name);
            for (Index k = 0; k < values_[i].size(); ++k) {
                float f = static_cast<float>(values_[i].data()[k]);
                h.update(&f, sizeof f);
            }
        }
        return h.digest();
    }

    bool all_finite() const {
        for (const auto &v : values_)
            if (!v.allFinite())
                return false;
        return true;
    }

  private:
    std::vector<ParamInfo> info_;
    std::vector<Mat<T>> values_;
};

template <class T>
using GradSet = std::vector<Mat<T>>;

template <class T>
void fill_uniform(Mat<T> &m, T bound, std::mt19937_64 &rng) {
    std::uniform_real_distribution<double> dist(-static_cast<double>(bound), static_cast<double>(bound));
    for (Index k = 0; k < m.size(); ++k)
        m.data()[k] = static_cast<T>(dist(rng));
}

/// Inverted dropout. An empty mask means "identity".
template <class T>
Mat<T> dropout_mask(Index rows, Index cols, double rate, std::mt19937_64 *rng) {
    if (!rng || rate <= 0.0)
        return {};
    std::bernoulli_distribution keep(1.0 - rate);
    Mat<T> mask(rows, cols);
    const T scale = static_cast<T>(1.0 / (1.0 - rate));
    for (Index k = 0; k < mask.size(); ++k)
        mask.data()[k] = keep(*rng) ? scale : T(0);
    return mask;
}

template <class T>
void apply_mask(Mat<T> &x, const Mat<T> &mask) {
    if (mask.size())
        x.array() *= mask.array();
}

/// y = x W^T + b, plus scale * (x A^T) B^T when a low-rank adapter is attached.
template <class T>
struct Linear {
    std::string name;
    Index in = 0, out = 0;
    std::size_t w = 0, b = 0;
    bool has_lora = false;
    std::size_t lora_a = 0, lora_b = 0;
    Index rank = 0;
    T lora_scale = T(0);

    struct Cache {
        Mat<T> x;
        Mat<T> xa;
    };

    void init(ParameterSet<T> &p, std::string n, Index d_in, Index d_out, std::mt19937_64 &rng) {
        name = std::move(n);
        in = d_in;
        out = d_out;
        w = p.add(name + ".weight", out, in);
        b = p.add(name + ".bias", 1, out, false);
        fill_uniform(p.value(w), static_cast<T>(1.0 / std::sqrt(static_cast<double>(in))), rng);
    }

    void attach_lora(ParameterSet<T> &p, Index r, double alpha, std::mt19937_64 &rng) {
        if (r < 1 || r > std::min(in, out))
            throw ConfigError("LoRA rank " + std::to_string(r) + " invalid for " + name + " (" + std::to_string(in) +
                              " -> " + std::to_string(out) + ")");
        if (has_lora)
            throw ConfigError("layer " + name + " already has an adapter");
        rank = r;
        lora_scale = static_cast<T>(alpha / static_cast<double>(r));
        lora_a = p.add(name + ".lora_A", r, in, false, true);
        lora_b = p.add(name + ".lora_B", out, r, false, true);
        fill_uniform(p.value(lora_a), static_cast<T>(1.0 / std::sqrt(static_cast<double>(in))), rng);
        has_lora = true;
    }

    Mat<T> forward(const ParameterSet<T> &p, const Mat<T> &x, Cache *cache = nullptr) const {
        Mat<T> y = x * p.value(w).transpose();
        y.rowwise() += p.value(b).row(0);
        if (has_lora) {
            Mat<T> xa = x * p.value(lora_a).transpose();
            y.noalias() += lora_scale * (xa * p.value(lora_b).transpose());
            if (cache)
                cache->xa = std::move(xa);
        }
        if (cache)
            cache->x = x;
        return y;
    }

    Mat<T> backward(const ParameterSet<T> &p, GradSet<T> &g, const Cache &c, const Mat<T> &dy) const {
        if (p.trainable(w))
            g[w].noalias() += dy.transpose() * c.x;
        if (p.trainable(b))
            g[b] += dy.colwise().sum();
        Mat<T> dx = dy * p.value(w);
        if (has_lora) {
            if (p.trainable(lora_b))
                g[lora_b].noalias() += lora_scale * (dy.transpose() * c.xa);
            Mat<T> dz = lora_scale * (dy * p.value(lora_b));
            if (p.trainable(lora_a))
                g[lora_a].noalias() += dz.transpose() * c.x;
            dx.noalias() += dz * p.value(lora_a);
        }
        return dx;
    }
};

template <class T>
struct LayerNorm {
    std::size_t gamma = 0, beta = 0;
    T eps = T(1e-5);

    struct Cache {
        Mat<T> xhat;
        Eigen::Matrix<T, Eigen::Dynamic, 1> rstd;
    };

    void init(ParameterSet<T> &p, const std::string &name, Index dim) {
        gamma = p.add(name + ".gamma", 1, dim, false);
        beta = p.add(name + ".beta", 1, dim, false);
        p.value(gamma).setOnes();
    }

    Mat<T> forward(const ParameterSet<T> &p, const Mat<T> &x, Cache *cache = nullptr) const {
        const Index n = x.rows(), d = x.cols();
        Mat<T> xhat(n, d);
        Eigen::Matrix<T, Eigen::Dynamic, 1> rstd(n);
        for (Index i = 0; i < n; ++i) {
            T mean = x.row(i).mean();
            auto centered = (x.row(i).array() - mean);
            T var = centered.square().mean();
            rstd(i) = T(1) / std::sqrt(var + eps);
            xhat.row(i) = centered * rstd(i);
        }
        Mat<T> y = (xhat.array().rowwise() * p.value(gamma).row(0).array()).matrix();
        y.rowwise() += p.value(beta).row(0);
        if (cache) {
            cache->xhat = std::move(xhat);
            cache->rstd = std::move(rstd);
        }
        return y;
    }

    Mat<T> backward(const ParameterSet<T> &p, GradSet<T> &g, const Cache &c, const Mat<T> &dy) const {
        if (p.trainable(gamma))
            g[gamma] += (dy.array() * c.xhat.array()).matrix().colwise().sum();
        if (p.trainable(beta))
            g[beta] += dy.colwise().sum();
        Mat<T> dxhat = (dy.array().rowwise() * p.value(gamma).row(0).array()).matrix();
        Mat<T> dx(dy.rows(), dy.cols());
        for (Index i = 0; i < dy.rows(); ++i) {
            T m1 = dxhat.row(i).mean();
            T m2 = (dxhat.row(i).array() * c.xhat.row(i).array()).mean();
            dx.row(i) = c.rstd(i) * (dxhat.row(i).array() - m1 - c.xhat.row(i).array() * m2);
        }
        return dx;
    }
};

template <class T>
struct FeedForward {
    Linear<T> up, down;

    struct Cache {
        typename Linear<T>::Cache up, down;
        Mat<T> pre;
    };

    void init(ParameterSet<T> &p, const std::string &name, Index dim, Index hidden, std::mt19937_64 &rng) {
        up.init(p, name + ".up", dim, hidden, rng);
        down.init(p, name + ".down", hidden, dim, rng);
    }

    static T gelu(T x) { return T(0.5) * x * (T(1) + std::erf(x * T(M_SQRT1_2))); }
    static T gelu_grad(T x) {
        return T(0.5) * (T(1) + std::erf(x * T(M_SQRT1_2))) + x * std::exp(T(-0.5) * x * x) * T(0.3989422804014327);
    }

    Mat<T> forward(const ParameterSet<T> &p, const Mat<T> &x, Cache *cache = nullptr) const {
        Mat<T> pre = up.forward(p, x, cache ? &cache->up : nullptr);
        Mat<T> h = pre.unaryExpr([](T v) { return gelu(v); });
        Mat<T> y = down.forward(p, h, cache ? &cache->down : nullptr);
        if (cache)
            cache->pre = std::move(pre);
        return y;
    }

    Mat<T> backward(const ParameterSet<T> &p, GradSet<T> &g, const Cache &c, const Mat<T> &dy) const {
        Mat<T> dh = down.backward(p, g, c.down, dy);
        dh.array() *= c.pre.unaryExpr([](T v) { return gelu_grad(v); }).array();
        return up.backward(p, g, c.up, dh);
    }

    template <class F>
    void for_each_linear(F &&f) {
        f(up);
        f(down);
    }
};

/// Scaled dot-product attention with several heads. Keys can be masked; queries may be causal.
template <class T>
struct MultiHeadAttention {
    Linear<T> q, k, v, o;
    Index heads = 1, dim = 0;

    struct Cache {
        typename Linear<T>::Cache q, k, v, o;
        Mat<T> Q, K, V;
        std::vector<Mat<T>> probs;
    };

    void init(ParameterSet<T> &p, const std::string &name, Index d, Index h, std::mt19937_64 &rng) {
        if (d % h != 0)
            throw ConfigError("model dim must be divisible by the number of heads");
        dim = d;
        heads = h;
        q.init(p, name + ".q", d, d, rng);
        k.init(p, name + ".k", d, d, rng);
        v.init(p, name + ".v", d, d, rng);
        o.init(p, name + ".o", d, d, rng);
    }

    Index head_dim() const { return dim / heads; }

    /// `key_valid[j]` false masks key j out; with `causal`, query i sees keys j <= i + offset.
    Mat<T> forward(const ParameterSet<T> &p, const Mat<T> &xq, const Mat<T> &xkv, const std::vector<bool> &key_valid,
                   bool causal, Cache *cache = nullptr) const {
        Mat<T> Q = q.forward(p, xq, cache ? &cache->q : nullptr);
        Mat<T> K = k.forward(p, xkv, cache ? &cache->k : nullptr);
        Mat<T> V = v.forward(p, xkv, cache ? &cache->v : nullptr);
        Mat<T> ctx = attend(Q, K, V, key_valid, causal, 0, cache ? &cache->probs : nullptr);
        Mat<T> out = o.forward(p, ctx, cache ? &cache->o : nullptr);
        if (cache) {
            cache->Q = std::move(Q);
            cache->K = std::move(K);
            cache->V = std::move(V);
        }
        return out;
    }

    /// Core attention on projected Q/K/V. `offset` is the absolute position of query row 0.
    Mat<T> attend(const Mat<T> &Q, const Mat<T> &K, const Mat<T> &V, const std::vector<bool> &key_valid, bool causal,
                  Index offset, std::vector<Mat<T>> *probs_out) const {
        const Index n = Q.rows(), m = K.rows(), dk = head_dim();
        const T scale = T(1) / std::sqrt(static_cast<T>(dk));
        Mat<T> ctx(n, dim);
        if (probs_out)
            probs_out->resize(heads);
        for (Index h = 0; h < heads; ++h) {
            Mat<T> s = (Q.middleCols(h * dk, dk) * K.middleCols(h * dk, dk).transpose()) * scale;
            for (Index i = 0; i < n; ++i) {
                T mx = -std::numeric_limits<T>::infinity();
                bool any = false;
                for (Index j = 0; j < m; ++j) {
                    bool ok = (key_valid.empty() || key_valid[j]) && (!causal || j <= i + offset);
                    if (!ok) {
                        s(i, j) = -std::numeric_limits<T>::infinity();
                    } else {
                        any = true;
                        mx = std::max(mx, s(i, j));
                    }
                }
                if (!any)
                    throw DomainError("attention row with every key masked");
                if (!std::isfinite(mx))
                    throw NumericError("non-finite attention scores");
                T z = 0;
                for (Index j = 0; j < m; ++j) {
                    s(i, j) = std::exp(s(i, j) - mx);
                    z += s(i, j);
                }
                s.row(i) /= z;
            }
            ctx.middleCols(h * dk, dk).noalias() = s * V.middleCols(h * dk, dk);
            if (probs_out)
                (*probs_out)[h] = std::move(s);
        }
        return ctx;
    }

    /// Returns (d xq, d xkv).
    std::pair<Mat<T>, Mat<T>> backward(const ParameterSet<T> &p, GradSet<T> &g, const Cache &c,
                                       const Mat<T> &dout) const {
        Mat<T> dctx = o.backward(p, g, c.o, dout);
        const Index dk = head_dim();
        const T scale = T(1) / std::sqrt(static_cast<T>(dk));
        Mat<T> dQ = Mat<T>::Zero(c.Q.rows(), dim);
        Mat<T> dK = Mat<T>::Zero(c.K.rows(), dim);
        Mat<T> dV = Mat<T>::Zero(c.V.rows(), dim);
        for (Index h = 0; h < heads; ++h) {
            const Mat<T> &P = c.probs[h];
            auto dctx_h = dctx.middleCols(h * dk, dk);
            Mat<T> dP = dctx_h * c.V.middleCols(h * dk, dk).transpose();
            dV.middleCols(h * dk, dk).noalias() += P.transpose() * dctx_h;
            Eigen::Matrix<T, Eigen::Dynamic, 1> dot = (dP.array() * P.array()).rowwise().sum();
            Mat<T> dS = (P.array() * (dP.array().colwise() - dot.array())).matrix() * scale;
            dQ.middleCols(h * dk, dk).noalias() += dS * c.K.middleCols(h * dk, dk);
            dK.middleCols(h * dk, dk).noalias() += dS.transpose() * c.Q.middleCols(h * dk, dk);
        }
        Mat<T> dxq = q.backward(p, g, c.q, dQ);
        Mat<T> dxkv = k.backward(p, g, c.k, dK);
        dxkv += v.backward(p, g, c.v, dV);
        return {std::move(dxq), std::move(dxkv)};
    }

    template <class F>
    void for_each_linear(F &&f) {
        f(q);
        f(k);
        f(v);
        f(o);
    }
};

/// Parameter-free sinusoidal positional table (max_positions x dim).
template <class T>
Mat<T> sinusoidal_positions(Index max_positions, Index dim) {
    Mat<T> pe(max_positions, dim);
    for (Index pos = 0; pos < max_positions; ++pos) {
        for (Index i = 0; i < dim; i += 2) {
            double freq = std::pow(10000.0, -static_cast<double>(i) / static_cast<double>(dim));
            pe(pos, i) = static_cast<T>(std::sin(pos * freq));
            if (i + 1 < dim)
                pe(pos, i + 1) = static_cast<T>(std::cos(pos * freq));
        }
    }
    return pe;
}

} // namespace glosstr::nn
