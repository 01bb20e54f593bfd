#pragma once
// The differentiable core: feature projector, token embedding, a transformer
// trunk runnable with bidirectional or causal attention, and the vocabulary
// head. Forward and backward are hand-written and exact; everything is
// templated on the scalar type so the gradient oracle can run in float64.

#include "griddiff/kernels.hpp"
#include "griddiff/rng.hpp"
#include "griddiff/tensor.hpp"

#include <cmath>
#include <cstdint>
#include <limits>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

namespace griddiff {

enum class AttentionMode : uint8_t { bidirectional = 0, causal = 1 };

struct ModelConfig {
    int d = 128;
    int n_layers = 4;
    int n_heads = 8;
    int d_v = 32;
    int grid = 8;
    int max_text_len = 40;
    int vocab_size = 0;
    AttentionMode default_mode = AttentionMode::bidirectional;
    uint64_t vocab_hash = 0;

    int n_patches() const { return grid * grid; }
    int head_dim() const { return d / n_heads; }

    void validate() const {
        if (d <= 0 || n_layers <= 0 || n_heads <= 0 || vocab_size <= 0) {
            throw std::runtime_error("model config: dimensions must be positive");
        }
        if (d % n_heads != 0) {
            throw std::runtime_error("model config: d must be divisible by n_heads");
        }
        if (max_text_len < 32) {
            throw std::runtime_error("model config: max_text_len must cover every task length");
        }
    }
};

/// All learnable tensors, addressable by name so the optimizer, checkpoint
/// codec and freeze logic stay generic.
template <class Real>
struct Params {
    std::vector<std::string> names;
    std::vector<Tensor<Real>> tensors;
    std::unordered_map<std::string, size_t> index;

    void add(const std::string& name, std::vector<size_t> dims) {
        index[name] = tensors.size();
        names.push_back(name);
        tensors.emplace_back(std::move(dims));
    }

    Tensor<Real>& at(const std::string& name) {
        auto it = index.find(name);
        if (it == index.end()) {
            throw std::runtime_error("no such tensor: " + name);
        }
        return tensors[it->second];
    }
    const Tensor<Real>& at(const std::string& name) const {
        return const_cast<Params*>(this)->at(name);
    }

    size_t total_count() const {
        size_t n = 0;
        for (const auto& t : tensors) {
            n += t.count();
        }
        return n;
    }

    static Params shapes_for(const ModelConfig& c) {
        c.validate();
        const auto d = static_cast<size_t>(c.d);
        const auto dv = static_cast<size_t>(c.d_v);
        const auto V = static_cast<size_t>(c.vocab_size);
        Params p;
        p.add("proj.w1", {dv, d});
        p.add("proj.b1", {d});
        p.add("proj.w2", {d, d});
        p.add("proj.b2", {d});
        p.add("embed", {V, d});
        p.add("pos", {static_cast<size_t>(c.n_patches() + c.max_text_len), d});
        for (int l = 0; l < c.n_layers; ++l) {
            const std::string pre = "layer" + std::to_string(l) + ".";
            p.add(pre + "ln1.g", {d});
            p.add(pre + "ln1.b", {d});
            p.add(pre + "attn.wq", {d, d});
            p.add(pre + "attn.bq", {d});
            p.add(pre + "attn.wk", {d, d});
            p.add(pre + "attn.bk", {d});
            p.add(pre + "attn.wv", {d, d});
            p.add(pre + "attn.bv", {d});
            p.add(pre + "attn.wo", {d, d});
            p.add(pre + "attn.bo", {d});
            p.add(pre + "ln2.g", {d});
            p.add(pre + "ln2.b", {d});
            p.add(pre + "ff.w1", {d, 4 * d});
            p.add(pre + "ff.b1", {4 * d});
            p.add(pre + "ff.w2", {4 * d, d});
            p.add(pre + "ff.b2", {d});
        }
        p.add("lnf.g", {d});
        p.add("lnf.b", {d});
        p.add("head.w", {d, V});
        p.add("head.b", {V});
        return p;
    }
};

/// Gradient buffer mirroring Params; tensors whose trainable flag is false are
/// absent (never allocated, never written).
template <class Real>
struct Grads {
    Params<Real> store;
    std::vector<char> present;

    static Grads for_params(const Params<Real>& p, const std::vector<char>& trainable) {
        Grads g;
        g.present = trainable;
        for (size_t i = 0; i < p.tensors.size(); ++i) {
            g.store.add(p.names[i], trainable[i] ? p.tensors[i].dims : std::vector<size_t>{});
        }
        return g;
    }

    void zero() {
        for (auto& t : store.tensors) {
            t.zero();
        }
    }

    bool has(size_t i) const { return present[i] != 0; }
};

inline std::vector<char> all_trainable(size_t n) { return std::vector<char>(n, 1); }

/// Deterministic init: 2-D weights ~ N(0, 0.02^2), biases zero, layer-norm
/// gains one, from a single seeded stream in tensor order.
template <class Real>
Params<Real> init_params(const ModelConfig& cfg, uint64_t seed) {
    Params<Real> p = Params<Real>::shapes_for(cfg);
    Rng rng(seed);
    for (size_t i = 0; i < p.tensors.size(); ++i) {
        auto& t = p.tensors[i];
        const std::string& name = p.names[i];
        if (t.dims.size() >= 2) {
            for (auto& x : t.data) {
                x = static_cast<Real>(0.02 * rng.normal());
            }
        } else if (name.find("ln") != std::string::npos && name.size() > 2 &&
                   name.compare(name.size() - 2, 2, ".g") == 0) {
            std::fill(t.data.begin(), t.data.end(), Real(1));
        }
        // biases stay zero
    }
    return p;
}

template <class Real>
struct Workspace {
    struct Layer {
        Tensor<Real> ln1, ln1_mean, ln1_rstd;
        Tensor<Real> q, k, v;
        Tensor<Real> probs; // (n_heads, S, S)
        Tensor<Real> ctx, attn_out, x_attn;
        Tensor<Real> ln2, ln2_mean, ln2_rstd;
        Tensor<Real> ff_u, ff_g, ff_out, x_out;
    };
    Tensor<Real> features, cv_h1, cv_g, cv;
    Tensor<Real> x0;
    std::vector<Layer> layers;
    Tensor<Real> lnf, lnf_mean, lnf_rstd;
    Tensor<Real> logits;
    std::vector<int> text_ids;
    AttentionMode mode = AttentionMode::bidirectional;
    int seq = 0;
};

namespace detail {

template <class Real>
inline void layernorm_forward(const Tensor<Real>& x, const Tensor<Real>& g, const Tensor<Real>& b,
                              Tensor<Real>& y, Tensor<Real>& mean, Tensor<Real>& rstd) {
    const size_t S = x.rows(), d = x.cols();
    const Real eps = Real(1e-5);
    for (size_t i = 0; i < S; ++i) {
        const Real* xi = x.row(i);
        Real mu = 0;
        for (size_t j = 0; j < d; ++j) {
            mu += xi[j];
        }
        mu /= static_cast<Real>(d);
        Real var = 0;
        for (size_t j = 0; j < d; ++j) {
            const Real dx = xi[j] - mu;
            var += dx * dx;
        }
        var /= static_cast<Real>(d);
        const Real rs = Real(1) / std::sqrt(var + eps);
        mean.data[i] = mu;
        rstd.data[i] = rs;
        Real* yi = y.row(i);
        for (size_t j = 0; j < d; ++j) {
            yi[j] = g.data[j] * ((xi[j] - mu) * rs) + b.data[j];
        }
    }
}

template <class Real>
inline void layernorm_backward(const Tensor<Real>& dy, const Tensor<Real>& x,
                               const Tensor<Real>& g, const Tensor<Real>& mean,
                               const Tensor<Real>& rstd, Tensor<Real>& dx, Tensor<Real>* dg,
                               Tensor<Real>* db) {
    const size_t S = x.rows(), d = x.cols();
    std::vector<Real> xhat(d), dxh(d);
    for (size_t i = 0; i < S; ++i) {
        const Real* xi = x.row(i);
        const Real* dyi = dy.row(i);
        const Real mu = mean.data[i], rs = rstd.data[i];
        Real m1 = 0, m2 = 0;
        for (size_t j = 0; j < d; ++j) {
            xhat[j] = (xi[j] - mu) * rs;
            dxh[j] = dyi[j] * g.data[j];
            m1 += dxh[j];
            m2 += dxh[j] * xhat[j];
        }
        m1 /= static_cast<Real>(d);
        m2 /= static_cast<Real>(d);
        Real* dxi = dx.row(i);
        for (size_t j = 0; j < d; ++j) {
            dxi[j] += rs * (dxh[j] - m1 - xhat[j] * m2);
        }
        if (dg != nullptr) {
            for (size_t j = 0; j < d; ++j) {
                dg->data[j] += dyi[j] * xhat[j];
            }
        }
        if (db != nullptr) {
            for (size_t j = 0; j < d; ++j) {
                db->data[j] += dyi[j];
            }
        }
    }
}

// y = x * W + b (row-broadcast bias), y must be sized (m, n)
template <class Real>
inline void affine(Tensor<Real>& y, const Tensor<Real>& x, const Tensor<Real>& w,
                   const Tensor<Real>& b) {
    const size_t m = x.rows(), k = x.cols(), n = w.cols();
    for (size_t i = 0; i < m; ++i) {
        std::copy(b.data.begin(), b.data.end(), y.row(i));
    }
    kernels::gemm_nn(y.ptr(), x.ptr(), w.ptr(), m, k, n);
}

template <class Real>
inline void add_rowsum(Tensor<Real>& db, const Tensor<Real>& dy) {
    const size_t m = dy.rows(), n = dy.cols();
    for (size_t i = 0; i < m; ++i) {
        const Real* r = dy.row(i);
        for (size_t j = 0; j < n; ++j) {
            db.data[j] += r[j];
        }
    }
}

inline bool attn_allowed(AttentionMode mode, int n_patches, size_t i, size_t j) {
    if (mode == AttentionMode::bidirectional) {
        return true;
    }
    const size_t np = static_cast<size_t>(n_patches);
    if (i < np) {
        return j < np; // visual positions never look at text in causal mode
    }
    return j < np || j <= i;
}

} // namespace detail

template <class Real>
class Net {
  public:
    ModelConfig cfg;
    Params<Real> params;

    Net() = default;
    Net(ModelConfig c, uint64_t seed) : cfg(c), params(init_params<Real>(c, seed)) {}

    /// features: (n_patches, d_v). Logits are produced for text positions only.
    void forward(const Tensor<Real>& features, const std::vector<int>& text_ids,
                 AttentionMode mode, Workspace<Real>& ws) const {
        const size_t np = static_cast<size_t>(cfg.n_patches());
        const size_t d = static_cast<size_t>(cfg.d);
        const size_t L = text_ids.size();
        if (static_cast<int>(L) > cfg.max_text_len) {
            throw std::runtime_error("text length " + std::to_string(L) +
                                     " exceeds max_text_len " + std::to_string(cfg.max_text_len));
        }
        for (int id : text_ids) {
            if (id < 0 || id >= cfg.vocab_size) {
                throw std::runtime_error("token id out of vocabulary: " + std::to_string(id));
            }
        }
        if (features.rows() != np || features.cols() != static_cast<size_t>(cfg.d_v)) {
            throw std::runtime_error("feature shape " + shape_str(features.dims) +
                                     " does not match config");
        }
        const size_t S = np + L;
        ws.text_ids = text_ids;
        ws.mode = mode;
        ws.seq = static_cast<int>(S);
        ws.features = features;

        // projector: affine -> GELU -> affine
        ws.cv_h1 = Tensor<Real>({np, d});
        detail::affine(ws.cv_h1, features, params.at("proj.w1"), params.at("proj.b1"));
        ws.cv_g = ws.cv_h1;
        for (auto& x : ws.cv_g.data) {
            x = gelu(x);
        }
        ws.cv = Tensor<Real>({np, d});
        detail::affine(ws.cv, ws.cv_g, params.at("proj.w2"), params.at("proj.b2"));

        // x0 = [C_v ; E(text)] + pos
        const auto& E = params.at("embed");
        const auto& pos = params.at("pos");
        ws.x0 = Tensor<Real>({S, d});
        for (size_t i = 0; i < np; ++i) {
            const Real* cv = ws.cv.row(i);
            const Real* pr = pos.row(i);
            Real* xi = ws.x0.row(i);
            for (size_t j = 0; j < d; ++j) {
                xi[j] = cv[j] + pr[j];
            }
        }
        for (size_t i = 0; i < L; ++i) {
            const Real* er = E.row(static_cast<size_t>(text_ids[i]));
            const Real* pr = pos.row(np + i);
            Real* xi = ws.x0.row(np + i);
            for (size_t j = 0; j < d; ++j) {
                xi[j] = er[j] + pr[j];
            }
        }

        ws.layers.assign(static_cast<size_t>(cfg.n_layers), {});
        const Tensor<Real>* x_in = &ws.x0;
        for (int l = 0; l < cfg.n_layers; ++l) {
            auto& lw = ws.layers[static_cast<size_t>(l)];
            forward_block(*x_in, l, mode, lw);
            x_in = &lw.x_out;
        }

        ws.lnf = Tensor<Real>({S, d});
        ws.lnf_mean = Tensor<Real>({S});
        ws.lnf_rstd = Tensor<Real>({S});
        detail::layernorm_forward(*x_in, params.at("lnf.g"), params.at("lnf.b"), ws.lnf,
                                  ws.lnf_mean, ws.lnf_rstd);

        ws.logits = Tensor<Real>({L, static_cast<size_t>(cfg.vocab_size)});
        if (L > 0) {
            const auto& wp = params.at("head.w");
            const auto& bp = params.at("head.b");
            for (size_t i = 0; i < L; ++i) {
                std::copy(bp.data.begin(), bp.data.end(), ws.logits.row(i));
            }
            kernels::gemm_nn(ws.logits.ptr(), ws.lnf.row(np), wp.ptr(), L, d,
                             static_cast<size_t>(cfg.vocab_size));
        }
    }

    /// Accumulates parameter gradients for dL/dlogits into `grads`. Tensors
    /// absent from `grads` are skipped (their weight-grad GEMMs are not even
    /// computed), but activation gradients always flow.
    void backward(const Tensor<Real>& dlogits, const Workspace<Real>& ws,
                  Grads<Real>& grads) const {
        const size_t np = static_cast<size_t>(cfg.n_patches());
        const size_t d = static_cast<size_t>(cfg.d);
        const size_t L = ws.text_ids.size();
        const size_t S = np + L;
        const size_t V = static_cast<size_t>(cfg.vocab_size);

        auto g = [&](const char* name) -> Tensor<Real>* {
            auto it = grads.store.index.find(name);
            if (it == grads.store.index.end() || !grads.has(it->second)) {
                return nullptr;
            }
            return &grads.store.tensors[it->second];
        };

        // head
        Tensor<Real> dlnf({S, d});
        if (L > 0) {
            if (auto* gw = g("head.w")) {
                kernels::gemm_tn(gw->ptr(), ws.lnf.row(np), dlogits.ptr(), d, L, V);
            }
            if (auto* gb = g("head.b")) {
                detail::add_rowsum(*gb, dlogits);
            }
            Tensor<Real> dytext({L, d});
            kernels::gemm_nt(dytext.ptr(), dlogits.ptr(), params.at("head.w").ptr(), L, V, d);
            std::copy(dytext.data.begin(), dytext.data.end(), dlnf.row(np));
        }

        // final layernorm
        const Tensor<Real>& x_last =
            cfg.n_layers > 0 ? ws.layers.back().x_out : ws.x0;
        Tensor<Real> dx({S, d});
        detail::layernorm_backward(dlnf, x_last, params.at("lnf.g"), ws.lnf_mean, ws.lnf_rstd, dx,
                                   g("lnf.g"), g("lnf.b"));

        for (int l = cfg.n_layers - 1; l >= 0; --l) {
            const Tensor<Real>& x_in =
                l == 0 ? ws.x0 : ws.layers[static_cast<size_t>(l - 1)].x_out;
            Tensor<Real> dx_in({S, d});
            backward_block(dx, x_in, l, ws, grads, g, dx_in);
            dx = std::move(dx_in);
        }

        // input assembly: positions, embedding scatter, projector
        if (auto* gp = g("pos")) {
            for (size_t i = 0; i < S; ++i) {
                kernels::axpy(gp->row(i), Real(1), dx.row(i), d);
            }
        }
        if (auto* ge = g("embed")) {
            for (size_t i = 0; i < L; ++i) {
                kernels::axpy(ge->row(static_cast<size_t>(ws.text_ids[i])), Real(1),
                              dx.row(np + i), d);
            }
        }

        const bool want_proj = g("proj.w1") || g("proj.b1") || g("proj.w2") || g("proj.b2");
        if (want_proj) {
            // dCv = dx rows [0, np)
            Tensor<Real> dcv({np, d});
            std::copy(dx.ptr(), dx.row(np), dcv.ptr());
            if (auto* gw = g("proj.w2")) {
                kernels::gemm_tn(gw->ptr(), ws.cv_g.ptr(), dcv.ptr(), d, np, d);
            }
            if (auto* gb = g("proj.b2")) {
                detail::add_rowsum(*gb, dcv);
            }
            Tensor<Real> dgp({np, d});
            kernels::gemm_nt(dgp.ptr(), dcv.ptr(), params.at("proj.w2").ptr(), np, d, d);
            for (size_t i = 0; i < dgp.data.size(); ++i) {
                dgp.data[i] *= gelu_grad(ws.cv_h1.data[i]);
            }
            if (auto* gw = g("proj.w1")) {
                kernels::gemm_tn(gw->ptr(), ws.features.ptr(), dgp.ptr(),
                                 static_cast<size_t>(cfg.d_v), np, d);
            }
            if (auto* gb = g("proj.b1")) {
                detail::add_rowsum(*gb, dgp);
            }
        }
    }

  private:
    void forward_block(const Tensor<Real>& x_in, int l, AttentionMode mode,
                       typename Workspace<Real>::Layer& lw) const {
        const size_t S = x_in.rows(), d = x_in.cols();
        const size_t nh = static_cast<size_t>(cfg.n_heads);
        const size_t hd = static_cast<size_t>(cfg.head_dim());
        const std::string pre = "layer" + std::to_string(l) + ".";
        const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(hd));
        const int np = cfg.n_patches();

        lw.ln1 = Tensor<Real>({S, d});
        lw.ln1_mean = Tensor<Real>({S});
        lw.ln1_rstd = Tensor<Real>({S});
        detail::layernorm_forward(x_in, params.at(pre + "ln1.g"), params.at(pre + "ln1.b"),
                                  lw.ln1, lw.ln1_mean, lw.ln1_rstd);

        lw.q = Tensor<Real>({S, d});
        lw.k = Tensor<Real>({S, d});
        lw.v = Tensor<Real>({S, d});
        detail::affine(lw.q, lw.ln1, params.at(pre + "attn.wq"), params.at(pre + "attn.bq"));
        detail::affine(lw.k, lw.ln1, params.at(pre + "attn.wk"), params.at(pre + "attn.bk"));
        detail::affine(lw.v, lw.ln1, params.at(pre + "attn.wv"), params.at(pre + "attn.bv"));

        lw.probs = Tensor<Real>({nh, S, S});
        lw.ctx = Tensor<Real>({S, d});
        const Real neg_inf = -std::numeric_limits<Real>::infinity();
        for (size_t h = 0; h < nh; ++h) {
            for (size_t i = 0; i < S; ++i) {
                Real* row = lw.probs.data.data() + (h * S + i) * S;
                const Real* qi = lw.q.row(i) + h * hd;
                for (size_t j = 0; j < S; ++j) {
                    row[j] = detail::attn_allowed(mode, np, i, j)
                                 ? kernels::dot(qi, lw.k.row(j) + h * hd, hd) * inv_sqrt
                                 : neg_inf;
                }
                softmax_row(row, S);
                Real* ci = lw.ctx.row(i) + h * hd;
                for (size_t j = 0; j < S; ++j) {
                    if (row[j] != Real(0)) {
                        kernels::axpy(ci, row[j], lw.v.row(j) + h * hd, hd);
                    }
                }
            }
        }

        lw.attn_out = Tensor<Real>({S, d});
        detail::affine(lw.attn_out, lw.ctx, params.at(pre + "attn.wo"), params.at(pre + "attn.bo"));
        lw.x_attn = x_in;
        for (size_t i = 0; i < lw.x_attn.data.size(); ++i) {
            lw.x_attn.data[i] += lw.attn_out.data[i];
        }

        lw.ln2 = Tensor<Real>({S, d});
        lw.ln2_mean = Tensor<Real>({S});
        lw.ln2_rstd = Tensor<Real>({S});
        detail::layernorm_forward(lw.x_attn, params.at(pre + "ln2.g"), params.at(pre + "ln2.b"),
                                  lw.ln2, lw.ln2_mean, lw.ln2_rstd);

        lw.ff_u = Tensor<Real>({S, 4 * d});
        detail::affine(lw.ff_u, lw.ln2, params.at(pre + "ff.w1"), params.at(pre + "ff.b1"));
        lw.ff_g = lw.ff_u;
        for (auto& x : lw.ff_g.data) {
            x = gelu(x);
        }
        lw.ff_out = Tensor<Real>({S, d});
        detail::affine(lw.ff_out, lw.ff_g, params.at(pre + "ff.w2"), params.at(pre + "ff.b2"));
        lw.x_out = lw.x_attn;
        for (size_t i = 0; i < lw.x_out.data.size(); ++i) {
            lw.x_out.data[i] += lw.ff_out.data[i];
        }
    }

    template <class GetGrad>
    void backward_block(const Tensor<Real>& dx_out, const Tensor<Real>& x_in, int l,
                        const Workspace<Real>& ws, Grads<Real>& grads, GetGrad& g,
                        Tensor<Real>& dx_in) const {
        (void)grads;
        const auto& lw = ws.layers[static_cast<size_t>(l)];
        const size_t S = x_in.rows(), d = x_in.cols();
        const size_t nh = static_cast<size_t>(cfg.n_heads);
        const size_t hd = static_cast<size_t>(cfg.head_dim());
        const std::string pre = "layer" + std::to_string(l) + ".";
        const Real inv_sqrt = Real(1) / std::sqrt(static_cast<Real>(hd));

        auto gname = [&](const char* suffix) { return (pre + suffix); };
        auto gget = [&](const char* suffix) -> Tensor<Real>* {
            return g(gname(suffix).c_str());
        };

        // feed-forward branch
        Tensor<Real> dffg({S, 4 * d});
        kernels::gemm_nt(dffg.ptr(), dx_out.ptr(), params.at(pre + "ff.w2").ptr(), S, d, 4 * d);
        if (auto* gw = gget("ff.w2")) {
            kernels::gemm_tn(gw->ptr(), lw.ff_g.ptr(), dx_out.ptr(), 4 * d, S, d);
        }
        if (auto* gb = gget("ff.b2")) {
            detail::add_rowsum(*gb, dx_out);
        }
        for (size_t i = 0; i < dffg.data.size(); ++i) {
            dffg.data[i] *= gelu_grad(lw.ff_u.data[i]);
        }
        Tensor<Real> dln2({S, d});
        kernels::gemm_nt(dln2.ptr(), dffg.ptr(), params.at(pre + "ff.w1").ptr(), S, 4 * d, d);
        if (auto* gw = gget("ff.w1")) {
            kernels::gemm_tn(gw->ptr(), lw.ln2.ptr(), dffg.ptr(), d, S, 4 * d);
        }
        if (auto* gb = gget("ff.b1")) {
            detail::add_rowsum(*gb, dffg);
        }

        Tensor<Real> dx_attn = dx_out; // residual path
        detail::layernorm_backward(dln2, lw.x_attn, params.at(pre + "ln2.g"), lw.ln2_mean,
                                   lw.ln2_rstd, dx_attn, gget("ln2.g"), gget("ln2.b"));

        // attention branch
        Tensor<Real> dctx({S, d});
        kernels::gemm_nt(dctx.ptr(), dx_attn.ptr(), params.at(pre + "attn.wo").ptr(), S, d, d);
        if (auto* gw = gget("attn.wo")) {
            kernels::gemm_tn(gw->ptr(), lw.ctx.ptr(), dx_attn.ptr(), d, S, d);
        }
        if (auto* gb = gget("attn.bo")) {
            detail::add_rowsum(*gb, dx_attn);
        }

        Tensor<Real> dq({S, d}), dk({S, d}), dv({S, d});
        std::vector<Real> dp(S), dscore(S);
        for (size_t h = 0; h < nh; ++h) {
            for (size_t i = 0; i < S; ++i) {
                const Real* p = lw.probs.data.data() + (h * S + i) * S;
                const Real* dci = dctx.row(i) + h * hd;
                Real pdp = 0;
                for (size_t j = 0; j < S; ++j) {
                    if (p[j] != Real(0)) {
                        dp[j] = kernels::dot(dci, lw.v.row(j) + h * hd, hd);
                        kernels::axpy(dv.row(j) + h * hd, p[j], dci, hd);
                        pdp += p[j] * dp[j];
                    } else {
                        dp[j] = 0;
                    }
                }
                Real* dqi = dq.row(i) + h * hd;
                const Real* qi = lw.q.row(i) + h * hd;
                for (size_t j = 0; j < S; ++j) {
                    if (p[j] == Real(0)) {
                        continue;
                    }
                    const Real ds = p[j] * (dp[j] - pdp) * inv_sqrt;
                    kernels::axpy(dqi, ds, lw.k.row(j) + h * hd, hd);
                    kernels::axpy(dk.row(j) + h * hd, ds, qi, hd);
                }
            }
        }

        Tensor<Real> dln1({S, d});
        kernels::gemm_nt(dln1.ptr(), dq.ptr(), params.at(pre + "attn.wq").ptr(), S, d, d);
        kernels::gemm_nt(dln1.ptr(), dk.ptr(), params.at(pre + "attn.wk").ptr(), S, d, d);
        kernels::gemm_nt(dln1.ptr(), dv.ptr(), params.at(pre + "attn.wv").ptr(), S, d, d);
        if (auto* gw = gget("attn.wq")) {
            kernels::gemm_tn(gw->ptr(), lw.ln1.ptr(), dq.ptr(), d, S, d);
        }
        if (auto* gw = gget("attn.wk")) {
            kernels::gemm_tn(gw->ptr(), lw.ln1.ptr(), dk.ptr(), d, S, d);
        }
        if (auto* gw = gget("attn.wv")) {
            kernels::gemm_tn(gw->ptr(), lw.ln1.ptr(), dv.ptr(), d, S, d);
        }
        if (auto* gb = gget("attn.bq")) {
            detail::add_rowsum(*gb, dq);
        }
        if (auto* gb = gget("attn.bk")) {
            detail::add_rowsum(*gb, dk);
        }
        if (auto* gb = gget("attn.bv")) {
            detail::add_rowsum(*gb, dv);
        }

        dx_in = dx_attn; // residual path into the block
        detail::layernorm_backward(dln1, x_in, params.at(pre + "ln1.g"), lw.ln1_mean, lw.ln1_rstd,
                                   dx_in, gget("ln1.g"), gget("ln1.b"));
    }
};

/// AdamW with bias correction; weight decay is decoupled and defaults to zero.
template <class Real>
struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.95;
    double eps = 1e-8;
    double weight_decay = 0.0;
    int64_t step_count = 0;
    Params<Real> m, v;

    explicit AdamW(const ModelConfig& cfg)
        : m(Params<Real>::shapes_for(cfg)), v(Params<Real>::shapes_for(cfg)) {}

    void step(Params<Real>& params, const Grads<Real>& grads) {
        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (size_t t = 0; t < params.tensors.size(); ++t) {
            if (!grads.has(t)) {
                continue;
            }
            auto& p = params.tensors[t];
            const auto& gr = grads.store.tensors[t];
            if (!p.same_shape(gr)) {
                throw std::runtime_error("adamw: shape mismatch for " + params.names[t]);
            }
            auto& mt = m.tensors[t];
            auto& vt = v.tensors[t];
            for (size_t i = 0; i < p.data.size(); ++i) {
                const double gd = static_cast<double>(gr.data[i]);
                const double md = beta1 * static_cast<double>(mt.data[i]) + (1.0 - beta1) * gd;
                const double vd = beta2 * static_cast<double>(vt.data[i]) + (1.0 - beta2) * gd * gd;
                mt.data[i] = static_cast<Real>(md);
                vt.data[i] = static_cast<Real>(vd);
                const double mhat = md / bc1;
                const double vhat = vd / bc2;
                double x = static_cast<double>(p.data[i]);
                x -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * x);
                p.data[i] = static_cast<Real>(x);
            }
        }
    }
};

} // namespace griddiff
