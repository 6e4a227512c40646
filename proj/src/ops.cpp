#include "twintower/ops.hpp"

#include "twintower/kernels.hpp"

#include <cmath>
#include <stdexcept>

namespace twintower {

std::size_t ParamSet::add(std::string name, Tensor value) {
    for (const auto& n : names_) {
        if (n == name) throw std::invalid_argument("duplicate parameter: " + name);
    }
    names_.push_back(std::move(name));
    grads_.emplace_back(value.shape());
    values_.push_back(std::move(value));
    return values_.size() - 1;
}

std::size_t ParamSet::index_of(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
        if (names_[i] == name) return i;
    }
    throw std::out_of_range("unknown parameter: " + name);
}

bool ParamSet::contains(const std::string& name) const {
    for (const auto& n : names_) {
        if (n == name) return true;
    }
    return false;
}

void ParamSet::zero_grads() {
    for (auto& g : grads_) g.fill(0.0);
}

std::size_t ParamSet::total_elements() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
}

// ---- affine ----

Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b) {
    if (x.rank() != 2 || W.rank() != 2 || x.dim(1) != W.dim(0) ||
        b.size() != W.dim(1)) {
        throw std::invalid_argument("affine shape mismatch: x " + shape_str(x.shape()) +
                                    " vs W " + shape_str(W.shape()));
    }
    Tensor y({x.dim(0), W.dim(1)});
    kern::matmul_nn(y.data(), x.data(), W.data(), x.dim(0), x.dim(1), W.dim(1));
    kern::add_row_vector(y.data(), b.data(), y.dim(0), y.dim(1));
    return y;
}

void affine_backward(const Tensor& dy, const Tensor& x, const Tensor& W,
                     Tensor* dx, Tensor& dW, Tensor& db) {
    const std::size_t B = x.dim(0), I = x.dim(1), O = W.dim(1);
    if (dx) {
        kern::matmul_nt(dx->data(), dy.data(), W.data(), B, O, I, true);
    }
    kern::matmul_tn(dW.data(), x.data(), dy.data(), I, B, O, true);
    kern::column_sums(db.data(), dy.data(), B, O);
}

Tensor linear(const Tensor& x, const Tensor& W) {
    if (x.rank() != 2 || W.rank() != 2 || x.dim(1) != W.dim(0)) {
        throw std::invalid_argument("linear shape mismatch: x " + shape_str(x.shape()) +
                                    " vs W " + shape_str(W.shape()));
    }
    Tensor y({x.dim(0), W.dim(1)});
    kern::matmul_nn(y.data(), x.data(), W.data(), x.dim(0), x.dim(1), W.dim(1));
    return y;
}

void linear_backward(const Tensor& dy, const Tensor& x, const Tensor& W,
                     Tensor* dx, Tensor& dW) {
    const std::size_t B = x.dim(0), I = x.dim(1), O = W.dim(1);
    if (dx) {
        kern::matmul_nt(dx->data(), dy.data(), W.data(), B, O, I, true);
    }
    kern::matmul_tn(dW.data(), x.data(), dy.data(), I, B, O, true);
}

// ---- softmax cross entropy ----

SoftmaxXent softmax_xent(const Tensor& logits, const std::vector<int>& targets,
                         const std::vector<std::uint8_t>& scored) {
    const std::size_t rows = logits.dim(0), V = logits.dim(1);
    if (targets.size() != rows || scored.size() != rows) {
        throw std::invalid_argument("softmax_xent: targets/mask length mismatch");
    }
    std::size_t count = 0;
    for (auto s : scored) count += (s != 0);
    if (count == 0) throw std::invalid_argument("no scorable positions");

    SoftmaxXent out;
    out.probs = Tensor({rows, V});
    kern::softmax_rows(out.probs.data(), logits.data(), rows, V);
    double loss = 0.0;
    for (std::size_t r = 0; r < rows; ++r) {
        if (!scored[r]) continue;
        const int t = targets[r];
        if (t < 0 || static_cast<std::size_t>(t) >= V) {
            throw std::invalid_argument("softmax_xent: target id out of range");
        }
        loss -= std::log(out.probs.at(r, static_cast<std::size_t>(t)));
    }
    out.loss = loss / static_cast<double>(count);
    return out;
}

void softmax_xent_backward(const SoftmaxXent& fwd, const std::vector<int>& targets,
                           const std::vector<std::uint8_t>& scored, Tensor& dlogits) {
    const std::size_t rows = fwd.probs.dim(0), V = fwd.probs.dim(1);
    std::size_t count = 0;
    for (auto s : scored) count += (s != 0);
    const double inv = 1.0 / static_cast<double>(count);
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
        if (!scored[r]) continue;
        const double* prow = fwd.probs.data() + r * V;
        double* drow = dlogits.data() + r * V;
        for (std::size_t c = 0; c < V; ++c) drow[c] += prow[c] * inv;
        drow[targets[r]] -= inv;
    }
}

// ---- LSTM cell ----

namespace {
inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }
} // namespace

LstmStep lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                   const Tensor& Wx, const Tensor& Wh, const Tensor& b) {
    const std::size_t B = x.dim(0), I = x.dim(1), H = h_prev.dim(1);
    if (Wx.dim(0) != I || Wx.dim(1) != 4 * H || Wh.dim(0) != H ||
        Wh.dim(1) != 4 * H || b.size() != 4 * H || c_prev.dim(1) != H) {
        throw std::invalid_argument("lstm_step shape mismatch: x " + shape_str(x.shape()) +
                                    " vs Wx " + shape_str(Wx.shape()));
    }
    Tensor pre({B, 4 * H});
    kern::matmul_nn(pre.data(), x.data(), Wx.data(), B, I, 4 * H);
    kern::matmul_nn(pre.data(), h_prev.data(), Wh.data(), B, H, 4 * H, true);
    kern::add_row_vector(pre.data(), b.data(), B, 4 * H);

    LstmStep out;
    out.h = Tensor({B, H});
    out.c = Tensor({B, H});
    out.gates = Tensor({B, 4 * H});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(B); ++r) {
        const double* p = pre.data() + r * 4 * H;
        double* g = out.gates.data() + r * 4 * H;
        for (std::size_t u = 0; u < H; ++u) {
            const double gi = sigmoid(p[u]);
            const double gf = sigmoid(p[H + u]);
            const double gg = std::tanh(p[2 * H + u]);
            const double go = sigmoid(p[3 * H + u]);
            g[u] = gi;
            g[H + u] = gf;
            g[2 * H + u] = gg;
            g[3 * H + u] = go;
            const double c = gf * c_prev.at(r, u) + gi * gg;
            out.c.at(r, u) = c;
            out.h.at(r, u) = go * std::tanh(c);
        }
    }
    return out;
}

LstmStepGrads lstm_step_backward(const LstmStep& fwd, const Tensor& dh, const Tensor& dc,
                                 const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                 const Tensor& Wx, const Tensor& Wh,
                                 Tensor& dWx, Tensor& dWh, Tensor& db) {
    const std::size_t B = x.dim(0), I = x.dim(1), H = h_prev.dim(1);
    Tensor dpre({B, 4 * H});
    LstmStepGrads out;
    out.dx = Tensor({B, I});
    out.dh_prev = Tensor({B, H});
    out.dc_prev = Tensor({B, H});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(B); ++r) {
        const double* g = fwd.gates.data() + r * 4 * H;
        double* dp = dpre.data() + r * 4 * H;
        for (std::size_t u = 0; u < H; ++u) {
            const double gi = g[u], gf = g[H + u], gg = g[2 * H + u], go = g[3 * H + u];
            const double tc = std::tanh(fwd.c.at(r, u));
            const double dho = dh.at(r, u);
            const double dcc = dc.at(r, u) + dho * go * (1.0 - tc * tc);
            dp[u] = dcc * gg * gi * (1.0 - gi);
            dp[H + u] = dcc * c_prev.at(r, u) * gf * (1.0 - gf);
            dp[2 * H + u] = dcc * gi * (1.0 - gg * gg);
            dp[3 * H + u] = dho * tc * go * (1.0 - go);
            out.dc_prev.at(r, u) = dcc * gf;
        }
    }
    kern::matmul_nt(out.dx.data(), dpre.data(), Wx.data(), B, 4 * H, I, true);
    kern::matmul_nt(out.dh_prev.data(), dpre.data(), Wh.data(), B, 4 * H, H, true);
    kern::matmul_tn(dWx.data(), x.data(), dpre.data(), I, B, 4 * H, true);
    kern::matmul_tn(dWh.data(), h_prev.data(), dpre.data(), H, B, 4 * H, true);
    kern::column_sums(db.data(), dpre.data(), B, 4 * H);
    return out;
}

// ---- transformer block ----

Tensor attention_block(const ParamSet& ps, const BlockParams& p, const Tensor& x,
                       std::size_t B, std::size_t L, std::size_t heads, bool causal,
                       BlockCache* cache) {
    const std::size_t D = x.dim(1);
    if (heads == 0 || D % heads != 0) {
        throw std::invalid_argument("attention_block: hidden size " + std::to_string(D) +
                                    " not divisible by " + std::to_string(heads) + " heads");
    }
    const std::size_t dk = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));
    constexpr double ln_eps = 1e-5;

    BlockCache local;
    BlockCache& cc = cache ? *cache : local;
    cc.x = x;
    cc.q = affine(x, ps.value(p.Wq), ps.value(p.bq));
    cc.k = linear(x, ps.value(p.Wk));
    cc.v = affine(x, ps.value(p.Wv), ps.value(p.bv));
    cc.attn = Tensor({B * heads * L, L});
    cc.ctx = Tensor({B * L, D});

#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bh = 0; bh < static_cast<std::ptrdiff_t>(B * heads); ++bh) {
        const std::size_t b = bh / heads, h = bh % heads;
        const std::size_t col = h * dk;
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t limit = causal ? i + 1 : L;
            const double* qi = cc.q.data() + (b * L + i) * D + col;
            double* arow = cc.attn.data() + (bh * L + i) * L;
            double mx = -1e300;
            for (std::size_t j = 0; j < limit; ++j) {
                const double* kj = cc.k.data() + (b * L + j) * D + col;
                double s = 0.0;
                for (std::size_t u = 0; u < dk; ++u) s += qi[u] * kj[u];
                arow[j] = s * scale;
                mx = std::max(mx, arow[j]);
            }
            double z = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                arow[j] = std::exp(arow[j] - mx);
                z += arow[j];
            }
            const double inv = 1.0 / z;
            for (std::size_t j = 0; j < limit; ++j) arow[j] *= inv;
            for (std::size_t j = limit; j < L; ++j) arow[j] = 0.0;
            double* crow = cc.ctx.data() + (b * L + i) * D + col;
            for (std::size_t u = 0; u < dk; ++u) crow[u] = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                const double a = arow[j];
                const double* vj = cc.v.data() + (b * L + j) * D + col;
                for (std::size_t u = 0; u < dk; ++u) crow[u] += a * vj[u];
            }
        }
    }

    cc.attn_out = affine(cc.ctx, ps.value(p.Wo), ps.value(p.bo));
    cc.r1 = Tensor({B * L, D});
    for (std::size_t i = 0; i < cc.r1.size(); ++i) cc.r1[i] = x[i] + cc.attn_out[i];
    cc.ln1_mean = Tensor({B * L});
    cc.ln1_inv_std = Tensor({B * L});
    cc.y1 = Tensor({B * L, D});
    kern::layer_norm(cc.y1.data(), cc.ln1_mean.data(), cc.ln1_inv_std.data(), cc.r1.data(),
                     ps.value(p.ln1_gain).data(), ps.value(p.ln1_shift).data(), B * L, D, ln_eps);

    cc.f1 = affine(cc.y1, ps.value(p.W1), ps.value(p.b1));
    cc.g = Tensor(cc.f1.shape());
    kern::gelu(cc.g.data(), cc.f1.data(), cc.f1.size());
    Tensor f2 = affine(cc.g, ps.value(p.W2), ps.value(p.b2));
    cc.r2 = Tensor({B * L, D});
    for (std::size_t i = 0; i < cc.r2.size(); ++i) cc.r2[i] = cc.y1[i] + f2[i];

    cc.ln2_mean = Tensor({B * L});
    cc.ln2_inv_std = Tensor({B * L});
    Tensor out({B * L, D});
    kern::layer_norm(out.data(), cc.ln2_mean.data(), cc.ln2_inv_std.data(), cc.r2.data(),
                     ps.value(p.ln2_gain).data(), ps.value(p.ln2_shift).data(), B * L, D, ln_eps);
    return out;
}

Tensor attention_block_backward(ParamSet& ps, const BlockParams& p,
                                const BlockCache& cc, const Tensor& dout,
                                std::size_t B, std::size_t L, std::size_t heads,
                                bool causal) {
    const std::size_t D = cc.x.dim(1);
    const std::size_t dk = D / heads;
    const double scale = 1.0 / std::sqrt(static_cast<double>(dk));

    Tensor dr2({B * L, D});
    kern::layer_norm_backward(dr2.data(), ps.grad(p.ln2_gain).data(), ps.grad(p.ln2_shift).data(),
                              dout.data(), cc.r2.data(), ps.value(p.ln2_gain).data(),
                              cc.ln2_mean.data(), cc.ln2_inv_std.data(), B * L, D);

    // r2 = y1 + f2
    Tensor dy1 = dr2;
    Tensor dg({B * L, cc.g.dim(1)});
    affine_backward(dr2, cc.g, ps.value(p.W2), &dg, ps.grad(p.W2), ps.grad(p.b2));
    Tensor df1(cc.f1.shape());
    kern::gelu_backward(df1.data(), cc.f1.data(), dg.data(), df1.size());
    affine_backward(df1, cc.y1, ps.value(p.W1), &dy1, ps.grad(p.W1), ps.grad(p.b1));

    Tensor dr1({B * L, D});
    kern::layer_norm_backward(dr1.data(), ps.grad(p.ln1_gain).data(), ps.grad(p.ln1_shift).data(),
                              dy1.data(), cc.r1.data(), ps.value(p.ln1_gain).data(),
                              cc.ln1_mean.data(), cc.ln1_inv_std.data(), B * L, D);

    // r1 = x + attn_out
    Tensor dx = dr1;
    Tensor dctx({B * L, D});
    affine_backward(dr1, cc.ctx, ps.value(p.Wo), &dctx, ps.grad(p.Wo), ps.grad(p.bo));

    Tensor dq({B * L, D}), dkq({B * L, D}), dv({B * L, D});
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t bh = 0; bh < static_cast<std::ptrdiff_t>(B * heads); ++bh) {
        const std::size_t b = bh / heads, h = bh % heads;
        const std::size_t col = h * dk;
        std::vector<double> da(L), ds(L);
        for (std::size_t i = 0; i < L; ++i) {
            const std::size_t limit = causal ? i + 1 : L;
            const double* arow = cc.attn.data() + (bh * L + i) * L;
            const double* dci = dctx.data() + (b * L + i) * D + col;
            double dot = 0.0;
            for (std::size_t j = 0; j < limit; ++j) {
                const double* vj = cc.v.data() + (b * L + j) * D + col;
                double s = 0.0;
                for (std::size_t u = 0; u < dk; ++u) s += dci[u] * vj[u];
                da[j] = s;
                dot += arow[j] * s;
                double* dvj = dv.data() + (b * L + j) * D + col;
                for (std::size_t u = 0; u < dk; ++u) dvj[u] += arow[j] * dci[u];
            }
            const double* qi = cc.q.data() + (b * L + i) * D + col;
            double* dqi = dq.data() + (b * L + i) * D + col;
            for (std::size_t j = 0; j < limit; ++j) {
                ds[j] = arow[j] * (da[j] - dot) * scale;
                const double* kj = cc.k.data() + (b * L + j) * D + col;
                double* dkj = dkq.data() + (b * L + j) * D + col;
                for (std::size_t u = 0; u < dk; ++u) {
                    dqi[u] += ds[j] * kj[u];
                    dkj[u] += ds[j] * qi[u];
                }
            }
        }
    }

    affine_backward(dq, cc.x, ps.value(p.Wq), &dx, ps.grad(p.Wq), ps.grad(p.bq));
    linear_backward(dkq, cc.x, ps.value(p.Wk), &dx, ps.grad(p.Wk));
    affine_backward(dv, cc.x, ps.value(p.Wv), &dx, ps.grad(p.Wv), ps.grad(p.bv));
    return dx;
}

// ---- optimizer ----

AdamState make_adam(const ParamSet& ps, const AdamHyper& hp) {
    AdamState st;
    st.hp = hp;
    st.m.reserve(ps.size());
    st.v.reserve(ps.size());
    for (std::size_t i = 0; i < ps.size(); ++i) {
        st.m.emplace_back(ps.value(i).shape());
        st.v.emplace_back(ps.value(i).shape());
    }
    return st;
}

void adam_step(AdamState& st, ParamSet& ps) {
    if (st.m.size() != ps.size()) {
        throw std::invalid_argument("adam_step: state does not match parameter set");
    }
    ++st.t;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        kern::adam_update(ps.value(i).data(), st.m[i].data(), st.v[i].data(),
                          ps.grad(i).data(), ps.value(i).size(), st.hp.lr, st.hp.beta1,
                          st.hp.beta2, st.hp.eps, st.hp.weight_decay, st.t);
    }
}

// ---- gradient checking ----

double grad_check(const std::function<double()>& loss_fn,
                  std::span<Tensor* const> params,
                  std::span<const Tensor* const> analytic_grads,
                  double eps) {
    if (eps <= 0.0) throw std::invalid_argument("grad_check: eps must be positive");
    double max_err = 0.0;
    for (std::size_t pi = 0; pi < params.size(); ++pi) {
        Tensor& t = *params[pi];
        const Tensor& g = *analytic_grads[pi];
        for (std::size_t i = 0; i < t.size(); ++i) {
            const double orig = t[i];
            t[i] = orig + eps;
            const double lp = loss_fn();
            t[i] = orig - eps;
            const double lm = loss_fn();
            t[i] = orig;
            if (!std::isfinite(lp) || !std::isfinite(lm)) {
                throw std::runtime_error("grad_check: non-finite loss");
            }
            const double numeric = (lp - lm) / (2.0 * eps);
            const double analytic = g[i];
            const double err = std::abs(analytic - numeric) /
                               std::max(1e-8, std::abs(analytic) + std::abs(numeric));
            max_err = std::max(max_err, err);
        }
    }
    return max_err;
}

// ---- initialization ----

void init_uniform(Tensor& t, Rng& rng, double lo, double hi) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.uniform(lo, hi);
}

void init_normal(Tensor& t, Rng& rng, double stddev) {
    for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, stddev);
}

} // namespace twintower
