#include "twintower/model.hpp"

#include "twintower/kernels.hpp"
#include "twintower/rng.hpp"

#include <cstring>
#include <stdexcept>

namespace twintower {

namespace {

// [PAD] must carry exactly zero probability; with max subtraction this logit
// underflows to exp(-inf) = 0.
constexpr double kBannedLogit = -1e300;

} // namespace

ModelType model_type_from_string(const std::string& name) {
    if (name == "cloze-lstm") return ModelType::cloze_lstm;
    if (name == "causal-tfm") return ModelType::causal_tfm;
    if (name == "mlm-tfm") return ModelType::mlm_tfm;
    throw std::invalid_argument("unknown model type: " + name);
}

std::string model_type_name(ModelType type) {
    switch (type) {
        case ModelType::cloze_lstm: return "cloze-lstm";
        case ModelType::causal_tfm: return "causal-tfm";
        case ModelType::mlm_tfm: return "mlm-tfm";
    }
    return "?";
}

TaskKind task_for(ModelType type) {
    switch (type) {
        case ModelType::cloze_lstm: return TaskKind::cloze;
        case ModelType::causal_tfm: return TaskKind::causal;
        case ModelType::mlm_tfm: return TaskKind::mlm;
    }
    return TaskKind::cloze;
}

ModelConfig preset_config(const std::string& name) {
    ModelConfig c;
    if (name == "elmo") {
        c.model_type = ModelType::cloze_lstm;
        c.layers = 2;
        c.hidden_size = 512;
        c.embed_size = 128;
        c.heads = 0;
        c.intermediate_size = 0;
        c.seq_len = 64;
    } else if (name == "gpt") {
        c.model_type = ModelType::causal_tfm;
        c.layers = 6;
        c.hidden_size = 96;
        c.embed_size = 96;
        c.heads = 6;
        c.intermediate_size = 384;
        c.seq_len = 64;
    } else if (name == "bert-base") {
        c.model_type = ModelType::mlm_tfm;
        c.layers = 6;
        c.hidden_size = 96;
        c.embed_size = 96;
        c.heads = 12;
        c.intermediate_size = 256;
        c.seq_len = 64;
    } else if (name == "bert-large") {
        c.model_type = ModelType::mlm_tfm;
        c.layers = 12;
        c.hidden_size = 128;
        c.embed_size = 128;
        c.heads = 16;
        c.intermediate_size = 512;
        c.seq_len = 64;
    } else if (name == "tiny-elmo") {
        c.model_type = ModelType::cloze_lstm;
        c.layers = 1;
        c.hidden_size = 64;
        c.embed_size = 64;
        c.heads = 0;
        c.intermediate_size = 0;
        c.seq_len = 32;
    } else if (name == "tiny-gpt") {
        c.model_type = ModelType::causal_tfm;
        c.layers = 2;
        c.hidden_size = 64;
        c.embed_size = 64;
        c.heads = 4;
        c.intermediate_size = 128;
        c.seq_len = 32;
    } else if (name == "tiny-bert") {
        c.model_type = ModelType::mlm_tfm;
        c.layers = 2;
        c.hidden_size = 64;
        c.embed_size = 64;
        c.heads = 4;
        c.intermediate_size = 128;
        c.seq_len = 32;
    } else {
        throw std::invalid_argument("unknown preset: " + name);
    }
    return c;
}

std::vector<std::string> preset_names() {
    return {"elmo", "gpt", "bert-base", "bert-large", "tiny-elmo", "tiny-gpt", "tiny-bert"};
}

void validate_config(const ModelConfig& c) {
    if (c.layers == 0 || c.hidden_size == 0 || c.embed_size == 0) {
        throw std::invalid_argument("model dimensions must be positive");
    }
    if (c.vocab_size < static_cast<std::size_t>(kNumSpecials)) {
        throw std::invalid_argument("vocab too small");
    }
    if (c.seq_len < 2) throw std::invalid_argument("seq_len must be at least 2");
    if (c.model_type != ModelType::cloze_lstm) {
        if (c.heads == 0 || c.hidden_size % c.heads != 0) {
            throw std::invalid_argument("hidden size " + std::to_string(c.hidden_size) +
                                        " not divisible by " + std::to_string(c.heads) +
                                        " heads");
        }
        if (c.intermediate_size == 0) {
            throw std::invalid_argument("model dimensions must be positive");
        }
    }
    if (c.model_type == ModelType::mlm_tfm &&
        (c.mask_rate <= 0.0 || c.mask_rate >= 1.0)) {
        throw std::invalid_argument("mask_rate must be in (0, 1)");
    }
}

namespace {

std::size_t add_weight(ParamSet& ps, const std::string& name, std::size_t r,
                       std::size_t c, Rng& rng) {
    Tensor t({r, c});
    init_normal(t, rng, 0.02);
    return ps.add(name, std::move(t));
}

std::size_t add_const_vec(ParamSet& ps, const std::string& name, std::size_t d, double v) {
    Tensor t({d});
    t.fill(v);
    return ps.add(name, std::move(t));
}

TowerIdx build_tower(ParamSet& ps, const std::string& prefix, const ModelConfig& c,
                     Rng& rng) {
    TowerIdx idx;
    const std::size_t dh = c.hidden_size;
    if (c.model_type == ModelType::cloze_lstm) {
        for (const char* dir : {"fwd", "bwd"}) {
            auto& stack = dir[0] == 'f' ? idx.fwd : idx.bwd;
            for (std::size_t l = 0; l < c.layers; ++l) {
                const std::size_t in = l == 0 ? c.embed_size : dh;
                const std::string base = prefix + ".l" + std::to_string(l) + "." + dir;
                LstmLayerIdx li;
                li.Wx = add_weight(ps, base + ".Wx", in, 4 * dh, rng);
                li.Wh = add_weight(ps, base + ".Wh", dh, 4 * dh, rng);
                li.b = add_const_vec(ps, base + ".b", 4 * dh, 0.0);
                stack.push_back(li);
            }
        }
        idx.comb_W = add_weight(ps, prefix + ".comb.W", 2 * dh, dh, rng);
        idx.comb_b = add_const_vec(ps, prefix + ".comb.b", dh, 0.0);
    } else {
        idx.in_W = add_weight(ps, prefix + ".in.W", c.embed_size, dh, rng);
        idx.in_b = add_const_vec(ps, prefix + ".in.b", dh, 0.0);
        for (std::size_t l = 0; l < c.layers; ++l) {
            const std::string base = prefix + ".l" + std::to_string(l) + ".";
            BlockParams bp;
            bp.Wq = add_weight(ps, base + "Wq", dh, dh, rng);
            bp.bq = add_const_vec(ps, base + "bq", dh, 0.0);
            bp.Wk = add_weight(ps, base + "Wk", dh, dh, rng);
            bp.Wv = add_weight(ps, base + "Wv", dh, dh, rng);
            bp.bv = add_const_vec(ps, base + "bv", dh, 0.0);
            bp.Wo = add_weight(ps, base + "Wo", dh, dh, rng);
            bp.bo = add_const_vec(ps, base + "bo", dh, 0.0);
            bp.ln1_gain = add_const_vec(ps, base + "ln1_gain", dh, 1.0);
            bp.ln1_shift = add_const_vec(ps, base + "ln1_shift", dh, 0.0);
            bp.W1 = add_weight(ps, base + "W1", dh, c.intermediate_size, rng);
            bp.b1 = add_const_vec(ps, base + "b1", c.intermediate_size, 0.0);
            bp.W2 = add_weight(ps, base + "W2", c.intermediate_size, dh, rng);
            bp.b2 = add_const_vec(ps, base + "b2", dh, 0.0);
            bp.ln2_gain = add_const_vec(ps, base + "ln2_gain", dh, 1.0);
            bp.ln2_shift = add_const_vec(ps, base + "ln2_shift", dh, 0.0);
            idx.blocks.push_back(bp);
        }
    }
    return idx;
}

} // namespace

TwoTower make_two_tower(const ModelConfig& config, std::uint64_t seed) {
    validate_config(config);
    TwoTower m;
    m.config = config;
    Rng rng(seed);

    Tensor E({config.vocab_size, config.embed_size});
    init_uniform(E, rng, -0.05, 0.05);
    m.E = m.params.add("E", std::move(E));

    if (config.model_type != ModelType::cloze_lstm) {
        Tensor P({config.seq_len, config.embed_size});
        init_uniform(P, rng, -0.05, 0.05);
        m.pos = m.params.add("pos", std::move(P));
        m.has_pos = true;
    }

    m.tower[0] = build_tower(m.params, "t1", config, rng);
    m.tower[1] = build_tower(m.params, "t2", config, rng);

    m.joint_W = add_weight(m.params, "joint.W", 2 * config.hidden_size,
                           config.embed_size, rng);
    m.joint_b = add_const_vec(m.params, "joint.b", config.embed_size, 0.0);
    return m;
}

namespace {

Tensor embed_input(const TwoTower& m, const Batch& batch) {
    const Tensor& E = m.params.value(m.E);
    const std::size_t de = m.config.embed_size;
    const std::size_t rows = batch.batch * batch.len;
    Tensor x({rows, de});
    const Tensor* P = m.has_pos ? &m.params.value(m.pos) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* erow = E.data() + static_cast<std::size_t>(batch.inputs[r]) * de;
        double* xr = x.data() + r * de;
        if (P) {
            const double* prow = P->data() + (r % batch.len) * de;
            for (std::size_t c = 0; c < de; ++c) xr[c] = erow[c] + prow[c];
        } else {
            std::memcpy(xr, erow, de * sizeof(double));
        }
    }
    return x;
}

void embed_backward(TwoTower& m, const Batch& batch, const Tensor& dx) {
    Tensor& dE = m.params.grad(m.E);
    const std::size_t de = m.config.embed_size;
    const std::size_t rows = batch.batch * batch.len;
    Tensor* dP = m.has_pos ? &m.params.grad(m.pos) : nullptr;
    for (std::size_t r = 0; r < rows; ++r) {
        const double* dxr = dx.data() + r * de;
        double* der = dE.data() + static_cast<std::size_t>(batch.inputs[r]) * de;
        for (std::size_t c = 0; c < de; ++c) der[c] += dxr[c];
        if (dP) {
            double* dpr = dP->data() + (r % batch.len) * de;
            for (std::size_t c = 0; c < de; ++c) dpr[c] += dxr[c];
        }
    }
}

// Rows b*L+t for all b, as a B x width matrix.
Tensor slice_time(const Tensor& x, std::size_t B, std::size_t L, std::size_t t) {
    const std::size_t w = x.dim(1);
    Tensor out({B, w});
    for (std::size_t b = 0; b < B; ++b) {
        std::memcpy(out.data() + b * w, x.data() + (b * L + t) * w, w * sizeof(double));
    }
    return out;
}

void lstm_dir_forward(const ParamSet& ps, const std::vector<LstmLayerIdx>& layers,
                      const Tensor& x0, std::size_t B, std::size_t L, std::size_t dh,
                      bool reverse, LstmDirCache& cache) {
    cache.steps.assign(layers.size(), std::vector<LstmStep>(L));
    for (std::size_t l = 0; l < layers.size(); ++l) {
        Tensor h_prev({B, dh}), c_prev({B, dh});
        for (std::size_t p = 0; p < L; ++p) {
            const std::size_t t = reverse ? L - 1 - p : p;
            Tensor xt = l == 0 ? slice_time(x0, B, L, t) : Tensor(cache.steps[l - 1][t].h);
            cache.steps[l][t] = lstm_step(xt, h_prev, c_prev, ps.value(layers[l].Wx),
                                          ps.value(layers[l].Wh), ps.value(layers[l].b));
            h_prev = cache.steps[l][t].h;
            c_prev = cache.steps[l][t].c;
        }
    }
}

// dtop: per-time gradient on the top layer's hidden output; dx0 accumulates
// the layer-0 input gradient.
void lstm_dir_backward(ParamSet& ps, const std::vector<LstmLayerIdx>& layers,
                       const LstmDirCache& cache, const Tensor& x0,
                       std::vector<Tensor>& dtop, std::size_t B, std::size_t L,
                       std::size_t dh, bool reverse, Tensor& dx0) {
    std::vector<Tensor> dcur = std::move(dtop);
    for (std::size_t li = layers.size(); li-- > 0;) {
        std::vector<Tensor> dbelow;
        if (li > 0) {
            dbelow.assign(L, Tensor({B, dh}));
        }
        Tensor dh_carry({B, dh}), dc_carry({B, dh});
        Tensor zero({B, dh});
        for (std::size_t p = L; p-- > 0;) {
            const std::size_t t = reverse ? L - 1 - p : p;
            Tensor dh_total = dcur[t];
            for (std::size_t i = 0; i < dh_total.size(); ++i) dh_total[i] += dh_carry[i];
            const std::size_t t_prev = reverse ? t + 1 : t - 1;
            const bool has_prev = p > 0;
            const Tensor& h_prev = has_prev ? cache.steps[li][t_prev].h : zero;
            const Tensor& c_prev = has_prev ? cache.steps[li][t_prev].c : zero;
            Tensor xt = li == 0 ? slice_time(x0, B, L, t) : Tensor(cache.steps[li - 1][t].h);
            auto g = lstm_step_backward(cache.steps[li][t], dh_total, dc_carry, xt, h_prev,
                                        c_prev, ps.value(layers[li].Wx),
                                        ps.value(layers[li].Wh), ps.grad(layers[li].Wx),
                                        ps.grad(layers[li].Wh), ps.grad(layers[li].b));
            dh_carry = std::move(g.dh_prev);
            dc_carry = std::move(g.dc_prev);
            if (li == 0) {
                const std::size_t w = dx0.dim(1);
                for (std::size_t b = 0; b < B; ++b) {
                    double* dst = dx0.data() + (b * L + t) * w;
                    const double* src = g.dx.data() + b * w;
                    for (std::size_t c = 0; c < w; ++c) dst[c] += src[c];
                }
            } else {
                for (std::size_t i = 0; i < g.dx.size(); ++i) dbelow[t][i] += g.dx[i];
            }
        }
        if (li > 0) dcur = std::move(dbelow);
    }
}

void check_task(const TwoTower& m, const Batch& batch) {
    if (batch.task != task_for(m.config.model_type)) {
        throw std::invalid_argument("task mismatch: batch is " + task_name(batch.task) +
                                    ", model " + model_type_name(m.config.model_type) +
                                    " expects " + task_name(task_for(m.config.model_type)));
    }
    if (batch.len != m.config.seq_len) {
        throw std::invalid_argument("batch seq_len " + std::to_string(batch.len) +
                                    " does not match model seq_len " +
                                    std::to_string(m.config.seq_len));
    }
}

} // namespace

Tensor encode_tower(const TwoTower& m, int tower, const Batch& batch, TowerCache* cache) {
    if (tower != 1 && tower != 2) throw std::invalid_argument("tower must be 1 or 2");
    check_task(m, batch);
    const TowerIdx& idx = m.tower[tower - 1];
    const std::size_t B = batch.batch, L = batch.len, dh = m.config.hidden_size;

    TowerCache local;
    TowerCache& cc = cache ? *cache : local;
    cc.x0 = embed_input(m, batch);

    if (m.config.model_type == ModelType::cloze_lstm) {
        lstm_dir_forward(m.params, idx.fwd, cc.x0, B, L, dh, false, cc.fwd);
        lstm_dir_forward(m.params, idx.bwd, cc.x0, B, L, dh, true, cc.bwd);
        // The hidden that scores position t must not see token t: take the
        // forward state after t-1 and the backward state after t+1.
        cc.comb_in = Tensor({B * L, 2 * dh});
        const auto& ftop = cc.fwd.steps.back();
        const auto& btop = cc.bwd.steps.back();
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t t = 0; t < L; ++t) {
                double* row = cc.comb_in.data() + (b * L + t) * 2 * dh;
                if (t > 0) {
                    std::memcpy(row, ftop[t - 1].h.data() + b * dh, dh * sizeof(double));
                }
                if (t + 1 < L) {
                    std::memcpy(row + dh, btop[t + 1].h.data() + b * dh,
                                dh * sizeof(double));
                }
            }
        }
        cc.hidden = affine(cc.comb_in, m.params.value(idx.comb_W), m.params.value(idx.comb_b));
    } else {
        const bool causal = m.config.model_type == ModelType::causal_tfm;
        cc.xin = affine(cc.x0, m.params.value(idx.in_W), m.params.value(idx.in_b));
        cc.blocks.assign(idx.blocks.size(), BlockCache{});
        Tensor y = cc.xin;
        for (std::size_t l = 0; l < idx.blocks.size(); ++l) {
            y = attention_block(m.params, idx.blocks[l], y, B, L, m.config.heads, causal,
                                &cc.blocks[l]);
        }
        cc.hidden = std::move(y);
    }
    return cc.hidden;
}

namespace {

// Gradient of one tower's encoder; dhidden is (B*L) x d_h, zero on unscored
// rows. Adds into parameter grads and the shared embedding/positional grads.
void encode_tower_backward(TwoTower& m, int tower, const Batch& batch,
                           const TowerCache& cc, const Tensor& dhidden) {
    const TowerIdx& idx = m.tower[tower - 1];
    const std::size_t B = batch.batch, L = batch.len, dh = m.config.hidden_size;
    Tensor dx0({B * L, m.config.embed_size});

    if (m.config.model_type == ModelType::cloze_lstm) {
        Tensor dcomb_in({B * L, 2 * dh});
        affine_backward(dhidden, cc.comb_in, m.params.value(idx.comb_W), &dcomb_in,
                        m.params.grad(idx.comb_W), m.params.grad(idx.comb_b));
        std::vector<Tensor> dftop(L, Tensor({B, dh})), dbtop(L, Tensor({B, dh}));
        for (std::size_t b = 0; b < B; ++b) {
            for (std::size_t t = 0; t < L; ++t) {
                const double* row = dcomb_in.data() + (b * L + t) * 2 * dh;
                if (t > 0) {
                    double* dst = dftop[t - 1].data() + b * dh;
                    for (std::size_t c = 0; c < dh; ++c) dst[c] += row[c];
                }
                if (t + 1 < L) {
                    double* dst = dbtop[t + 1].data() + b * dh;
                    for (std::size_t c = 0; c < dh; ++c) dst[c] += row[dh + c];
                }
            }
        }
        lstm_dir_backward(m.params, idx.fwd, cc.fwd, cc.x0, dftop, B, L, dh, false, dx0);
        lstm_dir_backward(m.params, idx.bwd, cc.bwd, cc.x0, dbtop, B, L, dh, true, dx0);
    } else {
        const bool causal = m.config.model_type == ModelType::causal_tfm;
        Tensor dy = dhidden;
        for (std::size_t l = idx.blocks.size(); l-- > 0;) {
            dy = attention_block_backward(m.params, idx.blocks[l], cc.blocks[l], dy, B, L,
                                          m.config.heads, causal);
        }
        affine_backward(dy, cc.x0, m.params.value(idx.in_W), &dx0,
                        m.params.grad(idx.in_W), m.params.grad(idx.in_b));
    }
    embed_backward(m, batch, dx0);
}

struct JointCache {
    TowerCache t1, t2;
    std::vector<std::size_t> rows;
    std::vector<int> targets;
    Tensor h1s, h2s;   // scored rows x d_h
    Tensor proj;       // scored rows x d_e
    SoftmaxXent sx;
};

Tensor select_rows(const Tensor& x, const std::vector<std::size_t>& rows) {
    const std::size_t w = x.dim(1);
    Tensor out({rows.size(), w});
    for (std::size_t i = 0; i < rows.size(); ++i) {
        std::memcpy(out.data() + i * w, x.data() + rows[i] * w, w * sizeof(double));
    }
    return out;
}

void joint_forward(const TwoTower& m, const Batch& batch, JointCache& jc) {
    encode_tower(m, 1, batch, &jc.t1);
    encode_tower(m, 2, batch, &jc.t2);
    jc.rows = scored_rows(batch);
    if (jc.rows.empty()) throw std::invalid_argument("no scorable positions");
    jc.targets.resize(jc.rows.size());
    for (std::size_t i = 0; i < jc.rows.size(); ++i) {
        jc.targets[i] = batch.targets[jc.rows[i]];
    }
    const std::size_t S = jc.rows.size(), dh = m.config.hidden_size;
    const std::size_t de = m.config.embed_size, V = m.config.vocab_size;
    jc.h1s = select_rows(jc.t1.hidden, jc.rows);
    jc.h2s = select_rows(jc.t2.hidden, jc.rows);

    // The two tower contributions are reduced independently and combined with
    // one addition, so swapping towers (with the matching halves of joint.W)
    // is bitwise neutral.
    const Tensor& W = m.params.value(m.joint_W);
    Tensor projA({S, de}), projB({S, de});
    kern::matmul_nn(projA.data(), jc.h1s.data(), W.data(), S, dh, de);
    kern::matmul_nn(projB.data(), jc.h2s.data(), W.data() + dh * de, S, dh, de);
    jc.proj = Tensor({S, de});
    for (std::size_t i = 0; i < jc.proj.size(); ++i) jc.proj[i] = projA[i] + projB[i];
    kern::add_row_vector(jc.proj.data(), m.params.value(m.joint_b).data(), S, de);

    Tensor logits({S, V});
    kern::matmul_nt(logits.data(), jc.proj.data(), m.params.value(m.E).data(), S, de, V);
    for (std::size_t i = 0; i < S; ++i) logits.at(i, kPadId) = kBannedLogit;
    jc.sx = softmax_xent(logits, jc.targets, std::vector<std::uint8_t>(S, 1));
}

} // namespace

std::vector<std::size_t> scored_rows(const Batch& batch) {
    std::vector<std::size_t> rows;
    for (std::size_t r = 0; r < batch.score_mask.size(); ++r) {
        if (batch.score_mask[r]) rows.push_back(r);
    }
    return rows;
}

TwoTowerOut two_tower_forward(const TwoTower& m, const Batch& batch) {
    JointCache jc;
    joint_forward(m, batch, jc);
    TwoTowerOut out;
    out.loss = jc.sx.loss;
    out.probs = std::move(jc.sx.probs);
    out.targets = std::move(jc.targets);
    out.rows = std::move(jc.rows);
    return out;
}

double two_tower_grad(TwoTower& m, const Batch& batch) {
    JointCache jc;
    joint_forward(m, batch, jc);
    const std::size_t S = jc.rows.size(), dh = m.config.hidden_size;
    const std::size_t de = m.config.embed_size, V = m.config.vocab_size;

    Tensor dlogits({S, V});
    softmax_xent_backward(jc.sx, jc.targets, std::vector<std::uint8_t>(S, 1), dlogits);

    // logits = proj * E^T: gradients flow to the projection and, through the
    // tie, to the embedding.
    Tensor dproj({S, de});
    kern::matmul_nn(dproj.data(), dlogits.data(), m.params.value(m.E).data(), S, V, de);
    kern::matmul_tn(m.params.grad(m.E).data(), dlogits.data(), jc.proj.data(), V, S, de,
                    true);

    const Tensor& W = m.params.value(m.joint_W);
    Tensor& dW = m.params.grad(m.joint_W);
    kern::column_sums(m.params.grad(m.joint_b).data(), dproj.data(), S, de);
    kern::matmul_tn(dW.data(), jc.h1s.data(), dproj.data(), dh, S, de, true);
    kern::matmul_tn(dW.data() + dh * de, jc.h2s.data(), dproj.data(), dh, S, de, true);

    Tensor dh1s({S, dh}), dh2s({S, dh});
    kern::matmul_nt(dh1s.data(), dproj.data(), W.data(), S, de, dh);
    kern::matmul_nt(dh2s.data(), dproj.data(), W.data() + dh * de, S, de, dh);

    const std::size_t rows_all = batch.batch * batch.len;
    Tensor dh1({rows_all, dh}), dh2({rows_all, dh});
    for (std::size_t i = 0; i < S; ++i) {
        std::memcpy(dh1.data() + jc.rows[i] * dh, dh1s.data() + i * dh, dh * sizeof(double));
        std::memcpy(dh2.data() + jc.rows[i] * dh, dh2s.data() + i * dh, dh * sizeof(double));
    }
    encode_tower_backward(m, 1, batch, jc.t1, dh1);
    encode_tower_backward(m, 2, batch, jc.t2, dh2);
    return jc.sx.loss;
}

TowerHeads make_tower_heads(const ModelConfig& config, std::uint64_t seed) {
    TowerHeads h;
    Rng rng(seed);
    h.W1 = add_weight(h.params, "head1.W", config.hidden_size, config.embed_size, rng);
    h.b1 = add_const_vec(h.params, "head1.b", config.embed_size, 0.0);
    h.W2 = add_weight(h.params, "head2.W", config.hidden_size, config.embed_size, rng);
    h.b2 = add_const_vec(h.params, "head2.b", config.embed_size, 0.0);
    return h;
}

namespace {

struct HeadSide {
    Tensor hs;   // scored rows x d_h
    Tensor proj; // scored rows x d_e
    SoftmaxXent sx;
};

HeadSide head_side_forward(const Tensor& h, const std::vector<std::size_t>& rows,
                           const std::vector<int>& targets, const Tensor& Wh,
                           const Tensor& bh, const Tensor& E) {
    HeadSide side;
    side.hs = select_rows(h, rows);
    side.proj = affine(side.hs, Wh, bh);
    const std::size_t S = rows.size(), de = E.dim(1), V = E.dim(0);
    Tensor logits({S, V});
    kern::matmul_nt(logits.data(), side.proj.data(), E.data(), S, de, V);
    for (std::size_t i = 0; i < S; ++i) logits.at(i, kPadId) = kBannedLogit;
    side.sx = softmax_xent(logits, targets, std::vector<std::uint8_t>(S, 1));
    return side;
}

} // namespace

HeadsOut tower_head_forward(const TowerHeads& heads, const Tensor& h1, const Tensor& h2,
                            const Tensor& E, const Batch& batch) {
    if (h1.rank() != 2 || !h1.same_shape(h2) || h1.dim(1) != heads.params.value(heads.W1).dim(0)) {
        throw std::invalid_argument("tower_head_forward shape mismatch: h1 " +
                                    shape_str(h1.shape()) + " vs h2 " + shape_str(h2.shape()));
    }
    HeadsOut out;
    out.rows = scored_rows(batch);
    if (out.rows.empty()) throw std::invalid_argument("no scorable positions");
    out.targets.resize(out.rows.size());
    for (std::size_t i = 0; i < out.rows.size(); ++i) {
        out.targets[i] = batch.targets[out.rows[i]];
    }
    auto s1 = head_side_forward(h1, out.rows, out.targets, heads.params.value(heads.W1),
                                heads.params.value(heads.b1), E);
    auto s2 = head_side_forward(h2, out.rows, out.targets, heads.params.value(heads.W2),
                                heads.params.value(heads.b2), E);
    out.loss1 = s1.sx.loss;
    out.loss2 = s2.sx.loss;
    out.p1 = std::move(s1.sx.probs);
    out.p2 = std::move(s2.sx.probs);
    return out;
}

HeadLosses tower_heads_grad(TowerHeads& heads, const Tensor& h1, const Tensor& h2,
                            const Tensor& E, const Batch& batch) {
    const auto rows = scored_rows(batch);
    if (rows.empty()) throw std::invalid_argument("no scorable positions");
    std::vector<int> targets(rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) targets[i] = batch.targets[rows[i]];
    const std::vector<std::uint8_t> ones(rows.size(), 1);
    const std::size_t S = rows.size(), de = E.dim(1), V = E.dim(0);

    HeadLosses losses;
    const std::size_t widx[2] = {heads.W1, heads.W2};
    const std::size_t bidx[2] = {heads.b1, heads.b2};
    const Tensor* hs[2] = {&h1, &h2};
    for (int side = 0; side < 2; ++side) {
        auto fwd = head_side_forward(*hs[side], rows, targets, heads.params.value(widx[side]),
                                     heads.params.value(bidx[side]), E);
        (side == 0 ? losses.loss1 : losses.loss2) = fwd.sx.loss;
        Tensor dlogits({S, V});
        softmax_xent_backward(fwd.sx, targets, ones, dlogits);
        Tensor dproj({S, de});
        kern::matmul_nn(dproj.data(), dlogits.data(), E.data(), S, V, de);
        // The trunk and the embedding are frozen in phase 2: no gradient past
        // the head affine.
        affine_backward(dproj, fwd.hs, heads.params.value(widx[side]), nullptr,
                        heads.params.grad(widx[side]), heads.params.grad(bidx[side]));
    }
    return losses;
}

void append_position_scores(const TwoTower& m, const TowerHeads& heads, const Batch& batch,
                            std::vector<PositionScore>& out) {
    Tensor h1 = encode_tower(m, 1, batch);
    Tensor h2 = encode_tower(m, 2, batch);
    auto ho = tower_head_forward(heads, h1, h2, m.params.value(m.E), batch);
    for (std::size_t i = 0; i < ho.targets.size(); ++i) {
        PositionScore s;
        s.target = ho.targets[i];
        s.p1 = ho.p1.at(i, static_cast<std::size_t>(ho.targets[i]));
        s.p2 = ho.p2.at(i, static_cast<std::size_t>(ho.targets[i]));
        out.push_back(s);
    }
}

} // namespace twintower
