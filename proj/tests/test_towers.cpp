#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include "twintower/model.hpp"
#include "twintower/rng.hpp"

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

using namespace twintower;

namespace {

bool bitwise_equal(const Tensor& a, const Tensor& b) {
    if (!a.same_shape(b)) return false;
    return std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
}

bool row_bitwise_equal(const Tensor& a, const Tensor& b, std::size_t row) {
    return std::memcmp(a.data() + row * a.dim(1), b.data() + row * b.dim(1),
                       a.dim(1) * sizeof(double)) == 0;
}

ModelConfig tiny_config(ModelType type) {
    ModelConfig c;
    c.model_type = type;
    c.layers = 2;
    c.hidden_size = 8;
    c.embed_size = 8;
    c.heads = 2;
    c.intermediate_size = 16;
    c.vocab_size = 23;
    c.seq_len = 10;
    c.mask_rate = 0.3;
    return c;
}

// Random batch with in-range non-special input ids; targets/mask per task.
Batch random_batch(const ModelConfig& c, std::uint64_t seed) {
    Batch b;
    b.batch = 3;
    b.len = c.seq_len;
    b.task = task_for(c.model_type);
    Rng rng(seed);
    const std::size_t n = b.batch * b.len;
    b.inputs.resize(n);
    b.targets.assign(n, kPadId);
    b.score_mask.assign(n, 0);
    for (auto& id : b.inputs) {
        id = static_cast<int>(kNumSpecials + rng.below(c.vocab_size - kNumSpecials));
    }
    if (b.task == TaskKind::causal) {
        for (std::size_t s = 0; s < b.batch; ++s) {
            for (std::size_t t = 0; t + 1 < b.len; ++t) {
                b.targets[s * b.len + t] = b.inputs[s * b.len + t + 1];
                b.score_mask[s * b.len + t] = 1;
            }
        }
    } else if (b.task == TaskKind::cloze) {
        b.targets = b.inputs;
        b.score_mask.assign(n, 1);
    } else {
        // mlm: mask a third of each sequence
        for (std::size_t s = 0; s < b.batch; ++s) {
            for (std::size_t t = 0; t < b.len; t += 3) {
                const std::size_t r = s * b.len + t;
                b.targets[r] = b.inputs[r];
                b.inputs[r] = kMaskId;
                b.score_mask[r] = 1;
            }
        }
    }
    return b;
}

int fresh_id(const ModelConfig& c, int old_id, Rng& rng) {
    int id = old_id;
    while (id == old_id) {
        id = static_cast<int>(kNumSpecials + rng.below(c.vocab_size - kNumSpecials));
    }
    return id;
}

void swap_towers(TwoTower& m) {
    for (std::size_t i = 0; i < m.params.size(); ++i) {
        const std::string& name = m.params.name(i);
        if (name.rfind("t1.", 0) != 0) continue;
        const std::size_t j = m.params.index_of("t2." + name.substr(3));
        std::swap(m.params.value(i), m.params.value(j));
    }
    // halves of the joint projection travel with their towers
    Tensor& W = m.params.value(m.joint_W);
    const std::size_t dh = m.config.hidden_size;
    const std::size_t de = m.config.embed_size;
    for (std::size_t r = 0; r < dh; ++r) {
        for (std::size_t cidx = 0; cidx < de; ++cidx) {
            std::swap(W.at(r, cidx), W.at(r + dh, cidx));
        }
    }
}

} // namespace

TEST_CASE("presets validate and map to the right task") {
    for (const auto& name : preset_names()) {
        ModelConfig c = preset_config(name);
        c.vocab_size = 100;
        CHECK_NOTHROW(validate_config(c));
    }
    CHECK(preset_config("elmo").model_type == ModelType::cloze_lstm);
    CHECK(preset_config("gpt").model_type == ModelType::causal_tfm);
    CHECK(preset_config("bert-base").model_type == ModelType::mlm_tfm);
    CHECK(preset_config("bert-large").model_type == ModelType::mlm_tfm);
    CHECK(preset_config("bert-large").layers > preset_config("bert-base").layers);
    CHECK_THROWS_WITH(preset_config("nope"), doctest::Contains("unknown preset"));
}

TEST_CASE("config validation rejects bad dimensions") {
    ModelConfig c = tiny_config(ModelType::causal_tfm);
    c.hidden_size = 0;
    CHECK_THROWS_WITH(validate_config(c), doctest::Contains("positive"));
    c = tiny_config(ModelType::causal_tfm);
    c.heads = 3;
    CHECK_THROWS_WITH(validate_config(c), doctest::Contains("divisible"));
    c = tiny_config(ModelType::mlm_tfm);
    c.vocab_size = 2;
    CHECK_THROWS_WITH(validate_config(c), doctest::Contains("vocab too small"));
    c = tiny_config(ModelType::cloze_lstm);
    c.seq_len = 1;
    CHECK_THROWS_WITH(validate_config(c), doctest::Contains("seq_len"));
    c = tiny_config(ModelType::mlm_tfm);
    c.mask_rate = 0.0;
    CHECK_THROWS_WITH(validate_config(c), doctest::Contains("mask_rate"));
}

TEST_CASE("task or shape mismatch between batch and model is an error") {
    const ModelConfig c = tiny_config(ModelType::causal_tfm);
    const TwoTower m = make_two_tower(c, 7);
    Batch b = random_batch(tiny_config(ModelType::cloze_lstm), 1);
    CHECK_THROWS_WITH(two_tower_forward(m, b), doctest::Contains("task mismatch"));
    b = random_batch(c, 1);
    b.len = 5;
    b.inputs.resize(b.batch * b.len);
    b.targets.resize(b.batch * b.len);
    b.score_mask.resize(b.batch * b.len);
    CHECK_THROWS_WITH(two_tower_forward(m, b), doctest::Contains("seq_len"));
    const Batch ok = random_batch(c, 1);
    CHECK_THROWS_WITH(encode_tower(m, 3, ok), doctest::Contains("tower"));
}

TEST_CASE("scored probability rows are distributions with [PAD] banned") {
    for (const ModelType type :
         {ModelType::cloze_lstm, ModelType::causal_tfm, ModelType::mlm_tfm}) {
        const ModelConfig c = tiny_config(type);
        const TwoTower m = make_two_tower(c, 11);
        const Batch b = random_batch(c, 21);
        const TwoTowerOut out = two_tower_forward(m, b);
        REQUIRE(out.probs.dim(0) == scored_rows(b).size());
        for (std::size_t r = 0; r < out.probs.dim(0); ++r) {
            double sum = 0.0;
            for (std::size_t v = 0; v < c.vocab_size; ++v) sum += out.probs.at(r, v);
            CHECK(std::fabs(sum - 1.0) < 1e-9);
            CHECK(out.probs.at(r, kPadId) == 0.0);
        }
        CHECK(std::isfinite(out.loss));
    }
}

TEST_CASE("causal visibility: scored rows see only strictly earlier tokens") {
    const ModelConfig c = tiny_config(ModelType::causal_tfm);
    const TwoTower m = make_two_tower(c, 31);
    const Batch base = random_batch(c, 41);
    const Tensor h_base = encode_tower(m, 1, base);
    const TwoTowerOut out_base = two_tower_forward(m, base);
    Rng rng(51);
    for (int trial = 0; trial < 100; ++trial) {
        Batch mod = base;
        const std::size_t s = rng.below(base.batch);
        const std::size_t j = rng.below(base.len);
        const std::size_t flat = s * base.len + j;
        mod.inputs[flat] = fresh_id(c, mod.inputs[flat], rng);
        if (j >= 1) mod.targets[flat - 1] = mod.inputs[flat];
        const Tensor h_mod = encode_tower(m, 1, mod);
        const TwoTowerOut out_mod = two_tower_forward(m, mod);
        // hidden rows before the edit are bitwise untouched; rows at or after
        // it may change
        for (std::size_t ss = 0; ss < base.batch; ++ss) {
            for (std::size_t t = 0; t < base.len; ++t) {
                if (ss != s || t < j) {
                    CHECK(row_bitwise_equal(h_base, h_mod, ss * base.len + t));
                }
            }
        }
        // scored distribution for every target position i <= j is untouched;
        // row b*len+t scores position t+1
        REQUIRE(out_base.rows == out_mod.rows);
        for (std::size_t k = 0; k < out_base.rows.size(); ++k) {
            const std::size_t row = out_base.rows[k];
            const std::size_t ss = row / base.len;
            const std::size_t t = row % base.len;
            if (ss != s || t + 1 <= j) {
                CHECK(row_bitwise_equal(out_base.probs, out_mod.probs, k));
            }
        }
    }
}

TEST_CASE("cloze visibility: position never sees its own token") {
    const ModelConfig c = tiny_config(ModelType::cloze_lstm);
    const TwoTower m = make_two_tower(c, 61);
    const Batch base = random_batch(c, 71);
    const Tensor h_base = encode_tower(m, 2, base);
    const TwoTowerOut out_base = two_tower_forward(m, base);
    Rng rng(81);
    for (int trial = 0; trial < 100; ++trial) {
        Batch mod = base;
        const std::size_t s = rng.below(base.batch);
        const std::size_t t = rng.below(base.len);
        const std::size_t flat = s * base.len + t;
        mod.inputs[flat] = fresh_id(c, mod.inputs[flat], rng);
        mod.targets[flat] = mod.inputs[flat];
        const Tensor h_mod = encode_tower(m, 2, mod);
        const TwoTowerOut out_mod = two_tower_forward(m, mod);
        CHECK(row_bitwise_equal(h_base, h_mod, flat));
        REQUIRE(out_base.rows == out_mod.rows);
        for (std::size_t k = 0; k < out_base.rows.size(); ++k) {
            if (out_base.rows[k] == flat) {
                CHECK(row_bitwise_equal(out_base.probs, out_mod.probs, k));
            }
        }
    }
}

TEST_CASE("mlm visibility: masked positions are independent of pre-mask ids") {
    const ModelConfig c = tiny_config(ModelType::mlm_tfm);
    const TwoTower m = make_two_tower(c, 91);
    const Batch base = random_batch(c, 101);
    const TwoTowerOut out_base = two_tower_forward(m, base);
    Rng rng(111);
    for (int trial = 0; trial < 100; ++trial) {
        Batch mod = base;
        // rewrite the recorded original token at a masked position; the input
        // side stays [MASK], so every distribution must be bitwise unchanged
        std::vector<std::size_t> masked = scored_rows(base);
        const std::size_t flat = masked[rng.below(masked.size())];
        mod.targets[flat] = fresh_id(c, mod.targets[flat], rng);
        const TwoTowerOut out_mod = two_tower_forward(m, mod);
        CHECK(bitwise_equal(out_base.probs, out_mod.probs));
    }
}

TEST_CASE("swapping towers and joint projection halves is bitwise neutral") {
    for (const ModelType type :
         {ModelType::cloze_lstm, ModelType::causal_tfm, ModelType::mlm_tfm}) {
        const ModelConfig c = tiny_config(type);
        TwoTower m = make_two_tower(c, 121);
        const Batch b = random_batch(c, 131);
        const TwoTowerOut before = two_tower_forward(m, b);
        swap_towers(m);
        const TwoTowerOut after = two_tower_forward(m, b);
        CHECK(std::memcmp(&before.loss, &after.loss, sizeof(double)) == 0);
        CHECK(bitwise_equal(before.probs, after.probs));
    }
}

TEST_CASE("towers start from different draws and E ties input to output") {
    const ModelConfig c = tiny_config(ModelType::causal_tfm);
    TwoTower m = make_two_tower(c, 141);
    const std::size_t w1 = m.params.index_of("t1.in.W");
    const std::size_t w2 = m.params.index_of("t2.in.W");
    CHECK_FALSE(bitwise_equal(m.params.value(w1), m.params.value(w2)));

    const Batch b = random_batch(c, 151);
    const TwoTowerOut before = two_tower_forward(m, b);
    // bump one embedding row that occurs in the batch
    m.params.value(m.E).at(static_cast<std::size_t>(b.inputs[0]), 0) += 0.25;
    const TwoTowerOut after = two_tower_forward(m, b);
    CHECK_FALSE(bitwise_equal(before.probs, after.probs));
}

TEST_CASE("joint loss matches the hand-evaluated tiny case") {
    // Tiny cloze model, all recurrent weights zero: every LSTM hidden is
    // exactly 0 (sigmoid(0)=1/2, tanh(0)=0), so each tower's output is its
    // combiner bias. Towers emit (1,0) and (0,1); the joint projection routes
    // them to (1.5, 0.5) with its bias. Embeddings (1,1) / (-1,1) give logits
    // 2 and -1 over the two live ids, [PAD] banned.
    ModelConfig c;
    c.model_type = ModelType::cloze_lstm;
    c.layers = 1;
    c.hidden_size = 2;
    c.embed_size = 2;
    c.heads = 1;
    c.intermediate_size = 1;
    c.vocab_size = 3;
    c.seq_len = 2;
    TwoTower m = make_two_tower(c, 0);
    for (std::size_t i = 0; i < m.params.size(); ++i) m.params.value(i).fill(0.0);
    Tensor& E = m.params.value(m.E);
    E.at(0, 0) = 1.0;  E.at(0, 1) = 1.0;
    E.at(1, 0) = -1.0; E.at(1, 1) = 1.0;
    E.at(2, 0) = 7.0;  E.at(2, 1) = 7.0; // banned row, value must not matter
    Tensor& b1 = m.params.value(m.params.index_of("t1.comb.b"));
    b1[0] = 1.0; b1[1] = 0.0;
    Tensor& b2 = m.params.value(m.params.index_of("t2.comb.b"));
    b2[0] = 0.0; b2[1] = 1.0;
    Tensor& W = m.params.value(m.joint_W); // 4x2: rows 0-1 tower 1, 2-3 tower 2
    W.at(0, 0) = 1.0;
    W.at(3, 1) = 1.0;
    Tensor& jb = m.params.value(m.joint_b);
    jb[0] = 0.5; jb[1] = -0.5;

    Batch b;
    b.batch = 1;
    b.len = 2;
    b.task = TaskKind::cloze;
    b.inputs = {0, 1};
    b.targets = {0, 1};
    b.score_mask = {1, 1};

    const TwoTowerOut out = two_tower_forward(m, b);
    CHECK(out.probs.at(0, 0) == doctest::Approx(0.95257412682243336).epsilon(1e-12));
    CHECK(out.probs.at(0, 1) == doctest::Approx(0.047425873177566781).epsilon(1e-12));
    CHECK(out.probs.at(0, 2) == 0.0);
    // both positions share the same hiddens, so the two rows coincide
    CHECK(std::memcmp(out.probs.data(), out.probs.data() + out.probs.dim(1),
                      out.probs.dim(1) * sizeof(double)) == 0);
    CHECK(out.loss == doctest::Approx(1.5485873515737421).epsilon(1e-12));
}

TEST_CASE("per-tower head distributions match the hand-evaluated tiny case") {
    ModelConfig c;
    c.model_type = ModelType::cloze_lstm;
    c.layers = 1;
    c.hidden_size = 2;
    c.embed_size = 2;
    c.heads = 1;
    c.intermediate_size = 1;
    c.vocab_size = 3;
    c.seq_len = 2;
    TowerHeads heads = make_tower_heads(c, 0);
    for (std::size_t i = 0; i < heads.params.size(); ++i) {
        heads.params.value(i).fill(0.0);
    }
    // both heads are the identity map
    heads.params.value(heads.W1).at(0, 0) = 1.0;
    heads.params.value(heads.W1).at(1, 1) = 1.0;
    heads.params.value(heads.W2).at(0, 0) = 1.0;
    heads.params.value(heads.W2).at(1, 1) = 1.0;

    Tensor E({3, 2});
    E.at(0, 0) = 1.0;  E.at(0, 1) = 1.0;
    E.at(1, 0) = -1.0; E.at(1, 1) = 1.0;

    Batch b;
    b.batch = 1;
    b.len = 2;
    b.task = TaskKind::cloze;
    b.inputs = {0, 1};
    b.targets = {0, 1};
    b.score_mask = {1, 1};

    Tensor h1({2, 2}), h2({2, 2});
    h1.at(0, 0) = 1.0; h1.at(1, 0) = 1.0; // tower 1 emits (1,0) everywhere
    h2.at(0, 1) = 1.0; h2.at(1, 1) = 1.0; // tower 2 emits (0,1)

    const HeadsOut out = tower_head_forward(heads, h1, h2, E, b);
    // tower 1 logits (1,-1): sharp; tower 2 logits (1,1): uniform on live ids
    CHECK(out.p1.at(0, 0) == doctest::Approx(0.88079707797788231).epsilon(1e-12));
    CHECK(out.p1.at(0, 1) == doctest::Approx(0.11920292202211755).epsilon(1e-12));
    CHECK(out.p2.at(0, 0) == 0.5);
    CHECK(out.p2.at(0, 1) == 0.5);
    CHECK(out.p1.at(0, 2) == 0.0);
    CHECK(out.p2.at(0, 2) == 0.0);
    CHECK(out.loss1 == doctest::Approx(1.1269280110429727).epsilon(1e-12));
    CHECK(out.loss2 == doctest::Approx(0.69314718055994529).epsilon(1e-12));

    // identical heads and identical hiddens collapse the two distributions
    const HeadsOut same = tower_head_forward(heads, h1, h1, E, b);
    CHECK(bitwise_equal(same.p1, same.p2));
}

TEST_CASE("head rows are distributions and shape mismatches are rejected") {
    const ModelConfig c = tiny_config(ModelType::mlm_tfm);
    const TwoTower m = make_two_tower(c, 161);
    const TowerHeads heads = make_tower_heads(c, 171);
    const Batch b = random_batch(c, 181);
    const Tensor h1 = encode_tower(m, 1, b);
    const Tensor h2 = encode_tower(m, 2, b);
    const HeadsOut out =
        tower_head_forward(heads, h1, h2, m.params.value(m.E), b);
    for (std::size_t r = 0; r < out.p1.dim(0); ++r) {
        double s1 = 0.0, s2 = 0.0;
        for (std::size_t v = 0; v < c.vocab_size; ++v) {
            s1 += out.p1.at(r, v);
            s2 += out.p2.at(r, v);
        }
        CHECK(std::fabs(s1 - 1.0) < 1e-9);
        CHECK(std::fabs(s2 - 1.0) < 1e-9);
    }

    Tensor bad({3, c.hidden_size});
    CHECK_THROWS_WITH(tower_head_forward(heads, bad, h2, m.params.value(m.E), b),
                      doctest::Contains("shape mismatch"));
}

namespace {

// Central differences with a hybrid bound: tiny gradients (the key bias is
// softmax-shift-invariant, so its gradient is identically zero) are held to
// an absolute floor instead of a relative one.
std::size_t count_grad_mismatches(const std::function<double()>& loss_fn,
                                  ParamSet& ps) {
    std::size_t bad = 0;
    const double eps = 1e-5;
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Tensor& v = ps.value(i);
        const Tensor& g = ps.grad(i);
        for (std::size_t e = 0; e < v.size(); ++e) {
            const double saved = v[e];
            v[e] = saved + eps;
            const double up = loss_fn();
            v[e] = saved - eps;
            const double down = loss_fn();
            v[e] = saved;
            const double numeric = (up - down) / (2.0 * eps);
            const double a = g[e];
            if (std::fabs(a - numeric) >
                1e-6 + 1e-4 * (std::fabs(a) + std::fabs(numeric))) {
                ++bad;
            }
        }
    }
    return bad;
}

// healthy parameter scales so attention is non-uniform and gradients carry
// real signal end to end
void wake_params(ParamSet& ps, std::uint64_t seed) {
    Rng rng(seed);
    for (std::size_t i = 0; i < ps.size(); ++i) {
        Tensor& t = ps.value(i);
        const bool is_gain = ps.name(i).size() >= 4 &&
                             ps.name(i).rfind("gain") == ps.name(i).size() - 4;
        for (std::size_t e = 0; e < t.size(); ++e) {
            t[e] = rng.normal(0.0, 0.3) + (is_gain ? 1.0 : 0.0);
        }
    }
}

} // namespace

TEST_CASE("full-model analytic gradients match central differences") {
    for (const ModelType type :
         {ModelType::cloze_lstm, ModelType::causal_tfm, ModelType::mlm_tfm}) {
        ModelConfig c;
        c.model_type = type;
        c.layers = 2;
        c.hidden_size = 4;
        c.embed_size = 4;
        c.heads = 2;
        c.intermediate_size = 8;
        c.vocab_size = 7;
        c.seq_len = 5;
        c.mask_rate = 0.4;
        TwoTower m = make_two_tower(c, 221);
        wake_params(m.params, 401);
        const Batch b = random_batch(c, 231);

        m.params.zero_grads();
        two_tower_grad(m, b);
        const std::size_t bad = count_grad_mismatches(
            [&] { return two_tower_forward(m, b).loss; }, m.params);
        CHECK(bad == 0);
    }
}

TEST_CASE("head analytic gradients match central differences") {
    const ModelConfig c = tiny_config(ModelType::causal_tfm);
    const TwoTower m = make_two_tower(c, 241);
    TowerHeads heads = make_tower_heads(c, 251);
    wake_params(heads.params, 402);
    const Batch b = random_batch(c, 261);
    const Tensor h1 = encode_tower(m, 1, b);
    const Tensor h2 = encode_tower(m, 2, b);
    const Tensor& E = m.params.value(m.E);

    heads.params.zero_grads();
    tower_heads_grad(heads, h1, h2, E, b);
    const std::size_t bad = count_grad_mismatches(
        [&] {
            const HeadsOut out = tower_head_forward(heads, h1, h2, E, b);
            return out.loss1 + out.loss2;
        },
        heads.params);
    CHECK(bad == 0);
}

TEST_CASE("position scores report each head's correct-token probability") {
    const ModelConfig c = tiny_config(ModelType::causal_tfm);
    const TwoTower m = make_two_tower(c, 191);
    const TowerHeads heads = make_tower_heads(c, 201);
    const Batch b = random_batch(c, 211);
    std::vector<PositionScore> scores;
    append_position_scores(m, heads, b, scores);

    const Tensor h1 = encode_tower(m, 1, b);
    const Tensor h2 = encode_tower(m, 2, b);
    const HeadsOut out =
        tower_head_forward(heads, h1, h2, m.params.value(m.E), b);
    REQUIRE(scores.size() == out.targets.size());
    for (std::size_t k = 0; k < scores.size(); ++k) {
        CHECK(scores[k].target == out.targets[k]);
        CHECK(scores[k].p1 ==
              out.p1.at(k, static_cast<std::size_t>(out.targets[k])));
        CHECK(scores[k].p2 ==
              out.p2.at(k, static_cast<std::size_t>(out.targets[k])));
        CHECK(scores[k].p1 > 0.0);
        CHECK(scores[k].p1 <= 1.0);
    }
}
