#pragma once

#include "twintower/corpus.hpp"
#include "twintower/ops.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace twintower {

enum class ModelType { cloze_lstm, causal_tfm, mlm_tfm };

ModelType model_type_from_string(const std::string& name);
std::string model_type_name(ModelType type);
TaskKind task_for(ModelType type);

struct ModelConfig {
    ModelType model_type = ModelType::mlm_tfm;
    std::size_t layers = 2;
    std::size_t hidden_size = 64;       // d_h, per tower
    std::size_t embed_size = 64;        // d_e, shared tied embedding width
    std::size_t heads = 4;              // transformer types only
    std::size_t intermediate_size = 128; // transformer feed-forward width
    std::size_t vocab_size = 0;
    std::size_t seq_len = 32;
    double mask_rate = 0.15;
};

// Named shapes; the full-size rows keep the published ratios at one-eighth
// width, the tiny rows are for tests.
ModelConfig preset_config(const std::string& name);
std::vector<std::string> preset_names();
void validate_config(const ModelConfig& config);

// Index tables into the shared ParamSet. A tower is either an LSTM stack
// (fwd/bwd used) or a transformer stack (in_*/blocks used).
struct LstmLayerIdx {
    std::size_t Wx = 0, Wh = 0, b = 0;
};

struct TowerIdx {
    std::vector<LstmLayerIdx> fwd, bwd;
    std::size_t comb_W = 0, comb_b = 0;
    std::size_t in_W = 0, in_b = 0;
    std::vector<BlockParams> blocks;
};

// The two encoders plus tied embedding and the joint output layer. The two
// towers have identical shapes but independent initial draws; if they started
// equal their gradients would stay equal and no preference could emerge.
struct TwoTower {
    ModelConfig config;
    ParamSet params;
    std::size_t E = 0;      // vocab_size x embed_size, tied in and out
    std::size_t pos = 0;    // seq_len x embed_size, transformer types only
    bool has_pos = false;
    std::size_t joint_W = 0; // (2 hidden) x embed_size
    std::size_t joint_b = 0;
    TowerIdx tower[2];
};

TwoTower make_two_tower(const ModelConfig& config, std::uint64_t seed);

// Per-tower forward caches, kept so the training step can run the exact
// backward pass.
struct LstmDirCache {
    std::vector<std::vector<LstmStep>> steps; // [layer][time]
};

struct TowerCache {
    Tensor x0;   // (B*L) x d_e, embedding (+ positional) input
    Tensor xin;  // (B*L) x d_h, transformer input projection
    std::vector<BlockCache> blocks;
    LstmDirCache fwd, bwd;
    Tensor comb_in; // (B*L) x 2 d_h, shifted direction concat (LSTM)
    Tensor hidden;  // (B*L) x d_h
};

// Hidden states aligned with batch rows: the row that scores a target is the
// row whose visibility rules (causal prefix / cloze both-sides / mlm mask)
// exclude that target's own token.
Tensor encode_tower(const TwoTower& model, int tower, const Batch& batch,
                    TowerCache* cache = nullptr);

// Flat row indices of batch positions that carry loss, in row-major order.
std::vector<std::size_t> scored_rows(const Batch& batch);

struct TwoTowerOut {
    double loss = 0.0;
    Tensor probs;                   // scored rows x vocab
    std::vector<int> targets;       // per scored row
    std::vector<std::size_t> rows;  // flat batch indices of scored rows
};

// Joint objective: h = concat(h1, h2), projected to embed width, logits
// against the tied embedding, softmax over the vocabulary with [PAD] banned.
TwoTowerOut two_tower_forward(const TwoTower& model, const Batch& batch);

// Same forward plus full backward; accumulates into model.params grads and
// returns the loss.
double two_tower_grad(TwoTower& model, const Batch& batch);

// Phase-2 heads: one affine d_h -> d_e per tower, scored against the frozen
// tied embedding.
struct TowerHeads {
    ParamSet params;
    std::size_t W1 = 0, b1 = 0, W2 = 0, b2 = 0;
};

TowerHeads make_tower_heads(const ModelConfig& config, std::uint64_t seed);

struct HeadsOut {
    double loss1 = 0.0, loss2 = 0.0;
    Tensor p1, p2;                 // scored rows x vocab
    std::vector<int> targets;
    std::vector<std::size_t> rows;
};

HeadsOut tower_head_forward(const TowerHeads& heads, const Tensor& h1, const Tensor& h2,
                            const Tensor& E, const Batch& batch);

struct HeadLosses {
    double loss1 = 0.0, loss2 = 0.0;
};

// Head-only gradients; the trunk stays frozen.
HeadLosses tower_heads_grad(TowerHeads& heads, const Tensor& h1, const Tensor& h2,
                            const Tensor& E, const Batch& batch);

// One scored position: the true token and the probability each tower's head
// assigned to it.
struct PositionScore {
    int target = 0;
    double p1 = 0.0, p2 = 0.0;
};

void append_position_scores(const TwoTower& model, const TowerHeads& heads,
                            const Batch& batch, std::vector<PositionScore>& out);

} // namespace twintower
