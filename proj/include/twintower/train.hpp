#pragma once

#include "twintower/model.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace twintower {

struct TrainOptions {
    std::uint64_t steps = 1000;
    std::size_t batch_size = 16;
    std::uint64_t log_every = 100;
    AdamHyper adam;
};

// Everything a finished run needs to be scored later: the model, the optional
// phase-2 heads, the tower ordering, and enough metadata to rebuild the
// train/eval split from the original corpus.
struct Checkpoint {
    TwoTower model;
    TowerHeads heads;
    bool has_heads = false;
    int tower_order = 0; // 0 unset; 1 or 2 = primary tower
    bool order_tie = false;
    std::uint64_t seed = 0;
    std::uint64_t phase1_steps = 0;
    std::uint64_t phase2_steps = 0;
    std::vector<double> loss_history;  // mean joint loss per log interval
    std::vector<double> head1_history; // mean head losses per log interval
    std::vector<double> head2_history;
    double eval_fraction = 0.0;
    std::uint64_t split_seed = 0;
};

// Phase 1: both towers and the joint head against the tied-softmax loss.
Checkpoint train_joint(const ModelConfig& config, const TokenStream& stream,
                       std::uint64_t seed, const TrainOptions& opts);

// Phase 2: fresh per-tower heads against the frozen trunk. steps may be 0
// (heads left at initialization).
void train_heads(Checkpoint& ckpt, const TokenStream& stream, std::uint64_t seed,
                 const TrainOptions& opts);

// Names the primary tower: the one with the larger mean correct-token
// probability over the evaluation stream. An exact tie keeps tower 1 and sets
// order_tie.
// Deterministic evaluation batches tied to the checkpoint seed, shared by
// tower ordering and preference scoring so both see identical mlm masks.
std::vector<Batch> make_eval_batches(const Checkpoint& ckpt,
                                     const TokenStream& stream,
                                     std::size_t batch_size);

void order_towers(Checkpoint& ckpt, const TokenStream& eval_stream,
                  std::size_t batch_size = 16);

void save_checkpoint(const Checkpoint& ckpt, const std::string& path);
Checkpoint load_checkpoint(const std::string& path);

} // namespace twintower
