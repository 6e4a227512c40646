#pragma once

#include "twintower/rng.hpp"
#include "twintower/tensor.hpp"

#include <cstdint>
#include <functional>
#include <span>
#include <string>
#include <vector>

namespace twintower {

// Named parameter tensors with matching gradient buffers. Construction order
// is canonical: the optimizer and the checkpoint format iterate it as-is.
class ParamSet {
public:
    std::size_t add(std::string name, Tensor value);

    std::size_t size() const { return values_.size(); }
    const std::string& name(std::size_t i) const { return names_[i]; }
    Tensor& value(std::size_t i) { return values_[i]; }
    const Tensor& value(std::size_t i) const { return values_[i]; }
    Tensor& grad(std::size_t i) { return grads_[i]; }
    const Tensor& grad(std::size_t i) const { return grads_[i]; }

    std::size_t index_of(const std::string& name) const;  // throws if absent
    bool contains(const std::string& name) const;
    void zero_grads();
    std::size_t total_elements() const;

private:
    std::vector<std::string> names_;
    std::vector<Tensor> values_;
    std::vector<Tensor> grads_;
};

// ---- affine ----

// y = x W + b; x is B x I, W is I x O, b is O. Throws on shape mismatch.
Tensor affine(const Tensor& x, const Tensor& W, const Tensor& b);
// y = x W, the bias-free variant.
Tensor linear(const Tensor& x, const Tensor& W);
// Accumulates into dW, db and (when non-null) dx.
void affine_backward(const Tensor& dy, const Tensor& x, const Tensor& W,
                     Tensor* dx, Tensor& dW, Tensor& db);
void linear_backward(const Tensor& dy, const Tensor& x, const Tensor& W,
                     Tensor* dx, Tensor& dW);

// ---- softmax cross entropy ----

struct SoftmaxXent {
    double loss = 0.0;
    Tensor probs;  // rows x V, rows sum to 1
};

// Mean of -log p[target] over rows with scored[r] != 0. Rows are
// max-subtraction stabilized. Throws "no scorable positions" when every row
// is unscored.
SoftmaxXent softmax_xent(const Tensor& logits, const std::vector<int>& targets,
                         const std::vector<std::uint8_t>& scored);
void softmax_xent_backward(const SoftmaxXent& fwd, const std::vector<int>& targets,
                           const std::vector<std::uint8_t>& scored, Tensor& dlogits);

// ---- LSTM cell ----

// Gate order in Wx / Wh / b is [input, forget, candidate, output].
struct LstmStep {
    Tensor h, c;      // B x H
    Tensor gates;     // B x 4H, post-activation
};
LstmStep lstm_step(const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                   const Tensor& Wx, const Tensor& Wh, const Tensor& b);

struct LstmStepGrads {
    Tensor dx, dh_prev, dc_prev;
};
LstmStepGrads lstm_step_backward(const LstmStep& fwd, const Tensor& dh, const Tensor& dc,
                                 const Tensor& x, const Tensor& h_prev, const Tensor& c_prev,
                                 const Tensor& Wx, const Tensor& Wh,
                                 Tensor& dWx, Tensor& dWh, Tensor& db);

// ---- transformer block ----

// Parameter indices into a ParamSet for one post-norm block:
// attention + residual + layer norm, feed-forward + residual + layer norm.
// The key projection carries no bias: a shared key offset shifts every
// attention score by the same amount and cancels in the softmax.
struct BlockParams {
    std::size_t Wq, bq, Wk, Wv, bv, Wo, bo;
    std::size_t ln1_gain, ln1_shift;
    std::size_t W1, b1, W2, b2;
    std::size_t ln2_gain, ln2_shift;
};

struct BlockCache {
    Tensor x, q, k, v;
    Tensor attn;        // B*heads rows of L x L weights; future entries exactly 0 when causal
    Tensor ctx, attn_out, r1, y1;
    Tensor ln1_mean, ln1_inv_std;
    Tensor f1, g, r2;
    Tensor ln2_mean, ln2_inv_std;
};

// x is (B*L) x D. Throws when D is not divisible by heads.
Tensor attention_block(const ParamSet& ps, const BlockParams& p, const Tensor& x,
                       std::size_t B, std::size_t L, std::size_t heads, bool causal,
                       BlockCache* cache = nullptr);
// Returns dx; parameter gradients accumulate into ps.
Tensor attention_block_backward(ParamSet& ps, const BlockParams& p,
                                const BlockCache& cache, const Tensor& dout,
                                std::size_t B, std::size_t L, std::size_t heads,
                                bool causal);

// ---- optimizer ----

struct AdamHyper {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.98;
    double eps = 1e-8;
    double weight_decay = 0.01;
};

struct AdamState {
    AdamHyper hp;
    std::uint64_t t = 0;
    std::vector<Tensor> m, v;  // aligned with the ParamSet
};

AdamState make_adam(const ParamSet& ps, const AdamHyper& hp);
// One decoupled-weight-decay update from ps gradients; advances t.
void adam_step(AdamState& st, ParamSet& ps);

// ---- gradient checking ----

// Central-difference check of analytic gradients. loss_fn re-evaluates the
// loss at the (perturbed) current parameter values. Returns the max over all
// elements of |analytic - numeric| / max(1e-8, |analytic| + |numeric|).
// Throws on a non-finite loss.
double grad_check(const std::function<double()>& loss_fn,
                  std::span<Tensor* const> params,
                  std::span<const Tensor* const> analytic_grads,
                  double eps);

// ---- initialization ----

void init_uniform(Tensor& t, Rng& rng, double lo, double hi);
void init_normal(Tensor& t, Rng& rng, double stddev);

} // namespace twintower
