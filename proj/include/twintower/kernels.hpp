#pragma once

#include <cstddef>
#include <cstdint>

// Dense kernels backing the numeric layer. Every kernel exists twice with an
// identical contract: an OpenMP-parallel version in twintower::kernels and a
// plain serial version in twintower::reference. The per-output-element
// accumulation order is the same in both, so the two backends agree bitwise;
// the test suite and the benchmark tool rely on that. twintower::kern
// dispatches on a process-wide backend flag.

namespace twintower::kernels {

// C = A * B; A is m x k, B is k x n. accumulate adds into C instead of overwriting.
void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// C = A * B^T; A is m x k, B is n x k.
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
// C = A^T * B; A is k x m, B is k x n.
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);

// y[r, :] += b
void add_row_vector(double* y, const double* b, std::size_t rows, std::size_t cols);
// db[c] += sum_r dy[r, c]
void column_sums(double* db, const double* dy, std::size_t rows, std::size_t cols);

// Row-wise softmax with max subtraction; p and logits may alias.
void softmax_rows(double* p, const double* logits, std::size_t rows, std::size_t cols);

// Exact GELU, 0.5 x (1 + erf(x / sqrt 2)).
void gelu(double* y, const double* x, std::size_t n);
void gelu_backward(double* dx, const double* x, const double* dy, std::size_t n);

// Per-row layer norm; mean and inv_std are cached per row for the backward pass.
void layer_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* shift,
                std::size_t rows, std::size_t cols, double eps);
void layer_norm_backward(double* dx, double* dgain, double* dshift,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std,
                         std::size_t rows, std::size_t cols);

// One decoupled-weight-decay Adam update over a flat array; t is the
// already-advanced step counter (t >= 1).
void adam_update(double* theta, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double weight_decay, std::uint64_t t);

} // namespace twintower::kernels

namespace twintower::reference {

void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void add_row_vector(double* y, const double* b, std::size_t rows, std::size_t cols);
void column_sums(double* db, const double* dy, std::size_t rows, std::size_t cols);
void softmax_rows(double* p, const double* logits, std::size_t rows, std::size_t cols);
void gelu(double* y, const double* x, std::size_t n);
void gelu_backward(double* dx, const double* x, const double* dy, std::size_t n);
void layer_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* shift,
                std::size_t rows, std::size_t cols, double eps);
void layer_norm_backward(double* dx, double* dgain, double* dshift,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std,
                         std::size_t rows, std::size_t cols);
void adam_update(double* theta, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double weight_decay, std::uint64_t t);

} // namespace twintower::reference

namespace twintower::kern {

enum class Backend { parallel, reference };

Backend backend();
void set_backend(Backend b);

void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate = false);
void add_row_vector(double* y, const double* b, std::size_t rows, std::size_t cols);
void column_sums(double* db, const double* dy, std::size_t rows, std::size_t cols);
void softmax_rows(double* p, const double* logits, std::size_t rows, std::size_t cols);
void gelu(double* y, const double* x, std::size_t n);
void gelu_backward(double* dx, const double* x, const double* dy, std::size_t n);
void layer_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* shift,
                std::size_t rows, std::size_t cols, double eps);
void layer_norm_backward(double* dx, double* dgain, double* dshift,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std,
                         std::size_t rows, std::size_t cols);
void adam_update(double* theta, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double weight_decay, std::uint64_t t);

} // namespace twintower::kern
