#include "twintower/kernels.hpp"

#include "twintower/tensor.hpp"

#include <sstream>

namespace twintower {

std::string shape_str(const std::vector<std::size_t>& s) {
    std::ostringstream os;
    os << "[";
    for (std::size_t i = 0; i < s.size(); ++i) {
        if (i) os << "x";
        os << s[i];
    }
    os << "]";
    return os.str();
}

} // namespace twintower

namespace twintower::kern {

namespace {
Backend g_backend = Backend::parallel;
} // namespace

Backend backend() { return g_backend; }
void set_backend(Backend b) { g_backend = b; }

#define TT_DISPATCH(fn, ...)                              \
    do {                                                  \
        if (g_backend == Backend::parallel)               \
            twintower::kernels::fn(__VA_ARGS__);          \
        else                                              \
            twintower::reference::fn(__VA_ARGS__);        \
    } while (0)

void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    TT_DISPATCH(matmul_nn, c, a, b, m, k, n, accumulate);
}
void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    TT_DISPATCH(matmul_nt, c, a, b, m, k, n, accumulate);
}
void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
    TT_DISPATCH(matmul_tn, c, a, b, m, k, n, accumulate);
}
void add_row_vector(double* y, const double* b, std::size_t rows, std::size_t cols) {
    TT_DISPATCH(add_row_vector, y, b, rows, cols);
}
void column_sums(double* db, const double* dy, std::size_t rows, std::size_t cols) {
    TT_DISPATCH(column_sums, db, dy, rows, cols);
}
void softmax_rows(double* p, const double* logits, std::size_t rows, std::size_t cols) {
    TT_DISPATCH(softmax_rows, p, logits, rows, cols);
}
void gelu(double* y, const double* x, std::size_t n) { TT_DISPATCH(gelu, y, x, n); }
void gelu_backward(double* dx, const double* x, const double* dy, std::size_t n) {
    TT_DISPATCH(gelu_backward, dx, x, dy, n);
}
void layer_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* shift,
                std::size_t rows, std::size_t cols, double eps) {
    TT_DISPATCH(layer_norm, y, mean, inv_std, x, gain, shift, rows, cols, eps);
}
void layer_norm_backward(double* dx, double* dgain, double* dshift,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std,
                         std::size_t rows, std::size_t cols) {
    TT_DISPATCH(layer_norm_backward, dx, dgain, dshift, dy, x, gain, mean, inv_std, rows, cols);
}
void adam_update(double* theta, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double weight_decay, std::uint64_t t) {
    TT_DISPATCH(adam_update, theta, m, v, g, n, lr, beta1, beta2, eps, weight_decay, t);
}

#undef TT_DISPATCH

} // namespace twintower::kern
