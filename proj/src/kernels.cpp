#include "twintower/kernels.hpp"

#include <cmath>

// OpenMP backend. Parallel loops run over independent output elements only,
// and each element is accumulated in ascending-index order, so results are
// bitwise identical to twintower::reference for any thread count.

namespace twintower::kernels {

void matmul_nn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(m); ++r) {
        double* crow = c + r * n;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        }
        const double* arow = a + r * k;
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = arow[kk];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void matmul_nt(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(m); ++r) {
        const double* arow = a + r * k;
        double* crow = c + r * n;
        for (std::size_t j = 0; j < n; ++j) {
            const double* brow = b + j * k;
            double s = 0.0;
            for (std::size_t kk = 0; kk < k; ++kk) s += arow[kk] * brow[kk];
            if (accumulate) crow[j] += s; else crow[j] = s;
        }
    }
}

void matmul_tn(double* c, const double* a, const double* b,
               std::size_t m, std::size_t k, std::size_t n, bool accumulate) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(m); ++r) {
        double* crow = c + r * n;
        if (!accumulate) {
            for (std::size_t j = 0; j < n; ++j) crow[j] = 0.0;
        }
        for (std::size_t kk = 0; kk < k; ++kk) {
            const double av = a[kk * m + r];
            const double* brow = b + kk * n;
            for (std::size_t j = 0; j < n; ++j) crow[j] += av * brow[j];
        }
    }
}

void add_row_vector(double* y, const double* b, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
        double* yrow = y + r * cols;
        for (std::size_t c = 0; c < cols; ++c) yrow[c] += b[c];
    }
}

void column_sums(double* db, const double* dy, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(cols); ++c) {
        double s = 0.0;
        for (std::size_t r = 0; r < rows; ++r) s += dy[r * cols + c];
        db[c] += s;
    }
}

void softmax_rows(double* p, const double* logits, std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
        const double* lrow = logits + r * cols;
        double* prow = p + r * cols;
        double mx = lrow[0];
        for (std::size_t c = 1; c < cols; ++c) mx = std::max(mx, lrow[c]);
        double z = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double e = std::exp(lrow[c] - mx);
            prow[c] = e;
            z += e;
        }
        const double inv = 1.0 / z;
        for (std::size_t c = 0; c < cols; ++c) prow[c] *= inv;
    }
}

namespace {
constexpr double kInvSqrt2 = 0.7071067811865475244;
constexpr double kInvSqrt2Pi = 0.3989422804014326779;
} // namespace

void gelu(double* y, const double* x, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        y[i] = 0.5 * x[i] * (1.0 + std::erf(x[i] * kInvSqrt2));
    }
}

void gelu_backward(double* dx, const double* x, const double* dy, std::size_t n) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        const double v = x[i];
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        dx[i] += dy[i] * (cdf + v * pdf);
    }
}

void layer_norm(double* y, double* mean, double* inv_std, const double* x,
                const double* gain, const double* shift,
                std::size_t rows, std::size_t cols, double eps) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
        const double* xrow = x + r * cols;
        double* yrow = y + r * cols;
        double mu = 0.0;
        for (std::size_t c = 0; c < cols; ++c) mu += xrow[c];
        mu /= static_cast<double>(cols);
        double var = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double d = xrow[c] - mu;
            var += d * d;
        }
        var /= static_cast<double>(cols);
        const double is = 1.0 / std::sqrt(var + eps);
        mean[r] = mu;
        inv_std[r] = is;
        for (std::size_t c = 0; c < cols; ++c) {
            yrow[c] = gain[c] * ((xrow[c] - mu) * is) + shift[c];
        }
    }
}

void layer_norm_backward(double* dx, double* dgain, double* dshift,
                         const double* dy, const double* x, const double* gain,
                         const double* mean, const double* inv_std,
                         std::size_t rows, std::size_t cols) {
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t c = 0; c < static_cast<std::ptrdiff_t>(cols); ++c) {
        double sg = 0.0, ss = 0.0;
        for (std::size_t r = 0; r < rows; ++r) {
            const double xhat = (x[r * cols + c] - mean[r]) * inv_std[r];
            sg += dy[r * cols + c] * xhat;
            ss += dy[r * cols + c];
        }
        dgain[c] += sg;
        dshift[c] += ss;
    }
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t r = 0; r < static_cast<std::ptrdiff_t>(rows); ++r) {
        const double* xrow = x + r * cols;
        const double* dyrow = dy + r * cols;
        double* dxrow = dx + r * cols;
        const double mu = mean[r];
        const double is = inv_std[r];
        double sum_dxh = 0.0, sum_dxh_xh = 0.0;
        for (std::size_t c = 0; c < cols; ++c) {
            const double xhat = (xrow[c] - mu) * is;
            const double dxh = dyrow[c] * gain[c];
            sum_dxh += dxh;
            sum_dxh_xh += dxh * xhat;
        }
        const double invc = 1.0 / static_cast<double>(cols);
        for (std::size_t c = 0; c < cols; ++c) {
            const double xhat = (xrow[c] - mu) * is;
            const double dxh = dyrow[c] * gain[c];
            dxrow[c] += is * (dxh - invc * sum_dxh - xhat * invc * sum_dxh_xh);
        }
    }
}

void adam_update(double* theta, double* m, double* v, const double* g,
                 std::size_t n, double lr, double beta1, double beta2,
                 double eps, double weight_decay, std::uint64_t t) {
    const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(t));
    const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(t));
#pragma omp parallel for schedule(static)
    for (std::ptrdiff_t i = 0; i < static_cast<std::ptrdiff_t>(n); ++i) {
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
        v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
        const double mhat = m[i] / bc1;
        const double vhat = v[i] / bc2;
        theta[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * theta[i]);
    }
}

} // namespace twintower::kernels
