#include "CLI11.hpp"

#include "twintower/kernels.hpp"
#include "twintower/rng.hpp"

#include <chrono>
#include <cstdio>
#include <cstring>
#include <functional>
#include <vector>

using namespace twintower;

namespace {

double seconds_of(const std::function<void()>& fn, int reps) {
    using clock = std::chrono::steady_clock;
    fn(); // warm up
    auto start = clock::now();
    for (int i = 0; i < reps; ++i) fn();
    std::chrono::duration<double> dt = clock::now() - start;
    return dt.count() / reps;
}

std::vector<double> random_vec(std::size_t n, Rng& rng) {
    std::vector<double> v(n);
    for (double& x : v) x = rng.normal(0.0, 1.0);
    return v;
}

bool report(const char* name, double serial, double parallel,
            const std::vector<double>& a, const std::vector<double>& b) {
    bool same = a.size() == b.size() &&
                std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0;
    std::printf("%-22s serial %8.3f ms   parallel %8.3f ms   speedup %5.2fx   %s\n",
                name, serial * 1e3, parallel * 1e3, serial / parallel,
                same ? "bitwise equal" : "MISMATCH");
    return same;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"parallel vs serial kernel benchmark"};
    std::size_t m = 512, k = 512, n = 512, rows = 4096, cols = 1024;
    int reps = 5;
    app.add_option("--m", m, "matmul rows");
    app.add_option("--k", k, "matmul inner dimension");
    app.add_option("--n", n, "matmul columns");
    app.add_option("--rows", rows, "rows for row-wise kernels");
    app.add_option("--cols", cols, "columns for row-wise kernels");
    app.add_option("--reps", reps, "timed repetitions per kernel");
    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    Rng rng(404);
    std::vector<double> a = random_vec(m * k, rng);
    std::vector<double> b = random_vec(k * n, rng);
    std::vector<double> c_ser(m * n), c_par(m * n);
    std::vector<double> x = random_vec(rows * cols, rng);
    std::vector<double> y_ser(rows * cols), y_par(rows * cols);

    bool ok = true;

    double ts = seconds_of([&] {
        reference::matmul_nn(c_ser.data(), a.data(), b.data(), m, k, n);
    }, reps);
    double tp = seconds_of([&] {
        kernels::matmul_nn(c_par.data(), a.data(), b.data(), m, k, n);
    }, reps);
    ok &= report("matmul_nn", ts, tp, c_ser, c_par);

    ts = seconds_of([&] {
        reference::matmul_nt(c_ser.data(), a.data(), b.data(), m, k, n);
    }, reps);
    tp = seconds_of([&] {
        kernels::matmul_nt(c_par.data(), a.data(), b.data(), m, k, n);
    }, reps);
    ok &= report("matmul_nt", ts, tp, c_ser, c_par);

    ts = seconds_of([&] {
        reference::matmul_tn(c_ser.data(), a.data(), b.data(), m, k, n);
    }, reps);
    tp = seconds_of([&] {
        kernels::matmul_tn(c_par.data(), a.data(), b.data(), m, k, n);
    }, reps);
    ok &= report("matmul_tn", ts, tp, c_ser, c_par);

    ts = seconds_of([&] {
        reference::softmax_rows(y_ser.data(), x.data(), rows, cols);
    }, reps);
    tp = seconds_of([&] {
        kernels::softmax_rows(y_par.data(), x.data(), rows, cols);
    }, reps);
    ok &= report("softmax_rows", ts, tp, y_ser, y_par);

    ts = seconds_of([&] {
        reference::gelu(y_ser.data(), x.data(), rows * cols);
    }, reps);
    tp = seconds_of([&] {
        kernels::gelu(y_par.data(), x.data(), rows * cols);
    }, reps);
    ok &= report("gelu", ts, tp, y_ser, y_par);

    std::vector<double> gain = random_vec(cols, rng);
    std::vector<double> shift = random_vec(cols, rng);
    std::vector<double> mean_s(rows), istd_s(rows), mean_p(rows), istd_p(rows);
    ts = seconds_of([&] {
        reference::layer_norm(y_ser.data(), mean_s.data(), istd_s.data(), x.data(),
                              gain.data(), shift.data(), rows, cols, 1e-5);
    }, reps);
    tp = seconds_of([&] {
        kernels::layer_norm(y_par.data(), mean_p.data(), istd_p.data(), x.data(),
                            gain.data(), shift.data(), rows, cols, 1e-5);
    }, reps);
    ok &= report("layer_norm", ts, tp, y_ser, y_par);

    if (!ok) {
        std::printf("backend mismatch detected\n");
        return 1;
    }
    return 0;
}
