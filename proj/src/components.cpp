#include "twintower/components.hpp"

#include "twintower/kernels.hpp"
#include "twintower/rng.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <stdexcept>
#include <string>

namespace twintower {

namespace {

void require_matrix(const Tensor& t, const char* what) {
    if (t.rank() != 2) {
        throw std::invalid_argument(std::string(what) + " must be a matrix");
    }
}

// Column scale applied after projecting onto the basis: whitening divides by
// sqrt(S), the literal mode multiplies instead.
double column_scale(double eigenvalue, bool paper_literal) {
    double root = std::sqrt(eigenvalue);
    return paper_literal ? root : 1.0 / root;
}

// sgn(y) (1 - exp(-sqrt(2) |y|)) / 2, the bounded odd contrast.
double contrast(double y) {
    double sign = (y > 0.0) ? 1.0 : (y < 0.0 ? -1.0 : 0.0);
    return 0.5 * sign * (1.0 - std::exp(-std::sqrt(2.0) * std::fabs(y)));
}

} // namespace

SampleSet sample_embeddings(const TokenStream& stream, const Tensor& E,
                            std::size_t max_samples, std::uint64_t seed) {
    require_matrix(E, "embedding table");
    if (stream.ids.empty()) {
        throw std::invalid_argument("empty token stream");
    }
    if (max_samples == 0) {
        throw std::invalid_argument("max_samples must be at least 1");
    }
    const std::size_t n = stream.ids.size();
    const std::size_t de = E.dim(1);

    std::vector<std::size_t> picks;
    if (max_samples >= n) {
        picks.resize(n);
        std::iota(picks.begin(), picks.end(), std::size_t{0});
    } else {
        // Partial Fisher-Yates: the first max_samples slots end up holding a
        // uniform sample of positions without replacement.
        std::vector<std::size_t> idx(n);
        std::iota(idx.begin(), idx.end(), std::size_t{0});
        Rng rng(seed);
        for (std::size_t i = 0; i < max_samples; ++i) {
            std::size_t j = i + static_cast<std::size_t>(rng.below(n - i));
            std::swap(idx[i], idx[j]);
        }
        picks.assign(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(max_samples));
    }

    SampleSet out;
    out.X = Tensor{picks.size(), de};
    out.mean = Tensor{std::size_t{1}, de};
    for (std::size_t r = 0; r < picks.size(); ++r) {
        int id = stream.ids[picks[r]];
        if (id < 0 || static_cast<std::size_t>(id) >= E.dim(0)) {
            throw std::invalid_argument("token id " + std::to_string(id) +
                                        " outside the embedding table");
        }
        const double* src = E.data() + static_cast<std::size_t>(id) * de;
        std::copy(src, src + de, out.X.data() + r * de);
    }
    for (std::size_t c = 0; c < de; ++c) {
        double sum = 0.0;
        for (std::size_t r = 0; r < picks.size(); ++r) sum += out.X.at(r, c);
        out.mean[c] = sum / static_cast<double>(picks.size());
    }
    for (std::size_t r = 0; r < picks.size(); ++r) {
        for (std::size_t c = 0; c < de; ++c) out.X.at(r, c) -= out.mean[c];
    }
    return out;
}

void symmetric_eigen(const Tensor& A, std::vector<double>& eigenvalues,
                     Tensor& eigenvectors) {
    require_matrix(A, "eigen input");
    const std::size_t n = A.dim(0);
    if (A.dim(1) != n) {
        throw std::invalid_argument("eigen input must be square");
    }

    Tensor B = A;
    eigenvectors = Tensor{n, n};
    for (std::size_t i = 0; i < n; ++i) eigenvectors.at(i, i) = 1.0;

    // Cyclic Jacobi sweeps; each rotation zeroes one off-diagonal pair.
    const int max_sweeps = 64;
    for (int sweep = 0; sweep < max_sweeps; ++sweep) {
        double off = 0.0;
        double diag = 0.0;
        for (std::size_t p = 0; p < n; ++p) {
            diag += B.at(p, p) * B.at(p, p);
            for (std::size_t q = p + 1; q < n; ++q) off += B.at(p, q) * B.at(p, q);
        }
        if (off <= 1e-30 * std::max(1.0, diag)) break;

        for (std::size_t p = 0; p + 1 < n; ++p) {
            for (std::size_t q = p + 1; q < n; ++q) {
                double apq = B.at(p, q);
                if (apq == 0.0) continue;
                double tau = (B.at(q, q) - B.at(p, p)) / (2.0 * apq);
                double t = (tau >= 0.0)
                               ? 1.0 / (tau + std::sqrt(1.0 + tau * tau))
                               : 1.0 / (tau - std::sqrt(1.0 + tau * tau));
                double c = 1.0 / std::sqrt(1.0 + t * t);
                double s = t * c;

                double bpp = B.at(p, p);
                double bqq = B.at(q, q);
                B.at(p, p) = bpp - t * apq;
                B.at(q, q) = bqq + t * apq;
                B.at(p, q) = 0.0;
                B.at(q, p) = 0.0;
                for (std::size_t i = 0; i < n; ++i) {
                    if (i == p || i == q) continue;
                    double bip = B.at(i, p);
                    double biq = B.at(i, q);
                    B.at(i, p) = c * bip - s * biq;
                    B.at(p, i) = B.at(i, p);
                    B.at(i, q) = s * bip + c * biq;
                    B.at(q, i) = B.at(i, q);
                }
                for (std::size_t i = 0; i < n; ++i) {
                    double vip = eigenvectors.at(i, p);
                    double viq = eigenvectors.at(i, q);
                    eigenvectors.at(i, p) = c * vip - s * viq;
                    eigenvectors.at(i, q) = s * vip + c * viq;
                }
            }
        }
    }

    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
        return B.at(a, a) > B.at(b, b);
    });
    eigenvalues.resize(n);
    Tensor sorted{n, n};
    for (std::size_t j = 0; j < n; ++j) {
        eigenvalues[j] = B.at(order[j], order[j]);
        for (std::size_t i = 0; i < n; ++i) {
            sorted.at(i, j) = eigenvectors.at(i, order[j]);
        }
    }
    eigenvectors = std::move(sorted);
}

PcaOut pca_reduce(const Tensor& X, std::size_t d, bool paper_literal) {
    require_matrix(X, "sample matrix");
    const std::size_t n = X.dim(0);
    const std::size_t de = X.dim(1);
    if (d == 0) {
        throw std::invalid_argument("d must be at least 1");
    }
    if (d > de) {
        throw std::invalid_argument("d=" + std::to_string(d) +
                                    " exceeds the data dimension " + std::to_string(de));
    }
    if (n <= d) {
        throw std::invalid_argument("sample count " + std::to_string(n) +
                                    " must exceed d=" + std::to_string(d));
    }

    Tensor cov{de, de};
    kern::matmul_tn(cov.data(), X.data(), X.data(), de, n, de);
    double inv_n = 1.0 / static_cast<double>(n);
    for (std::size_t i = 0; i < cov.size(); ++i) cov[i] *= inv_n;

    std::vector<double> w;
    Tensor vecs;
    symmetric_eigen(cov, w, vecs);

    double top = std::max(w.empty() ? 0.0 : w[0], 0.0);
    std::size_t rank = 0;
    for (double v : w) {
        if (v > top * 1e-10 && v > 0.0) ++rank;
    }
    if (rank < d) {
        throw std::runtime_error("sample covariance has rank " + std::to_string(rank) +
                                 ", below the requested dimension " + std::to_string(d));
    }

    PcaOut out;
    out.basis.paper_literal = paper_literal;
    out.basis.mean = Tensor{std::size_t{1}, de};
    out.basis.S.assign(w.begin(), w.begin() + static_cast<std::ptrdiff_t>(d));
    out.basis.V = Tensor{de, d};
    for (std::size_t i = 0; i < de; ++i) {
        for (std::size_t j = 0; j < d; ++j) out.basis.V.at(i, j) = vecs.at(i, j);
    }

    out.P = Tensor{n, d};
    kern::matmul_nn(out.P.data(), X.data(), out.basis.V.data(), n, de, d);
    for (std::size_t j = 0; j < d; ++j) {
        double scale = column_scale(out.basis.S[j], paper_literal);
        for (std::size_t r = 0; r < n; ++r) out.P.at(r, j) *= scale;
    }
    return out;
}

PcaOut pca_reduce(const SampleSet& sample, std::size_t d, bool paper_literal) {
    PcaOut out = pca_reduce(sample.X, d, paper_literal);
    if (sample.mean.size() != out.basis.mean.size()) {
        throw std::invalid_argument("sample mean does not match the sample matrix");
    }
    out.basis.mean = sample.mean;
    return out;
}

IcaModel ica_fit(const Tensor& P, double lr, std::uint64_t max_iter, double tol,
                 std::uint64_t seed) {
    (void)seed; // identity start leaves nothing to randomize
    require_matrix(P, "projected sample");
    const std::size_t n = P.dim(0);
    const std::size_t d = P.dim(1);
    if (n == 0 || d == 0) {
        throw std::invalid_argument("projected sample is empty");
    }
    if (tol <= 0.0) {
        throw std::invalid_argument("tol must be positive");
    }

    IcaModel model;
    model.lr = lr;
    model.W = Tensor{d, d};
    for (std::size_t i = 0; i < d; ++i) model.W.at(i, i) = 1.0;

    // Fixed block size keeps the accumulation splits (and therefore the
    // bit pattern) independent of anything but the inputs.
    const std::size_t block = 2048;
    Tensor yb{std::min(block, n), d};
    Tensor gb{std::min(block, n), d};
    Tensor moment{d, d};
    Tensor update{d, d};
    Tensor dw{d, d};

    auto update_norm = [&]() {
        moment.fill(0.0);
        for (std::size_t r0 = 0; r0 < n; r0 += block) {
            std::size_t rows = std::min(block, n - r0);
            kern::matmul_nt(yb.data(), P.data() + r0 * d, model.W.data(), rows, d, d);
            for (std::size_t i = 0; i < rows * d; ++i) gb[i] = contrast(yb[i]);
            kern::matmul_tn(moment.data(), gb.data(), yb.data(), d, rows, d, true);
        }
        double inv_n = 1.0 / static_cast<double>(n);
        double sq = 0.0;
        for (std::size_t i = 0; i < d; ++i) {
            for (std::size_t j = 0; j < d; ++j) {
                double u = (i == j ? 1.0 : 0.0) - moment.at(i, j) * inv_n;
                update.at(i, j) = u;
                sq += u * u;
            }
        }
        return std::sqrt(sq);
    };

    for (std::uint64_t it = 0; it < max_iter; ++it) {
        double norm = update_norm();
        if (!std::isfinite(norm) || norm > 1e6) {
            char buf[32];
            std::snprintf(buf, sizeof buf, "%.3g", norm);
            throw std::runtime_error("ica diverged at iteration " + std::to_string(it) +
                                     " (update norm " + buf + ")");
        }
        model.final_update_norm = norm;
        if (norm < tol) {
            model.iterations = it;
            model.converged = true;
            return model;
        }
        kern::matmul_nn(dw.data(), update.data(), model.W.data(), d, d, d);
        for (std::size_t i = 0; i < d * d; ++i) model.W[i] += lr * dw[i];
    }

    double norm = update_norm();
    model.final_update_norm = norm;
    model.iterations = max_iter;
    model.converged = std::isfinite(norm) && norm < tol;
    return model;
}

Tensor token_components(const Tensor& E, const PcaBasis& basis,
                        const IcaModel& ica) {
    require_matrix(E, "embedding table");
    require_matrix(basis.V, "basis");
    require_matrix(ica.W, "unmixing matrix");
    const std::size_t v = E.dim(0);
    const std::size_t de = E.dim(1);
    const std::size_t d = basis.V.dim(1);
    if (basis.V.dim(0) != de || basis.mean.size() != de) {
        throw std::invalid_argument("dimension mismatch between embeddings and basis");
    }
    if (ica.W.dim(0) != d || ica.W.dim(1) != d) {
        throw std::invalid_argument("dimension mismatch between basis and unmixing matrix");
    }
    if (basis.S.size() != d) {
        throw std::invalid_argument("basis eigenvalues do not match its width");
    }

    Tensor centered{v, de};
    for (std::size_t r = 0; r < v; ++r) {
        for (std::size_t c = 0; c < de; ++c) {
            centered.at(r, c) = E.at(r, c) - basis.mean[c];
        }
    }
    Tensor proj{v, d};
    kern::matmul_nn(proj.data(), centered.data(), basis.V.data(), v, de, d);
    for (std::size_t j = 0; j < d; ++j) {
        double scale = column_scale(basis.S[j], basis.paper_literal);
        for (std::size_t r = 0; r < v; ++r) proj.at(r, j) *= scale;
    }
    Tensor y{v, d};
    kern::matmul_nt(y.data(), proj.data(), ica.W.data(), v, d, d);
    return y;
}

ClusterTable extract_clusters(const Tensor& y, double threshold) {
    require_matrix(y, "component matrix");
    if (!(threshold > 0.0)) {
        throw std::invalid_argument("threshold must be positive");
    }
    const std::size_t v = y.dim(0);
    const std::size_t d = y.dim(1);

    ClusterTable table;
    table.threshold = threshold;
    table.clusters.resize(2 * d);
    for (std::size_t k = 0; k < d; ++k) {
        table.clusters[2 * k].dim = k;
        table.clusters[2 * k].sign = 1;
        table.clusters[2 * k + 1].dim = k;
        table.clusters[2 * k + 1].sign = -1;
    }
    table.token_clusters.resize(v);
    table.count_histogram.assign(d + 1, 0);

    for (std::size_t t = 0; t < v; ++t) {
        for (std::size_t k = 0; k < d; ++k) {
            double val = y.at(t, k);
            if (val > threshold) {
                table.clusters[2 * k].members.push_back(static_cast<int>(t));
                table.token_clusters[t].push_back(2 * k);
            } else if (val < -threshold) {
                table.clusters[2 * k + 1].members.push_back(static_cast<int>(t));
                table.token_clusters[t].push_back(2 * k + 1);
            }
        }
        ++table.count_histogram[table.token_clusters[t].size()];
    }
    return table;
}

ClusterPreferenceTable cluster_preference(const ClusterTable& table,
                                          const PreferenceVector& v) {
    ClusterPreferenceTable out;
    for (std::size_t ci = 0; ci < table.clusters.size(); ++ci) {
        const Cluster& cl = table.clusters[ci];
        if (cl.members.empty()) continue;

        double sum = 0.0;
        std::size_t scored = 0;
        for (int id : cl.members) {
            auto uid = static_cast<std::size_t>(id);
            if (uid < v.count.size() && v.defined(uid)) {
                sum += v.s[uid];
                ++scored;
            }
        }
        if (scored == 0) {
            out.skipped.push_back(ci);
            continue;
        }

        ClusterSummary summary;
        summary.cluster_index = ci;
        summary.dim = cl.dim;
        summary.sign = cl.sign;
        summary.member_count = cl.members.size();
        summary.scored_members = scored;
        summary.mean_s = sum / static_cast<double>(scored);
        // Token ids are assigned in frequency order, so the lowest member ids
        // are the most frequent tokens.
        for (std::size_t i = 0; i < cl.members.size() && summary.label.size() < 5; ++i) {
            auto uid = static_cast<std::size_t>(cl.members[i]);
            if (uid < v.tokens.size() && !v.tokens[uid].empty()) {
                summary.label.push_back(v.tokens[uid]);
            } else {
                summary.label.push_back("#" + std::to_string(cl.members[i]));
            }
        }
        out.ranked.push_back(std::move(summary));
    }

    std::stable_sort(out.ranked.begin(), out.ranked.end(),
                     [](const ClusterSummary& a, const ClusterSummary& b) {
                         return a.mean_s > b.mean_s;
                     });
    for (std::size_t i = 0; i < out.ranked.size(); ++i) out.ranked[i].rank = i + 1;
    return out;
}

void save_components(const Tensor& y, const std::vector<std::string>& tokens,
                     const std::string& path) {
    require_matrix(y, "component matrix");
    if (tokens.size() != y.dim(0)) {
        throw std::invalid_argument("token list does not match the component matrix");
    }
    std::ofstream out(path, std::ios::binary);
    if (!out) {
        throw std::runtime_error("cannot open components file: " + path);
    }
    out << "#twintower-components v1\n";
    char buf[32];
    for (std::size_t t = 0; t < tokens.size(); ++t) {
        out << tokens[t];
        for (std::size_t k = 0; k < y.dim(1); ++k) {
            std::snprintf(buf, sizeof buf, "%.17g", y.at(t, k));
            out << '\t' << buf;
        }
        out << '\n';
    }
    if (!out) {
        throw std::runtime_error("failed writing components file: " + path);
    }
}

std::pair<Tensor, std::vector<std::string>> load_components(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "#twintower-components v1") {
        throw std::runtime_error(
            "not a twintower components file (expected \"#twintower-components v1\"): " +
            path);
    }

    std::vector<std::string> tokens;
    std::vector<double> values;
    std::size_t width = 0;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> fields;
        std::size_t start = 0;
        for (;;) {
            std::size_t tab = line.find('\t', start);
            fields.push_back(line.substr(start, tab - start));
            if (tab == std::string::npos) break;
            start = tab + 1;
        }
        if (fields.size() < 2 || (width != 0 && fields.size() != width + 1)) {
            throw std::runtime_error("components file line " + std::to_string(lineno) +
                                     ": expected " + std::to_string(width + 1) +
                                     " fields");
        }
        if (width == 0) width = fields.size() - 1;
        tokens.push_back(fields[0]);
        for (std::size_t i = 1; i < fields.size(); ++i) {
            try {
                values.push_back(std::stod(fields[i]));
            } catch (const std::exception&) {
                throw std::runtime_error("components file line " + std::to_string(lineno) +
                                         ": bad number");
            }
        }
    }
    if (tokens.empty()) {
        throw std::runtime_error("components file has no rows: " + path);
    }
    Tensor y{tokens.size(), width};
    std::copy(values.begin(), values.end(), y.data());
    return {std::move(y), std::move(tokens)};
}

} // namespace twintower
