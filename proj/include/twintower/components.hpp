#pragma once

#include "twintower/corpus.hpp"
#include "twintower/preference.hpp"
#include "twintower/tensor.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace twintower {

// Occurrence sample of embedding rows, centered; the mean travels with the
// sample so later projections can reuse it.
struct SampleSet {
    Tensor X;    // samples x d_e, mean-centered
    Tensor mean; // 1 x d_e
};

// Uniform sample of token occurrences (all positions once when max_samples
// covers the stream), deterministic given the seed.
SampleSet sample_embeddings(const TokenStream& stream, const Tensor& E,
                            std::size_t max_samples, std::uint64_t seed);

struct PcaBasis {
    Tensor mean;           // 1 x d_e, sample mean used for centering
    Tensor V;              // d_e x d, orthonormal eigenvector columns
    std::vector<double> S; // top-d eigenvalues, non-increasing
    bool paper_literal = false; // scaling mode the projection was built with
};

struct PcaOut {
    PcaBasis basis;
    Tensor P; // samples x d
};

// Eigendecomposition of X^T X / n. Default projection whitens
// (P = X V_d diag(1/sqrt(S_d))); paper_literal switches to X V_d diag(sqrt(S_d)),
// which inflates leading components instead.
PcaOut pca_reduce(const Tensor& X, std::size_t d, bool paper_literal = false);
PcaOut pca_reduce(const SampleSet& sample, std::size_t d,
                  bool paper_literal = false);

// Symmetric eigendecomposition helper (cyclic Jacobi), eigenvalues sorted
// non-increasing with matching eigenvector columns.
void symmetric_eigen(const Tensor& A, std::vector<double>& eigenvalues,
                     Tensor& eigenvectors);

struct IcaModel {
    Tensor W;       // d x d unmixing matrix
    double lr = 0.01;
    std::uint64_t iterations = 0;
    double final_update_norm = 0.0;
    bool converged = false;
};

// Natural-gradient ICA: W <- W + lr (I - g(Y) Y^T / n) W with Y = W P^T,
// W starting from the identity, g(y) = sgn(y)(1 - exp(-sqrt(2)|y|))/2.
// Stops when the Frobenius norm of the update term drops below tol.
// The seed is accepted for interface stability; the identity start leaves
// nothing to randomize.
IcaModel ica_fit(const Tensor& P, double lr = 0.01, std::uint64_t max_iter = 5000,
                 double tol = 1e-4, std::uint64_t seed = 0);

// Per-token component values: center each embedding row with the stored
// mean, project through the basis (same scaling mode), unmix with W.
Tensor token_components(const Tensor& E, const PcaBasis& basis,
                        const IcaModel& ica);

struct Cluster {
    std::size_t dim = 0;
    int sign = 1;                 // +1 or -1
    std::vector<int> members;     // token ids, ascending = frequency order
};

struct ClusterTable {
    double threshold = 2.5;
    std::vector<Cluster> clusters;                        // (0,+),(0,-),(1,+),...
    std::vector<std::vector<std::size_t>> token_clusters; // per token id
    std::vector<std::size_t> count_histogram;             // tokens per membership count
};

// Signed-threshold clusters: token t joins (k,+) iff y[t,k] > threshold and
// (k,-) iff y[t,k] < -threshold.
ClusterTable extract_clusters(const Tensor& y, double threshold = 2.5);

struct ClusterSummary {
    std::size_t cluster_index = 0; // into ClusterTable::clusters
    std::size_t dim = 0;
    int sign = 1;
    std::vector<std::string> label; // up to 5 most frequent member tokens
    std::size_t member_count = 0;
    std::size_t scored_members = 0;
    double mean_s = 0.0;
    std::size_t rank = 0; // 1-based, descending mean_s
};

struct ClusterPreferenceTable {
    std::vector<ClusterSummary> ranked;
    std::vector<std::size_t> skipped; // non-empty clusters with no scored member
};

ClusterPreferenceTable cluster_preference(const ClusterTable& table,
                                          const PreferenceVector& v);

// TSV dump of per-token component values for external plotting.
void save_components(const Tensor& y, const std::vector<std::string>& tokens,
                     const std::string& path);
std::pair<Tensor, std::vector<std::string>> load_components(const std::string& path);

} // namespace twintower
