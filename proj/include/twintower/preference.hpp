#pragma once

#include "twintower/corpus.hpp"
#include "twintower/train.hpp"

#include <cstdint>
#include <string>
#include <vector>

namespace twintower {

// Per-token preference: s = log p1_mean - log p2_mean, where side 1 is the
// primary tower after ordering. A token is defined iff it was scored at
// least once (count > 0); all other entries are excluded from statistics.
struct PreferenceVector {
    std::size_t vocab_size = 0;
    std::vector<std::string> tokens;     // per id
    std::vector<std::int64_t> count;     // scored occurrences per id
    std::vector<double> p1_mean, p2_mean, s;
    bool defined(std::size_t id) const {
        return id < count.size() && count[id] > 0;
    }
};

// Mean correct-token probability per tower for each target token over the
// evaluation stream, primary/secondary resolved through ckpt.tower_order.
// all_positions switches the mean to run over every scored position instead
// of only the positions where the token is the target.
PreferenceVector compute_preference(const Checkpoint& ckpt,
                                    const TokenStream& stream,
                                    const Vocabulary& vocab,
                                    std::size_t batch_size = 16,
                                    bool all_positions = false);

// Sample Pearson correlation. Throws "degenerate input" on zero variance.
double pearson(const std::vector<double>& x, const std::vector<double>& y);

// Pearson over fractional average-tie ranks.
double spearman(const std::vector<double>& x, const std::vector<double>& y);

// Pearson over the s-values of the k most frequent tokens (vocab ids are
// frequency-ordered; specials and [UNK] never participate) that are defined
// in both vectors.
double correlate_topk(const PreferenceVector& a, const PreferenceVector& b,
                      std::size_t k);

struct PosGroup {
    std::string tag;
    std::vector<double> values;          // s of member tokens
    std::vector<std::int64_t> bin_counts;
    double mean = 0.0;
    double median = 0.0;
};

struct PosReport {
    std::vector<double> bin_edges;       // bins + 1 edges shared by groups
    std::vector<PosGroup> groups;
};

std::vector<std::string> default_pos_tags();

// Distribution of s per POS tag over defined tokens; the histogram spans
// [-max|s|, +max|s|] of the full defined set so groups are comparable.
PosReport pos_report(const PreferenceVector& v,
                     const std::vector<std::string>& pos_table,
                     const std::vector<std::string>& tags = default_pos_tags(),
                     std::size_t bins = 41);

// Spearman correlation between s and corpus frequency over the top-k most
// frequent defined tokens (k capped at the defined count).
double frequency_correlation(const PreferenceVector& v, const Vocabulary& vocab,
                             std::size_t k = 5000);

// TSV dump: "#twintower-pref v1" header, then token/id/count/p1_mean/
// p2_mean/s rows for defined tokens.
void save_preference(const PreferenceVector& v, const std::string& path);
PreferenceVector load_preference(const std::string& path);

} // namespace twintower
