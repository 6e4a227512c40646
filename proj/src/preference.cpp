#include "twintower/preference.hpp"

#include "twintower/model.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace twintower {

PreferenceVector compute_preference(const Checkpoint& ckpt,
                                    const TokenStream& stream,
                                    const Vocabulary& vocab,
                                    std::size_t batch_size,
                                    bool all_positions) {
    if (ckpt.tower_order == 0) throw std::invalid_argument("tower order not set");
    if (stream.ids.empty()) throw std::invalid_argument("empty eval stream");
    const std::size_t V = vocab.size();
    if (ckpt.model.config.vocab_size != V) {
        throw std::invalid_argument("vocabulary does not match checkpoint");
    }

    PreferenceVector pv;
    pv.vocab_size = V;
    pv.tokens.resize(V);
    for (std::size_t id = 0; id < V; ++id) {
        pv.tokens[id] = vocab.token(static_cast<int>(id));
    }
    pv.count.assign(V, 0);
    std::vector<double> sum1(V, 0.0), sum2(V, 0.0);
    std::size_t total_scored = 0;

    const bool swap = ckpt.tower_order == 2;
    for (const Batch& batch : make_eval_batches(ckpt, stream, batch_size)) {
        if (!all_positions) {
            std::vector<PositionScore> scores;
            append_position_scores(ckpt.model, ckpt.heads, batch, scores);
            for (const PositionScore& sc : scores) {
                const auto id = static_cast<std::size_t>(sc.target);
                ++pv.count[id];
                sum1[id] += swap ? sc.p2 : sc.p1;
                sum2[id] += swap ? sc.p1 : sc.p2;
            }
            total_scored += scores.size();
        } else {
            const Tensor h1 = encode_tower(ckpt.model, 1, batch);
            const Tensor h2 = encode_tower(ckpt.model, 2, batch);
            const HeadsOut out = tower_head_forward(
                ckpt.heads, h1, h2, ckpt.model.params.value(ckpt.model.E), batch);
            const Tensor& pa = swap ? out.p2 : out.p1;
            const Tensor& pb = swap ? out.p1 : out.p2;
            for (std::size_t r = 0; r < out.targets.size(); ++r) {
                ++pv.count[static_cast<std::size_t>(out.targets[r])];
                for (std::size_t id = 0; id < V; ++id) {
                    sum1[id] += pa.at(r, id);
                    sum2[id] += pb.at(r, id);
                }
            }
            total_scored += out.targets.size();
        }
    }

    pv.p1_mean.assign(V, 0.0);
    pv.p2_mean.assign(V, 0.0);
    pv.s.assign(V, 0.0);
    for (std::size_t id = 0; id < V; ++id) {
        if (pv.count[id] == 0) continue;
        const double n = all_positions ? static_cast<double>(total_scored)
                                       : static_cast<double>(pv.count[id]);
        pv.p1_mean[id] = sum1[id] / n;
        pv.p2_mean[id] = sum2[id] / n;
        if (pv.p1_mean[id] <= 0.0 || pv.p2_mean[id] <= 0.0) {
            throw std::runtime_error("probability underflow for token id " +
                                     std::to_string(id));
        }
        pv.s[id] = std::log(pv.p1_mean[id]) - std::log(pv.p2_mean[id]);
    }
    return pv;
}

double pearson(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("length mismatch");
    const std::size_t n = x.size();
    if (n < 2) throw std::invalid_argument("need at least 2 values");
    double mx = 0.0, my = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        mx += x[i];
        my += y[i];
    }
    mx /= static_cast<double>(n);
    my /= static_cast<double>(n);
    double sxy = 0.0, sxx = 0.0, syy = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
        const double dx = x[i] - mx;
        const double dy = y[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if (sxx == 0.0 || syy == 0.0) throw std::invalid_argument("degenerate input");
    return sxy / std::sqrt(sxx * syy);
}

namespace {

// fractional ranks, ties averaged
std::vector<double> tie_ranks(const std::vector<double>& x) {
    const std::size_t n = x.size();
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::sort(order.begin(), order.end(),
              [&](std::size_t a, std::size_t b) { return x[a] < x[b]; });
    std::vector<double> ranks(n, 0.0);
    std::size_t i = 0;
    while (i < n) {
        std::size_t j = i;
        while (j + 1 < n && x[order[j + 1]] == x[order[i]]) ++j;
        // positions i..j (0-based) share the average 1-based rank
        const double r = 0.5 * (static_cast<double>(i) + static_cast<double>(j)) + 1.0;
        for (std::size_t k = i; k <= j; ++k) ranks[order[k]] = r;
        i = j + 1;
    }
    return ranks;
}

} // namespace

double spearman(const std::vector<double>& x, const std::vector<double>& y) {
    if (x.size() != y.size()) throw std::invalid_argument("length mismatch");
    return pearson(tie_ranks(x), tie_ranks(y));
}

double correlate_topk(const PreferenceVector& a, const PreferenceVector& b,
                      std::size_t k) {
    if (k < 2) throw std::invalid_argument("k must be at least 2");
    const std::size_t V = std::min(a.vocab_size, b.vocab_size);
    std::vector<double> sa, sb;
    std::size_t common = 0;
    for (std::size_t id = kNumSpecials; id < V; ++id) {
        if (!a.defined(id) || !b.defined(id)) continue;
        if (id < a.tokens.size() && id < b.tokens.size() &&
            !a.tokens[id].empty() && !b.tokens[id].empty() &&
            a.tokens[id] != b.tokens[id]) {
            throw std::invalid_argument(
                "preference vectors use different vocabularies");
        }
        ++common;
        if (sa.size() < k) {
            sa.push_back(a.s[id]);
            sb.push_back(b.s[id]);
        }
    }
    if (common < 2) {
        throw std::invalid_argument("fewer than 2 common tokens");
    }
    if (k > common) {
        throw std::invalid_argument("k=" + std::to_string(k) +
                                    " exceeds the " + std::to_string(common) +
                                    " tokens defined in both vectors");
    }
    return pearson(sa, sb);
}

std::vector<std::string> default_pos_tags() {
    return {"PROPN", "NOUN", "ADJ", "AUX", "ADP", "ADV", "VERB"};
}

PosReport pos_report(const PreferenceVector& v,
                     const std::vector<std::string>& pos_table,
                     const std::vector<std::string>& tags, std::size_t bins) {
    if (bins == 0) throw std::invalid_argument("bins must be positive");
    for (const std::string& tag : tags) {
        if (!is_ud_tag(tag)) throw std::invalid_argument("unknown tag \"" + tag + "\"");
    }
    double maxabs = 0.0;
    for (std::size_t id = 0; id < v.vocab_size; ++id) {
        if (v.defined(id)) maxabs = std::max(maxabs, std::fabs(v.s[id]));
    }
    const double half = maxabs > 0.0 ? maxabs : 1.0;

    PosReport report;
    report.bin_edges.resize(bins + 1);
    const double width = 2.0 * half / static_cast<double>(bins);
    for (std::size_t e = 0; e <= bins; ++e) {
        report.bin_edges[e] = -half + width * static_cast<double>(e);
    }

    for (const std::string& tag : tags) {
        PosGroup g;
        g.tag = tag;
        g.bin_counts.assign(bins, 0);
        for (std::size_t id = 0; id < v.vocab_size; ++id) {
            if (!v.defined(id)) continue;
            const std::string& t = id < pos_table.size() ? pos_table[id]
                                                         : std::string("X");
            if (t != tag) continue;
            const double s = v.s[id];
            g.values.push_back(s);
            auto bin = static_cast<std::ptrdiff_t>((s + half) / width);
            bin = std::clamp<std::ptrdiff_t>(bin, 0,
                                             static_cast<std::ptrdiff_t>(bins) - 1);
            ++g.bin_counts[static_cast<std::size_t>(bin)];
        }
        if (!g.values.empty()) {
            double sum = 0.0;
            for (const double s : g.values) sum += s;
            g.mean = sum / static_cast<double>(g.values.size());
            std::vector<double> sorted = g.values;
            std::sort(sorted.begin(), sorted.end());
            const std::size_t n = sorted.size();
            g.median = n % 2 ? sorted[n / 2]
                             : 0.5 * (sorted[n / 2 - 1] + sorted[n / 2]);
        }
        report.groups.push_back(std::move(g));
    }
    return report;
}

double frequency_correlation(const PreferenceVector& v, const Vocabulary& vocab,
                             std::size_t k) {
    std::vector<double> s, freq;
    for (std::size_t id = kNumSpecials; id < v.vocab_size && s.size() < k; ++id) {
        if (!v.defined(id)) continue;
        s.push_back(v.s[id]);
        freq.push_back(static_cast<double>(vocab.freq(static_cast<int>(id))));
    }
    return spearman(s, freq);
}

void save_preference(const PreferenceVector& v, const std::string& path) {
    std::ofstream out(path);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "#twintower-pref v1\n";
    char buf[256];
    for (std::size_t id = 0; id < v.vocab_size; ++id) {
        if (!v.defined(id)) continue;
        std::snprintf(buf, sizeof(buf), "%zu\t%lld\t%.17g\t%.17g\t%.17g",
                      id, static_cast<long long>(v.count[id]), v.p1_mean[id],
                      v.p2_mean[id], v.s[id]);
        out << v.tokens[id] << '\t' << buf << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

PreferenceVector load_preference(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "#twintower-pref v1") {
        throw std::runtime_error(
            "not a twintower preference file (expected \"#twintower-pref v1\"): " + path);
    }
    PreferenceVector v;
    std::size_t lineno = 1;
    auto grow = [&v](std::size_t id) {
        if (id < v.vocab_size) return;
        v.vocab_size = id + 1;
        v.tokens.resize(v.vocab_size);
        v.count.resize(v.vocab_size, 0);
        v.p1_mean.resize(v.vocab_size, 0.0);
        v.p2_mean.resize(v.vocab_size, 0.0);
        v.s.resize(v.vocab_size, 0.0);
    };
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::istringstream fields(line);
        std::string token, id_s, count_s, p1_s, p2_s, s_s;
        if (!std::getline(fields, token, '\t') || !std::getline(fields, id_s, '\t') ||
            !std::getline(fields, count_s, '\t') || !std::getline(fields, p1_s, '\t') ||
            !std::getline(fields, p2_s, '\t') || !std::getline(fields, s_s)) {
            throw std::runtime_error("preference file line " +
                                     std::to_string(lineno) + ": expected 6 fields");
        }
        std::size_t id = 0;
        std::int64_t count = 0;
        double p1 = 0.0, p2 = 0.0, s = 0.0;
        try {
            id = std::stoull(id_s);
            count = std::stoll(count_s);
            p1 = std::stod(p1_s);
            p2 = std::stod(p2_s);
            s = std::stod(s_s);
        } catch (const std::exception&) {
            throw std::runtime_error("preference file line " +
                                     std::to_string(lineno) + ": bad number");
        }
        if (count <= 0) {
            throw std::runtime_error("preference file line " +
                                     std::to_string(lineno) +
                                     ": count must be positive");
        }
        grow(id);
        v.tokens[id] = token;
        v.count[id] = count;
        v.p1_mean[id] = p1;
        v.p2_mean[id] = p2;
        v.s[id] = s;
    }
    return v;
}

} // namespace twintower
