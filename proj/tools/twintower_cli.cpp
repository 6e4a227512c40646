#include "CLI11.hpp"
#include "json.hpp"

#include "twintower/components.hpp"
#include "twintower/corpus.hpp"
#include "twintower/model.hpp"
#include "twintower/preference.hpp"
#include "twintower/train.hpp"

#include <algorithm>
#include <cstdint>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <memory>
#include <sstream>
#include <string>
#include <vector>

using namespace twintower;
using nlohmann::json;

namespace {

std::string read_corpus_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open corpus file: " + path);
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::string fmt(double v) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%.17g", v);
    return buf;
}

std::uint64_t fnv1a(const std::string& s) {
    std::uint64_t h = 1469598103934665603ull;
    for (unsigned char c : s) {
        h ^= c;
        h *= 1099511628211ull;
    }
    return h;
}

// One manifest line per command invocation: timestamp, command, a hash of the
// semantically relevant settings, and the seed. run.log sits next to the
// command's primary output.
void write_manifest(const std::string& primary_output, const std::string& command,
                    const std::vector<std::pair<std::string, std::string>>& cfg,
                    const std::string& seed) {
    std::map<std::string, std::string> sorted(cfg.begin(), cfg.end());
    std::string canon;
    for (const auto& [k, v] : sorted) {
        canon += k;
        canon += '=';
        canon += v;
        canon += '\n';
    }
    char hash[17];
    std::snprintf(hash, sizeof hash, "%016llx",
                  static_cast<unsigned long long>(fnv1a(canon)));

    namespace fs = std::filesystem;
    fs::path dir = fs::path(primary_output).parent_path();
    fs::path log = dir.empty() ? fs::path("run.log") : dir / "run.log";
    std::ofstream out(log, std::ios::app);
    if (!out) throw std::runtime_error("cannot open " + log.string());
    char ts[32];
    std::time_t now = std::time(nullptr);
    std::tm tm{};
    gmtime_r(&now, &tm);
    std::strftime(ts, sizeof ts, "%Y-%m-%dT%H:%M:%SZ", &tm);
    out << ts << ' ' << command << " config=" << hash << " seed=" << seed << '\n';
}

void check_vocab_matches(const Vocabulary& vocab, const Checkpoint& ck) {
    if (vocab.size() != ck.model.config.vocab_size) {
        throw std::runtime_error("vocabulary size " + std::to_string(vocab.size()) +
                                 " does not match checkpoint vocab_size " +
                                 std::to_string(ck.model.config.vocab_size));
    }
}

// A reloaded preference file only knows ids up to its last defined token, so
// the check is containment plus token agreement, not size equality.
void check_pref_matches(const PreferenceVector& pv, const Vocabulary& vocab,
                        const std::string& path) {
    if (pv.vocab_size > vocab.size()) {
        throw std::runtime_error("preference file " + path +
                                 " does not match the vocabulary (" +
                                 std::to_string(pv.vocab_size) + " ids vs " +
                                 std::to_string(vocab.size()) + " entries)");
    }
    for (std::size_t id = 0; id < pv.vocab_size; ++id) {
        if (pv.defined(id) && pv.tokens[id] != vocab.token(static_cast<int>(id))) {
            throw std::runtime_error("preference file " + path +
                                     " does not match the vocabulary (token " +
                                     std::to_string(id) + " is \"" + pv.tokens[id] +
                                     "\" vs \"" + vocab.token(static_cast<int>(id)) +
                                     "\")");
        }
    }
}

// ---- build-vocab ----

struct BuildVocabArgs {
    std::string corpus, out;
    std::size_t max_vocab = 4000;
    std::size_t min_count = 2;
};

void cmd_build_vocab(const BuildVocabArgs& a) {
    std::string text = read_corpus_file(a.corpus);
    Vocabulary vocab = build_vocab(text, a.max_vocab, a.min_count);
    save_vocab(vocab, a.out);
    write_manifest(a.out, "build-vocab",
                   {{"corpus", a.corpus},
                    {"max_vocab", std::to_string(a.max_vocab)},
                    {"min_count", std::to_string(a.min_count)}},
                   "-");
    std::cout << "vocab: " << vocab.size() << " entries -> " << a.out << "\n";
}

// ---- train ----

struct TrainArgs {
    std::string corpus, vocab, out, preset, model_type;
    std::size_t layers = 0, hidden_size = 0, embed_size = 0, heads = 0,
                intermediate_size = 0, seq_len = 0;
    double mask_rate = 0.15;
    std::uint64_t seed = 1, steps = 2000, log_every = 100, split_seed = 1;
    std::size_t batch_size = 16;
    double lr = 1e-3, beta1 = 0.9, beta2 = 0.98, adam_eps = 1e-8,
           weight_decay = 0.01;
    double eval_fraction = 0.1;
};

struct TrainModelOpts {
    CLI::Option *model_type = nullptr, *layers = nullptr, *hidden = nullptr,
                *embed = nullptr, *heads = nullptr, *inter = nullptr,
                *seq_len = nullptr, *mask_rate = nullptr;
};

void add_adam_options(CLI::App* sc, TrainArgs& a) {
    sc->add_option("--lr", a.lr, "adam learning rate");
    sc->add_option("--beta1", a.beta1, "adam beta1");
    sc->add_option("--beta2", a.beta2, "adam beta2");
    sc->add_option("--adam-eps", a.adam_eps, "adam epsilon");
    sc->add_option("--weight-decay", a.weight_decay, "decoupled weight decay");
}

TrainOptions train_options_of(const TrainArgs& a) {
    TrainOptions t;
    t.steps = a.steps;
    t.batch_size = a.batch_size;
    t.log_every = a.log_every;
    t.adam.lr = a.lr;
    t.adam.beta1 = a.beta1;
    t.adam.beta2 = a.beta2;
    t.adam.eps = a.adam_eps;
    t.adam.weight_decay = a.weight_decay;
    return t;
}

std::vector<std::pair<std::string, std::string>> adam_cfg(const TrainArgs& a) {
    return {{"lr", fmt(a.lr)},
            {"beta1", fmt(a.beta1)},
            {"beta2", fmt(a.beta2)},
            {"adam_eps", fmt(a.adam_eps)},
            {"weight_decay", fmt(a.weight_decay)},
            {"steps", std::to_string(a.steps)},
            {"batch_size", std::to_string(a.batch_size)},
            {"log_every", std::to_string(a.log_every)}};
}

void cmd_train(const TrainArgs& a, const TrainModelOpts& set) {
    Vocabulary vocab = load_vocab(a.vocab);
    TokenStream stream = encode(read_corpus_file(a.corpus), vocab);
    auto [train_part, eval_part] = split_stream(stream, a.eval_fraction, a.split_seed);

    ModelConfig mc = a.preset.empty() ? ModelConfig{} : preset_config(a.preset);
    if (set.model_type->count()) mc.model_type = model_type_from_string(a.model_type);
    if (set.layers->count()) mc.layers = a.layers;
    if (set.hidden->count()) mc.hidden_size = a.hidden_size;
    if (set.embed->count()) mc.embed_size = a.embed_size;
    if (set.heads->count()) mc.heads = a.heads;
    if (set.inter->count()) mc.intermediate_size = a.intermediate_size;
    if (set.seq_len->count()) mc.seq_len = a.seq_len;
    if (set.mask_rate->count()) mc.mask_rate = a.mask_rate;
    mc.vocab_size = vocab.size();

    Checkpoint ck = train_joint(mc, train_part, a.seed, train_options_of(a));
    ck.eval_fraction = a.eval_fraction;
    ck.split_seed = a.split_seed;
    save_checkpoint(ck, a.out);

    auto cfg = adam_cfg(a);
    cfg.insert(cfg.end(),
               {{"corpus", a.corpus},
                {"vocab", a.vocab},
                {"model_type", model_type_name(mc.model_type)},
                {"layers", std::to_string(mc.layers)},
                {"hidden_size", std::to_string(mc.hidden_size)},
                {"embed_size", std::to_string(mc.embed_size)},
                {"heads", std::to_string(mc.heads)},
                {"intermediate_size", std::to_string(mc.intermediate_size)},
                {"seq_len", std::to_string(mc.seq_len)},
                {"mask_rate", fmt(mc.mask_rate)},
                {"vocab_size", std::to_string(mc.vocab_size)},
                {"seed", std::to_string(a.seed)},
                {"eval_fraction", fmt(a.eval_fraction)},
                {"split_seed", std::to_string(a.split_seed)}});
    write_manifest(a.out, "train", cfg, std::to_string(a.seed));

    std::cout << "trained " << model_type_name(mc.model_type) << " for " << a.steps
              << " steps";
    if (!ck.loss_history.empty()) {
        std::cout << ", mean loss " << ck.loss_history.front() << " -> "
                  << ck.loss_history.back();
    }
    std::cout << " -> " << a.out << "\n";
}

// ---- train-heads ----

struct HeadsArgs {
    std::string ckpt, corpus, vocab, out;
    TrainArgs train; // steps/batch/log_every/adam reused
    std::uint64_t seed = 0;
};

void cmd_train_heads(const HeadsArgs& a, bool seed_set) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Vocabulary vocab = load_vocab(a.vocab);
    check_vocab_matches(vocab, ck);
    TokenStream stream = encode(read_corpus_file(a.corpus), vocab);
    auto [train_part, eval_part] = split_stream(stream, ck.eval_fraction, ck.split_seed);

    std::uint64_t seed = seed_set ? a.seed : ck.seed;
    train_heads(ck, train_part, seed, train_options_of(a.train));
    if (eval_part.ids.empty()) {
        std::cerr << "note: eval split is empty, ordering towers on the training split\n";
    }
    const TokenStream& ordering = eval_part.ids.empty() ? train_part : eval_part;
    order_towers(ck, ordering, a.train.batch_size);
    save_checkpoint(ck, a.out);

    auto cfg = adam_cfg(a.train);
    cfg.insert(cfg.end(), {{"ckpt", a.ckpt},
                           {"corpus", a.corpus},
                           {"vocab", a.vocab},
                           {"seed", std::to_string(seed)}});
    write_manifest(a.out, "train-heads", cfg, std::to_string(seed));

    std::cout << "heads trained for " << a.train.steps << " steps, primary tower "
              << ck.tower_order << (ck.order_tie ? " (tie)" : "") << " -> " << a.out
              << "\n";
}

// ---- score ----

struct ScoreArgs {
    std::string ckpt, corpus, vocab, out, split = "eval";
    std::size_t batch_size = 16;
    bool all_positions = false;
};

void cmd_score(const ScoreArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Vocabulary vocab = load_vocab(a.vocab);
    check_vocab_matches(vocab, ck);
    TokenStream stream = encode(read_corpus_file(a.corpus), vocab);

    TokenStream selected;
    if (a.split == "all") {
        selected = std::move(stream);
    } else {
        auto [train_part, eval_part] = split_stream(stream, ck.eval_fraction,
                                                    ck.split_seed);
        selected = a.split == "train" ? std::move(train_part) : std::move(eval_part);
        if (selected.ids.empty()) {
            throw std::runtime_error("the " + a.split +
                                     " split is empty; use --split all");
        }
    }

    PreferenceVector pv = compute_preference(ck, selected, vocab, a.batch_size,
                                             a.all_positions);
    save_preference(pv, a.out);

    std::size_t defined = 0;
    for (std::size_t id = 0; id < pv.vocab_size; ++id) defined += pv.defined(id);
    write_manifest(a.out, "score",
                   {{"ckpt", a.ckpt},
                    {"corpus", a.corpus},
                    {"vocab", a.vocab},
                    {"split", a.split},
                    {"batch_size", std::to_string(a.batch_size)},
                    {"all_positions", a.all_positions ? "1" : "0"}},
                   std::to_string(ck.seed));
    std::cout << "scored " << defined << " tokens -> " << a.out << "\n";
}

// ---- correlate ----

struct CorrelateArgs {
    std::vector<std::string> files;
    std::string out;
    std::size_t k = 500;
};

void cmd_correlate(const CorrelateArgs& a) {
    std::vector<PreferenceVector> pvs;
    pvs.reserve(a.files.size());
    for (const std::string& f : a.files) pvs.push_back(load_preference(f));

    const std::size_t n = pvs.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = i + 1; j < n; ++j) {
            double r = correlate_topk(pvs[i], pvs[j], a.k);
            m[i][j] = r;
            m[j][i] = r; // mirrored value, symmetric by construction
        }
    }

    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + a.out);
    out << "#twintower-correlation v1\n";
    out << "k\t" << a.k << '\n';
    out << "files";
    for (const std::string& f : a.files) out << '\t' << f;
    out << '\n';
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            if (j) out << '\t';
            out << fmt(m[i][j]);
        }
        out << '\n';
    }
    if (!out) throw std::runtime_error("failed writing " + a.out);

    std::string joined;
    for (const std::string& f : a.files) {
        if (!joined.empty()) joined += ';';
        joined += f;
    }
    write_manifest(a.out, "correlate",
                   {{"files", joined}, {"k", std::to_string(a.k)}}, "-");
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j < n; ++j) {
            std::printf("%s%8.4f", j ? " " : "", m[i][j]);
        }
        std::printf("\n");
    }
}

// ---- pos-report ----

struct PosArgs {
    std::string pref, vocab, pos_table, out;
    std::size_t bins = 41;
    std::vector<std::string> tags;
};

json pos_json(const PreferenceVector& pv, const std::vector<std::string>& tags_by_id,
              const std::vector<std::string>& tags, std::size_t bins) {
    PosReport rep = pos_report(pv, tags_by_id, tags, bins);
    json groups = json::array();
    for (const PosGroup& g : rep.groups) {
        groups.push_back({{"tag", g.tag},
                          {"tokens", g.values.size()},
                          {"mean", g.mean},
                          {"median", g.median},
                          {"counts", g.bin_counts}});
    }
    return {{"bins", bins}, {"bin_edges", rep.bin_edges}, {"groups", groups}};
}

void cmd_pos_report(const PosArgs& a) {
    Vocabulary vocab = load_vocab(a.vocab);
    PreferenceVector pv = load_preference(a.pref);
    check_pref_matches(pv, vocab, a.pref);
    std::vector<std::string> tags_by_id = load_pos_table(a.pos_table, vocab);
    std::vector<std::string> tags = a.tags.empty() ? default_pos_tags() : a.tags;

    json j = pos_json(pv, tags_by_id, tags, a.bins);
    std::ofstream out(a.out, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + a.out);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + a.out);

    std::string joined;
    for (const std::string& t : tags) {
        if (!joined.empty()) joined += ';';
        joined += t;
    }
    write_manifest(a.out, "pos-report",
                   {{"pref", a.pref},
                    {"vocab", a.vocab},
                    {"pos_table", a.pos_table},
                    {"bins", std::to_string(a.bins)},
                    {"tags", joined}},
                   "-");
    std::cout << "pos report over " << j["groups"].size() << " tags -> " << a.out
              << "\n";
}

// ---- ica ----

struct IcaArgs {
    std::string ckpt, corpus, vocab, out, clusters;
    std::size_t d = 0; // 0 = min(128, embed_size)
    std::size_t max_samples = 200000;
    std::uint64_t sample_seed = 7, max_iter = 5000;
    double lr = 0.01, tol = 1e-4, threshold = 2.5;
    bool paper_literal = false;
};

json cluster_json(const ClusterTable& table) {
    json clusters = json::array();
    for (const Cluster& c : table.clusters) {
        if (c.members.empty()) continue;
        clusters.push_back({{"dim", c.dim},
                            {"sign", c.sign},
                            {"size", c.members.size()},
                            {"members", c.members}});
    }
    return {{"threshold", table.threshold},
            {"histogram", table.count_histogram},
            {"clusters", clusters}};
}

void cmd_ica(const IcaArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Vocabulary vocab = load_vocab(a.vocab);
    check_vocab_matches(vocab, ck);
    TokenStream stream = encode(read_corpus_file(a.corpus), vocab);

    const Tensor& E = ck.model.params.value(ck.model.E);
    SampleSet sample = sample_embeddings(stream, E, a.max_samples, a.sample_seed);
    std::size_t d = a.d ? a.d : std::min<std::size_t>(128, E.dim(1));
    PcaOut pca = pca_reduce(sample, d, a.paper_literal);
    IcaModel ica = ica_fit(pca.P, a.lr, a.max_iter, a.tol);
    Tensor y = token_components(E, pca.basis, ica);

    std::vector<std::string> tokens(vocab.size());
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        tokens[id] = vocab.token(static_cast<int>(id));
    }
    save_components(y, tokens, a.out);

    if (!a.clusters.empty()) {
        ClusterTable table = extract_clusters(y, a.threshold);
        std::ofstream out(a.clusters, std::ios::binary);
        if (!out) throw std::runtime_error("cannot open " + a.clusters);
        out << cluster_json(table).dump(2) << '\n';
        if (!out) throw std::runtime_error("failed writing " + a.clusters);
    }

    write_manifest(a.out, "ica",
                   {{"ckpt", a.ckpt},
                    {"corpus", a.corpus},
                    {"vocab", a.vocab},
                    {"d", std::to_string(d)},
                    {"max_samples", std::to_string(a.max_samples)},
                    {"sample_seed", std::to_string(a.sample_seed)},
                    {"lr", fmt(a.lr)},
                    {"max_iter", std::to_string(a.max_iter)},
                    {"tol", fmt(a.tol)},
                    {"threshold", fmt(a.threshold)},
                    {"paper_literal", a.paper_literal ? "1" : "0"}},
                   std::to_string(a.sample_seed));
    std::cout << "ica d=" << d << " " << (ica.converged ? "converged" : "stopped")
              << " after " << ica.iterations << " iterations (update norm "
              << ica.final_update_norm << ") -> " << a.out << "\n";
}

// ---- report ----

struct ReportArgs {
    std::string ckpt, vocab, pos_table, components, out_json, out_text;
    std::vector<std::string> prefs;
    std::size_t k = 500, freq_k = 5000, bins = 41;
    double threshold = 2.5;
    std::vector<std::string> tags;
};

void cmd_report(const ReportArgs& a) {
    Checkpoint ck = load_checkpoint(a.ckpt);
    Vocabulary vocab = load_vocab(a.vocab);
    std::vector<PreferenceVector> pvs;
    for (const std::string& f : a.prefs) {
        pvs.push_back(load_preference(f));
        check_pref_matches(pvs.back(), vocab, f);
    }
    std::vector<std::string> tags_by_id = load_pos_table(a.pos_table, vocab);
    std::vector<std::string> tags = a.tags.empty() ? default_pos_tags() : a.tags;
    auto [y, ytokens] = load_components(a.components);
    if (ytokens.size() != vocab.size()) {
        throw std::runtime_error("components file " + a.components +
                                 " does not match the vocabulary");
    }

    json j;

    j["ordering"] = {{"tower_order", ck.tower_order},
                     {"order_tie", ck.order_tie},
                     {"seed", ck.seed},
                     {"phase1_steps", ck.phase1_steps},
                     {"phase2_steps", ck.phase2_steps}};
    if (!ck.loss_history.empty()) {
        j["ordering"]["final_joint_loss"] = ck.loss_history.back();
    }
    if (!ck.head1_history.empty()) {
        j["ordering"]["final_head_losses"] = {ck.head1_history.back(),
                                              ck.head2_history.back()};
    }

    const std::size_t n = pvs.size();
    std::vector<std::vector<double>> m(n, std::vector<double>(n, 1.0));
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j2 = i + 1; j2 < n; ++j2) {
            double r = correlate_topk(pvs[i], pvs[j2], a.k);
            m[i][j2] = r;
            m[j2][i] = r;
        }
    }
    j["correlations"] = {{"k", a.k}, {"files", a.prefs}, {"matrix", m}};

    j["pos"] = pos_json(pvs[0], tags_by_id, tags, a.bins);

    j["frequency"] = {{"k", a.freq_k},
                      {"spearman", frequency_correlation(pvs[0], vocab, a.freq_k)}};

    ClusterTable table = extract_clusters(y, a.threshold);
    ClusterPreferenceTable ranked = cluster_preference(table, pvs[0]);
    json ranked_json = json::array();
    for (const ClusterSummary& c : ranked.ranked) {
        ranked_json.push_back({{"rank", c.rank},
                               {"dim", c.dim},
                               {"sign", c.sign},
                               {"label", c.label},
                               {"members", c.member_count},
                               {"scored_members", c.scored_members},
                               {"mean_s", c.mean_s}});
    }
    j["clusters"] = {{"threshold", a.threshold},
                     {"histogram", table.count_histogram},
                     {"ranked", ranked_json},
                     {"skipped", ranked.skipped.size()}};

    std::ofstream out(a.out_json, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open " + a.out_json);
    out << j.dump(2) << '\n';
    if (!out) throw std::runtime_error("failed writing " + a.out_json);

    // human-readable mirror of the same sections
    std::ofstream txt(a.out_text, std::ios::binary);
    if (!txt) throw std::runtime_error("cannot open " + a.out_text);
    char line[256];
    txt << "== ordering ==\n";
    txt << "primary tower: " << ck.tower_order << (ck.order_tie ? " (tie)" : "")
        << "\n";
    txt << "phase 1 steps: " << ck.phase1_steps << ", phase 2 steps: "
        << ck.phase2_steps << ", seed: " << ck.seed << "\n";
    if (!ck.head1_history.empty()) {
        std::snprintf(line, sizeof line, "final head losses: %.6g / %.6g\n",
                      ck.head1_history.back(), ck.head2_history.back());
        txt << line;
    }
    txt << "\n== correlations ==\n";
    txt << "top-" << a.k << " pearson between runs:\n";
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j2 = 0; j2 < n; ++j2) {
            std::snprintf(line, sizeof line, "%s%8.4f", j2 ? " " : "", m[i][j2]);
            txt << line;
        }
        txt << "  " << a.prefs[i] << "\n";
    }
    txt << "\n== pos ==\n";
    for (const auto& g : j["pos"]["groups"]) {
        std::snprintf(line, sizeof line, "%-6s tokens %5zu  mean %9.4f  median %9.4f\n",
                      g["tag"].get<std::string>().c_str(),
                      g["tokens"].get<std::size_t>(), g["mean"].get<double>(),
                      g["median"].get<double>());
        txt << line;
    }
    txt << "\n== frequency ==\n";
    std::snprintf(line, sizeof line,
                  "spearman between preference and token frequency (top %zu): %.4f\n",
                  a.freq_k, j["frequency"]["spearman"].get<double>());
    txt << line;
    txt << "\n== clusters ==\n";
    std::snprintf(line, sizeof line,
                  "threshold %.2f, %zu scored clusters, %zu skipped\n", a.threshold,
                  ranked.ranked.size(), ranked.skipped.size());
    txt << line;
    for (const ClusterSummary& c : ranked.ranked) {
        std::string label;
        for (const std::string& t : c.label) {
            if (!label.empty()) label += ", ";
            label += t;
        }
        std::snprintf(line, sizeof line,
                      "rank %2zu: dim %3zu (%c)  mean s %9.4f  members %4zu  [%s]\n",
                      c.rank, c.dim, c.sign > 0 ? '+' : '-', c.mean_s,
                      c.member_count, label.c_str());
        txt << line;
    }
    if (!txt) throw std::runtime_error("failed writing " + a.out_text);

    std::string joined;
    for (const std::string& f : a.prefs) {
        if (!joined.empty()) joined += ';';
        joined += f;
    }
    write_manifest(a.out_json, "report",
                   {{"ckpt", a.ckpt},
                    {"vocab", a.vocab},
                    {"pos_table", a.pos_table},
                    {"components", a.components},
                    {"prefs", joined},
                    {"k", std::to_string(a.k)},
                    {"freq_k", std::to_string(a.freq_k)},
                    {"bins", std::to_string(a.bins)},
                    {"threshold", fmt(a.threshold)}},
                   std::to_string(ck.seed));
    std::cout << "report -> " << a.out_json << " and " << a.out_text << "\n";
}

void configure(CLI::App* sc) {
    // Parsed by expand_config_args before the real parse; registered here so
    // the flag is accepted and documented.
    static std::string ignored;
    sc->add_option("--config", ignored, "key=value config file, '#' comments");
}

std::string trim(const std::string& s) {
    std::size_t b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    std::size_t e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Applies --config files by appending "--key=value" for every key the command
// line does not already set, so explicit flags always win. Unknown keys are
// usage errors. CLI11 only reads config files on the root app, which cannot
// see subcommand options, hence the manual expansion.
void expand_config_args(const CLI::App& app, std::vector<std::string>& args) {
    const CLI::App* sc = nullptr;
    std::size_t sub_pos = 0;
    for (std::size_t i = 0; i < args.size(); ++i) {
        if (!args[i].empty() && args[i][0] != '-') {
            sc = app.get_subcommand_no_throw(args[i]);
            sub_pos = i;
            break;
        }
    }
    if (!sc) return;

    std::string path;
    for (std::size_t i = sub_pos + 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            path = args[i + 1];
        } else if (args[i].rfind("--config=", 0) == 0) {
            path = args[i].substr(9);
        }
    }
    if (path.empty()) return;

    std::ifstream in(path);
    if (!in) throw CLI::FileError::Missing(path);
    std::map<std::string, std::string> kv;
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        std::string t = trim(line);
        if (t.empty() || t[0] == '#') continue;
        std::size_t eq = t.find('=');
        if (eq == std::string::npos) {
            throw CLI::ConfigError("config file " + path + " line " +
                                   std::to_string(lineno) + ": expected key=value");
        }
        kv[trim(t.substr(0, eq))] = trim(t.substr(eq + 1));
    }

    for (const auto& [k, v] : kv) {
        if (k == "config" || sc->get_option_no_throw("--" + k) == nullptr) {
            throw CLI::ConfigError("unknown config key \"" + k + "\" in " + path);
        }
        bool on_cli = false;
        for (std::size_t i = sub_pos + 1; i < args.size() && !on_cli; ++i) {
            on_cli = args[i] == "--" + k || args[i].rfind("--" + k + "=", 0) == 0;
        }
        if (!on_cli) args.push_back("--" + k + "=" + v);
    }
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"two-tower language model toolkit"};
    app.require_subcommand(1);

    // build-vocab
    auto bv = std::make_shared<BuildVocabArgs>();
    {
        CLI::App* sc = app.add_subcommand("build-vocab",
                                          "build a vocabulary from a corpus");
        sc->add_option("--corpus", bv->corpus, "corpus text file")->required();
        sc->add_option("--out", bv->out, "vocabulary TSV output")->required();
        sc->add_option("--max-vocab", bv->max_vocab, "maximum vocabulary size");
        sc->add_option("--min-count", bv->min_count,
                       "fold tokens rarer than this into [UNK]");
        configure(sc);
        sc->callback([bv] { cmd_build_vocab(*bv); });
    }

    // train
    auto tr = std::make_shared<TrainArgs>();
    auto trset = std::make_shared<TrainModelOpts>();
    {
        CLI::App* sc = app.add_subcommand("train", "phase 1: joint two-tower training");
        sc->add_option("--corpus", tr->corpus, "corpus text file")->required();
        sc->add_option("--vocab", tr->vocab, "vocabulary TSV")->required();
        sc->add_option("--out", tr->out, "checkpoint output")->required();
        sc->add_option("--preset", tr->preset,
                       "named shape: elmo gpt bert-base bert-large tiny-elmo "
                       "tiny-gpt tiny-bert");
        trset->model_type = sc->add_option("--model-type", tr->model_type,
                                           "cloze-lstm, causal-tfm, or mlm-tfm");
        trset->layers = sc->add_option("--layers", tr->layers, "layers per tower");
        trset->hidden = sc->add_option("--hidden-size", tr->hidden_size,
                                       "hidden width per tower");
        trset->embed = sc->add_option("--embed-size", tr->embed_size,
                                      "tied embedding width");
        trset->heads = sc->add_option("--heads", tr->heads, "attention heads");
        trset->inter = sc->add_option("--intermediate-size", tr->intermediate_size,
                                      "transformer feed-forward width");
        trset->seq_len = sc->add_option("--seq-len", tr->seq_len, "sequence length");
        trset->mask_rate = sc->add_option("--mask-rate", tr->mask_rate,
                                          "mlm mask fraction");
        sc->add_option("--seed", tr->seed, "training seed");
        sc->add_option("--steps", tr->steps, "optimizer steps");
        sc->add_option("--batch-size", tr->batch_size, "sequences per step");
        sc->add_option("--log-every", tr->log_every, "loss history interval");
        sc->add_option("--eval-fraction", tr->eval_fraction,
                       "document fraction held out for evaluation");
        sc->add_option("--split-seed", tr->split_seed, "held-out split seed");
        add_adam_options(sc, *tr);
        configure(sc);
        sc->callback([tr, trset] { cmd_train(*tr, *trset); });
    }

    // train-heads
    auto th = std::make_shared<HeadsArgs>();
    CLI::Option* th_seed = nullptr;
    {
        CLI::App* sc = app.add_subcommand(
            "train-heads", "phase 2: per-tower heads against the frozen trunk");
        sc->add_option("--ckpt", th->ckpt, "phase-1 checkpoint")->required();
        sc->add_option("--corpus", th->corpus, "corpus text file")->required();
        sc->add_option("--vocab", th->vocab, "vocabulary TSV")->required();
        sc->add_option("--out", th->out, "checkpoint output")->required();
        th_seed = sc->add_option("--seed", th->seed,
                                 "head seed (defaults to the checkpoint seed)");
        th->train.steps = 1000;
        sc->add_option("--steps", th->train.steps, "optimizer steps");
        sc->add_option("--batch-size", th->train.batch_size, "sequences per step");
        sc->add_option("--log-every", th->train.log_every, "loss history interval");
        add_adam_options(sc, th->train);
        configure(sc);
        sc->callback([th, th_seed] { cmd_train_heads(*th, th_seed->count() > 0); });
    }

    // score
    auto so = std::make_shared<ScoreArgs>();
    {
        CLI::App* sc = app.add_subcommand("score",
                                          "per-token preference between towers");
        sc->add_option("--ckpt", so->ckpt, "ordered checkpoint")->required();
        sc->add_option("--corpus", so->corpus, "corpus text file")->required();
        sc->add_option("--vocab", so->vocab, "vocabulary TSV")->required();
        sc->add_option("--out", so->out, "preference TSV output")->required();
        sc->add_option("--split", so->split, "eval, train, or all")
            ->check(CLI::IsMember({"eval", "train", "all"}));
        sc->add_option("--batch-size", so->batch_size, "sequences per batch");
        sc->add_flag("--all-positions", so->all_positions,
                     "average over all scored positions instead of target positions");
        configure(sc);
        sc->callback([so] { cmd_score(*so); });
    }

    // correlate
    auto co = std::make_shared<CorrelateArgs>();
    {
        CLI::App* sc = app.add_subcommand("correlate",
                                          "pairwise correlation of preference files");
        sc->add_option("files", co->files, "two or more preference TSVs")->required();
        sc->add_option("--out", co->out, "correlation matrix TSV")->required();
        sc->add_option("--k", co->k, "most frequent tokens to correlate");
        configure(sc);
        sc->callback([co] {
            if (co->files.size() < 2) {
                throw CLI::ValidationError("correlate",
                                           "need at least 2 preference files");
            }
            cmd_correlate(*co);
        });
    }

    // pos-report
    auto po = std::make_shared<PosArgs>();
    {
        CLI::App* sc = app.add_subcommand("pos-report",
                                          "preference histograms by part of speech");
        sc->add_option("--pref", po->pref, "preference TSV")->required();
        sc->add_option("--vocab", po->vocab, "vocabulary TSV")->required();
        sc->add_option("--pos-table", po->pos_table, "token<TAB>UD-tag TSV")
            ->required();
        sc->add_option("--out", po->out, "JSON output")->required();
        sc->add_option("--bins", po->bins, "histogram bins");
        sc->add_option("--tags", po->tags, "UD tags to report");
        configure(sc);
        sc->callback([po] { cmd_pos_report(*po); });
    }

    // ica
    auto ic = std::make_shared<IcaArgs>();
    {
        CLI::App* sc = app.add_subcommand(
            "ica", "independent components of the tied embeddings");
        sc->add_option("--ckpt", ic->ckpt, "checkpoint")->required();
        sc->add_option("--corpus", ic->corpus, "corpus text file")->required();
        sc->add_option("--vocab", ic->vocab, "vocabulary TSV")->required();
        sc->add_option("--out", ic->out, "per-token component TSV")->required();
        sc->add_option("--clusters", ic->clusters, "optional cluster JSON output");
        sc->add_option("--d", ic->d, "component count (default min(128, embed))");
        sc->add_option("--max-samples", ic->max_samples, "occurrence sample size");
        sc->add_option("--sample-seed", ic->sample_seed, "sampling seed");
        sc->add_option("--lr", ic->lr, "ica learning rate");
        sc->add_option("--max-iter", ic->max_iter, "ica iteration cap");
        sc->add_option("--tol", ic->tol, "update norm stopping tolerance");
        sc->add_option("--threshold", ic->threshold, "cluster threshold");
        sc->add_flag("--paper-literal-pca", ic->paper_literal,
                     "scale projections by sqrt(S) instead of whitening");
        configure(sc);
        sc->callback([ic] { cmd_ica(*ic); });
    }

    // report
    auto re = std::make_shared<ReportArgs>();
    {
        CLI::App* sc = app.add_subcommand("report",
                                          "merge all analyses into one report");
        sc->add_option("--ckpt", re->ckpt, "ordered checkpoint")->required();
        sc->add_option("--vocab", re->vocab, "vocabulary TSV")->required();
        sc->add_option("--pref", re->prefs, "preference TSVs (first is primary)")
            ->required();
        sc->add_option("--pos-table", re->pos_table, "token<TAB>UD-tag TSV")
            ->required();
        sc->add_option("--components", re->components, "per-token component TSV")
            ->required();
        sc->add_option("--out-json", re->out_json, "JSON report output")->required();
        sc->add_option("--out-text", re->out_text, "text report output")->required();
        sc->add_option("--k", re->k, "tokens for run-to-run correlation");
        sc->add_option("--freq-k", re->freq_k, "tokens for frequency correlation");
        sc->add_option("--bins", re->bins, "pos histogram bins");
        sc->add_option("--threshold", re->threshold, "cluster threshold");
        sc->add_option("--tags", re->tags, "UD tags to report");
        configure(sc);
        sc->callback([re] { cmd_report(*re); });
    }

    try {
        std::vector<std::string> args(argv + 1, argv + argc);
        expand_config_args(app, args);
        std::reverse(args.begin(), args.end());
        app.parse(std::move(args));
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
