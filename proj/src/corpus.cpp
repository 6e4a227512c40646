#include "twintower/corpus.hpp"

#include "twintower/rng.hpp"

#include <algorithm>
#include <cctype>
#include <fstream>
#include <sstream>
#include <stdexcept>

namespace twintower {

namespace {

const char* kSpecialNames[kNumSpecials] = {"[UNK]", "[MASK]", "[PAD]"};

bool is_word_byte(unsigned char c) {
    return std::isalnum(c) != 0 || c >= 0x80;
}

} // namespace

int Vocabulary::id_of(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnkId : it->second;
}

void Vocabulary::push(std::string token, std::uint64_t count) {
    index_[token] = static_cast<int>(tokens_.size());
    tokens_.push_back(std::move(token));
    freq_.push_back(count);
}

std::vector<std::string> tokenize(const std::string& text) {
    std::vector<std::string> out;
    std::string word;
    for (unsigned char c : text) {
        if (is_word_byte(c)) {
            word.push_back(static_cast<char>(std::tolower(c)));
            continue;
        }
        if (!word.empty()) {
            out.push_back(std::move(word));
            word.clear();
        }
        if (!std::isspace(c)) out.emplace_back(1, static_cast<char>(c));
    }
    if (!word.empty()) out.push_back(std::move(word));
    return out;
}

Vocabulary build_vocab(const std::string& text, std::size_t max_vocab,
                       std::uint64_t min_count) {
    if (max_vocab < static_cast<std::size_t>(kNumSpecials)) {
        throw std::invalid_argument("vocab too small");
    }
    const auto words = tokenize(text);
    if (words.empty()) throw std::runtime_error("empty corpus");

    std::unordered_map<std::string, std::uint64_t> counts;
    for (const auto& w : words) ++counts[w];

    std::vector<std::pair<std::string, std::uint64_t>> kept;
    kept.reserve(counts.size());
    std::uint64_t folded = 0;
    for (auto& [tok, n] : counts) {
        if (n >= min_count) {
            kept.emplace_back(tok, n);
        } else {
            folded += n;
        }
    }
    std::sort(kept.begin(), kept.end(), [](const auto& a, const auto& b) {
        if (a.second != b.second) return a.second > b.second;
        return a.first < b.first;
    });
    const std::size_t cap = max_vocab - kNumSpecials;
    for (std::size_t i = cap; i < kept.size(); ++i) folded += kept[i].second;
    kept.resize(std::min(kept.size(), cap));

    Vocabulary v;
    v.push(kSpecialNames[0], folded);
    v.push(kSpecialNames[1], 0);
    v.push(kSpecialNames[2], 0);
    for (auto& [tok, n] : kept) v.push(std::move(tok), n);
    return v;
}

void save_vocab(const Vocabulary& vocab, const std::string& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out) throw std::runtime_error("cannot open " + path);
    out << "#twintower-vocab v1\n";
    for (std::size_t id = 0; id < vocab.size(); ++id) {
        out << vocab.token(static_cast<int>(id)) << '\t'
            << vocab.freq(static_cast<int>(id)) << '\n';
    }
    if (!out) throw std::runtime_error("write failed: " + path);
}

Vocabulary load_vocab(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::string line;
    if (!std::getline(in, line) || line != "#twintower-vocab v1") {
        throw std::runtime_error(
            "not a twintower vocab file (expected \"#twintower-vocab v1\"): " + path);
    }
    Vocabulary v;
    std::size_t lineno = 1;
    while (std::getline(in, line)) {
        ++lineno;
        if (line.empty()) continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0) {
            throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                     ": expected token<TAB>count");
        }
        std::uint64_t count = 0;
        try {
            count = std::stoull(line.substr(tab + 1));
        } catch (const std::exception&) {
            throw std::runtime_error(path + " line " + std::to_string(lineno) +
                                     ": bad count");
        }
        v.push(line.substr(0, tab), count);
    }
    for (int i = 0; i < kNumSpecials; ++i) {
        if (v.size() <= static_cast<std::size_t>(i) || v.token(i) != kSpecialNames[i]) {
            throw std::runtime_error(
            "not a twintower vocab file (expected \"#twintower-vocab v1\"): " + path);
        }
    }
    return v;
}

TokenStream encode(const std::string& text, const Vocabulary& vocab) {
    TokenStream stream;
    std::string doc;
    std::istringstream lines(text);
    std::string line;
    auto flush_doc = [&] {
        if (doc.empty()) return;
        for (const auto& tok : tokenize(doc)) stream.ids.push_back(vocab.id_of(tok));
        if (stream.doc_boundaries.empty() ||
            stream.doc_boundaries.back() != stream.ids.size()) {
            stream.doc_boundaries.push_back(stream.ids.size());
        }
        doc.clear();
    };
    while (std::getline(lines, line)) {
        const bool blank = line.find_first_not_of(" \t\r") == std::string::npos;
        if (blank) {
            flush_doc();
        } else {
            doc += line;
            doc += '\n';
        }
    }
    flush_doc();
    return stream;
}

std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab) {
    std::vector<std::string> out;
    out.reserve(ids.size());
    for (int id : ids) out.push_back(vocab.token(id));
    return out;
}

TaskKind task_from_string(const std::string& name) {
    if (name == "cloze") return TaskKind::cloze;
    if (name == "causal") return TaskKind::causal;
    if (name == "mlm") return TaskKind::mlm;
    throw std::invalid_argument("unknown task: " + name);
}

std::string task_name(TaskKind task) {
    switch (task) {
        case TaskKind::cloze: return "cloze";
        case TaskKind::causal: return "causal";
        case TaskKind::mlm: return "mlm";
    }
    return "?";
}

std::vector<Batch> make_batches(const TokenStream& stream, TaskKind task,
                                std::size_t seq_len, std::size_t batch_size,
                                double mask_rate, std::uint64_t seed) {
    if (seq_len < 2) throw std::invalid_argument("seq_len must be at least 2");
    if (batch_size == 0) throw std::invalid_argument("batch_size must be positive");
    if (task == TaskKind::mlm && (mask_rate <= 0.0 || mask_rate >= 1.0)) {
        throw std::invalid_argument("mask_rate must be in (0, 1)");
    }

    std::vector<std::size_t> starts;
    std::size_t doc_start = 0;
    for (std::size_t end : stream.doc_boundaries) {
        for (std::size_t pos = doc_start; pos + seq_len <= end; pos += seq_len) {
            starts.push_back(pos);
        }
        doc_start = end;
    }
    if (starts.empty()) throw std::runtime_error("corpus too short");

    Rng rng(seed);
    rng.shuffle(starts);

    const std::size_t n_masked =
        task == TaskKind::mlm
            ? static_cast<std::size_t>(std::llround(mask_rate * static_cast<double>(seq_len)))
            : 0;

    std::vector<Batch> batches;
    std::vector<std::size_t> order(seq_len);
    for (std::size_t off = 0; off < starts.size(); off += batch_size) {
        const std::size_t b = std::min(batch_size, starts.size() - off);
        Batch batch;
        batch.batch = b;
        batch.len = seq_len;
        batch.task = task;
        batch.inputs.resize(b * seq_len);
        batch.targets.resize(b * seq_len);
        batch.score_mask.assign(b * seq_len, 1);
        for (std::size_t r = 0; r < b; ++r) {
            const int* src = stream.ids.data() + starts[off + r];
            int* in = batch.inputs.data() + r * seq_len;
            int* tg = batch.targets.data() + r * seq_len;
            std::uint8_t* sm = batch.score_mask.data() + r * seq_len;
            switch (task) {
                case TaskKind::cloze:
                    std::copy(src, src + seq_len, in);
                    std::copy(src, src + seq_len, tg);
                    break;
                case TaskKind::causal:
                    std::copy(src, src + seq_len, in);
                    std::copy(src + 1, src + seq_len, tg);
                    tg[seq_len - 1] = kPadId;
                    sm[seq_len - 1] = 0;
                    break;
                case TaskKind::mlm: {
                    std::copy(src, src + seq_len, in);
                    std::copy(src, src + seq_len, tg);
                    std::fill(sm, sm + seq_len, 0);
                    for (std::size_t i = 0; i < seq_len; ++i) order[i] = i;
                    for (std::size_t i = 0; i < n_masked; ++i) {
                        const std::size_t j = i + rng.below(seq_len - i);
                        std::swap(order[i], order[j]);
                        in[order[i]] = kMaskId;
                        sm[order[i]] = 1;
                    }
                    break;
                }
            }
        }
        batches.push_back(std::move(batch));
    }
    return batches;
}

std::pair<TokenStream, TokenStream> split_stream(const TokenStream& stream,
                                                 double eval_fraction,
                                                 std::uint64_t seed) {
    if (eval_fraction < 0.0 || eval_fraction >= 1.0) {
        throw std::invalid_argument("eval_fraction must be in [0, 1)");
    }
    const std::size_t n_docs = stream.doc_boundaries.size();
    std::vector<std::uint8_t> to_eval(n_docs, 0);
    Rng rng(seed);
    std::size_t n_eval = 0;
    for (std::size_t d = 0; d < n_docs; ++d) {
        if (rng.uniform() < eval_fraction) {
            to_eval[d] = 1;
            ++n_eval;
        }
    }
    // A nonzero fraction must yield a usable eval stream even on tiny inputs.
    if (eval_fraction > 0.0 && n_docs > 1) {
        if (n_eval == 0) to_eval[rng.below(n_docs)] = 1;
        if (n_eval == n_docs) to_eval[rng.below(n_docs)] = 0;
    }

    TokenStream train, eval;
    std::size_t doc_start = 0;
    for (std::size_t d = 0; d < n_docs; ++d) {
        const std::size_t end = stream.doc_boundaries[d];
        TokenStream& dst = to_eval[d] ? eval : train;
        dst.ids.insert(dst.ids.end(), stream.ids.begin() + doc_start,
                       stream.ids.begin() + end);
        dst.doc_boundaries.push_back(dst.ids.size());
        doc_start = end;
    }
    return {std::move(train), std::move(eval)};
}

bool is_ud_tag(const std::string& tag) {
    static const char* kTags[] = {"ADJ",  "ADP", "ADV",  "AUX",  "CCONJ", "DET",
                                  "INTJ", "NOUN", "NUM",  "PART", "PRON",  "PROPN",
                                  "PUNCT", "SCONJ", "SYM", "VERB", "X"};
    for (const char* t : kTags) {
        if (tag == t) return true;
    }
    return false;
}

std::vector<std::string> load_pos_table(const std::string& path, const Vocabulary& vocab) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::vector<std::string> tags(vocab.size(), "X");
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty() || line[0] == '#') continue;
        const auto tab = line.find('\t');
        if (tab == std::string::npos || tab == 0 || tab + 1 == line.size()) {
            throw std::runtime_error("pos table line " + std::to_string(lineno) +
                                     ": expected token<TAB>tag");
        }
        const std::string token = line.substr(0, tab);
        const std::string tag = line.substr(tab + 1);
        if (!is_ud_tag(tag)) {
            throw std::runtime_error("pos table line " + std::to_string(lineno) +
                                     ": unknown tag \"" + tag + "\"");
        }
        if (vocab.contains(token)) {
            tags[static_cast<std::size_t>(vocab.id_of(token))] = tag;
        }
    }
    return tags;
}

std::string read_text_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw std::runtime_error("cannot open " + path);
    std::ostringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

} // namespace twintower
