#include "twintower/textgen.hpp"

#include "twintower/rng.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <stdexcept>
#include <unordered_set>

namespace twintower {

namespace {

enum class Slot {
    det,
    noun,
    verb,
    adj,
    opt_adj, // adjective present half the time
    propn,
    adv,
    opt_adv,
    adp,
    aux,
    pron,
    cconj,
    sconj,
    to,
    not_,
    comma,
    stop,
};

struct Template {
    std::vector<Slot> slots;
    double weight;
};

const std::vector<Template>& templates() {
    static const std::vector<Template> t = {
        {{Slot::det, Slot::opt_adj, Slot::noun, Slot::verb, Slot::adp, Slot::det,
          Slot::opt_adj, Slot::noun, Slot::stop},
         3.0},
        {{Slot::det, Slot::noun, Slot::aux, Slot::adj, Slot::stop}, 2.0},
        {{Slot::propn, Slot::verb, Slot::det, Slot::noun, Slot::adp, Slot::det,
          Slot::noun, Slot::stop},
         2.0},
        {{Slot::propn, Slot::aux, Slot::opt_adv, Slot::adj, Slot::stop}, 2.0},
        {{Slot::pron, Slot::verb, Slot::det, Slot::opt_adj, Slot::noun, Slot::comma,
          Slot::cconj, Slot::pron, Slot::verb, Slot::adv, Slot::stop},
         1.5},
        {{Slot::det, Slot::noun, Slot::adp, Slot::propn, Slot::verb, Slot::det,
          Slot::noun, Slot::stop},
         1.5},
        {{Slot::pron, Slot::aux, Slot::verb, Slot::to, Slot::verb, Slot::det,
          Slot::noun, Slot::stop},
         1.0},
        {{Slot::sconj, Slot::det, Slot::noun, Slot::verb, Slot::comma, Slot::det,
          Slot::noun, Slot::aux, Slot::adj, Slot::stop},
         1.0},
        {{Slot::det, Slot::noun, Slot::verb, Slot::adv, Slot::stop}, 2.0},
        {{Slot::propn, Slot::cconj, Slot::propn, Slot::verb, Slot::adp, Slot::det,
          Slot::noun, Slot::stop},
         1.0},
        {{Slot::pron, Slot::aux, Slot::not_, Slot::verb, Slot::det, Slot::noun,
          Slot::stop},
         1.0},
    };
    return t;
}

// Closed classes, most frequent first; ranks feed the same Zipf law as the
// generated lexicons.
const std::vector<std::string> kDet = {"the", "a",    "this",    "that",
                                       "each", "some", "another", "no"};
const std::vector<std::string> kAdp = {"of",   "in",   "on",      "with",   "from",
                                       "under", "near", "through", "against", "between"};
const std::vector<std::string> kAux = {"is",  "was",  "are",  "were", "has",    "had",
                                       "can", "will", "must", "may",  "might", "should"};
const std::vector<std::string> kPron = {"it", "they", "she", "he",  "we",
                                        "you", "them", "her", "him", "us"};
const std::vector<std::string> kCconj = {"and", "but", "or"};
const std::vector<std::string> kSconj = {"because", "while", "when",
                                         "if",      "although", "since"};
const std::vector<std::string> kCoreAdv = {"very",  "never", "always", "often",
                                           "soon",  "again", "still",  "only"};

// Zipf-Mandelbrot weight for 1-based rank.
double zipf_weight(std::size_t rank) {
    return 1.0 / std::pow(static_cast<double>(rank) + 2.7, 1.07);
}

class Sampler {
public:
    // weights need not be normalized
    void reset(std::vector<double> weights) {
        cum_ = std::move(weights);
        for (std::size_t i = 1; i < cum_.size(); ++i) cum_[i] += cum_[i - 1];
    }
    std::size_t draw(Rng& rng) const {
        double u = rng.uniform() * cum_.back();
        auto it = std::upper_bound(cum_.begin(), cum_.end(), u);
        if (it == cum_.end()) --it;
        return static_cast<std::size_t>(it - cum_.begin());
    }

private:
    std::vector<double> cum_;
};

// Open-class lexicon: generated word forms with Zipf ranks and a home topic
// per lexeme so documents can lean on a topic.
struct Lexicon {
    std::vector<std::string> words;
    Sampler sampler;

    void rebuild(std::size_t topic, std::size_t topics, double boost) {
        std::vector<double> w(words.size());
        for (std::size_t r = 0; r < words.size(); ++r) {
            w[r] = zipf_weight(r + 1);
            if (topics > 0 && r % topics == topic) w[r] *= boost;
        }
        sampler.reset(std::move(w));
    }
};

std::string make_lexeme(Rng& rng, std::unordered_set<std::string>& used,
                        const char* suffix) {
    static const std::vector<std::string> onsets = {
        "b",  "d",  "f",  "g",  "h",  "k",  "l",  "m",  "n",  "p",  "r",
        "s",  "t",  "v",  "z",  "br", "cr", "dr", "gr", "pl", "st", "tr"};
    static const std::vector<std::string> vowels = {"a", "e",  "i",  "o",
                                                    "u", "ai", "ea", "ou"};
    static const std::vector<std::string> codas = {"",  "n",  "r", "s",  "t",
                                                   "l", "nd", "k", "st", "m"};
    for (;;) {
        std::string word;
        std::size_t syllables = 2 + rng.below(2);
        for (std::size_t s = 0; s < syllables; ++s) {
            word += onsets[rng.below(onsets.size())];
            word += vowels[rng.below(vowels.size())];
        }
        word += codas[rng.below(codas.size())];
        word += suffix;
        if (used.insert(word).second) return word;
    }
}

Lexicon build_lexicon(Rng& rng, std::unordered_set<std::string>& used,
                      std::size_t count, const char* suffix,
                      const std::vector<std::string>& seed_words = {}) {
    Lexicon lex;
    lex.words = seed_words;
    while (lex.words.size() < count) {
        lex.words.push_back(make_lexeme(rng, used, suffix));
    }
    return lex;
}

} // namespace

GeneratedText generate_corpus(const TextgenOptions& options) {
    if (options.min_tokens == 0) {
        throw std::invalid_argument("min_tokens must be at least 1");
    }
    if (options.topics == 0) {
        throw std::invalid_argument("topics must be at least 1");
    }
    Rng rng(options.seed);

    std::unordered_set<std::string> used;
    for (const auto* list : {&kDet, &kAdp, &kAux, &kPron, &kCconj, &kSconj, &kCoreAdv}) {
        for (const std::string& w : *list) used.insert(w);
    }
    used.insert("to");
    used.insert("not");

    Lexicon nouns = build_lexicon(rng, used, options.nouns, "");
    Lexicon verbs = build_lexicon(rng, used, options.verbs, "s");
    Lexicon adjectives = build_lexicon(rng, used, options.adjectives, "ic");
    Lexicon propn = build_lexicon(rng, used, options.proper_nouns, "o");
    // core adverbs take the most frequent ranks, generated ones fill the tail
    Lexicon adverbs = build_lexicon(
        rng, used, std::max(options.adverbs, kCoreAdv.size()), "ly", kCoreAdv);

    GeneratedText out;
    out.pos_table.reserve(nouns.words.size() + verbs.words.size() +
                          adjectives.words.size() + propn.words.size() +
                          adverbs.words.size() + 64);
    auto tag_all = [&](const std::vector<std::string>& words, const char* tag) {
        for (const std::string& w : words) out.pos_table.emplace_back(w, tag);
    };
    tag_all(kDet, "DET");
    tag_all(kAdp, "ADP");
    tag_all(kAux, "AUX");
    tag_all(kPron, "PRON");
    tag_all(kCconj, "CCONJ");
    tag_all(kSconj, "SCONJ");
    out.pos_table.emplace_back("to", "PART");
    out.pos_table.emplace_back("not", "PART");
    tag_all(nouns.words, "NOUN");
    tag_all(verbs.words, "VERB");
    tag_all(adjectives.words, "ADJ");
    tag_all(propn.words, "PROPN");
    tag_all(adverbs.words, "ADV");
    out.pos_table.emplace_back(".", "PUNCT");
    out.pos_table.emplace_back(",", "PUNCT");

    Sampler closed_det, closed_adp, closed_aux, closed_pron, closed_cconj,
        closed_sconj, template_pick;
    auto closed_weights = [](std::size_t n) {
        std::vector<double> w(n);
        for (std::size_t r = 0; r < n; ++r) {
            w[r] = 1.0 / std::pow(static_cast<double>(r) + 1.3, 1.2);
        }
        return w;
    };
    closed_det.reset(closed_weights(kDet.size()));
    closed_adp.reset(closed_weights(kAdp.size()));
    closed_aux.reset(closed_weights(kAux.size()));
    closed_pron.reset(closed_weights(kPron.size()));
    closed_cconj.reset(closed_weights(kCconj.size()));
    closed_sconj.reset(closed_weights(kSconj.size()));
    {
        std::vector<double> w;
        for (const Template& t : templates()) w.push_back(t.weight);
        template_pick.reset(std::move(w));
    }

    const double boost = 6.0;
    out.text.reserve(options.min_tokens * 6);

    while (out.tokens < options.min_tokens) {
        std::size_t topic = rng.below(options.topics);
        nouns.rebuild(topic, options.topics, boost);
        verbs.rebuild(topic, options.topics, boost);
        adjectives.rebuild(topic, options.topics, boost);
        propn.rebuild(topic, options.topics, boost);
        adverbs.rebuild(topic, options.topics, boost);

        if (out.documents > 0) out.text += '\n';
        ++out.documents;

        std::size_t sentences = 20 + rng.below(60);
        for (std::size_t s = 0; s < sentences; ++s) {
            const Template& tpl = templates()[template_pick.draw(rng)];
            bool first = true;
            auto emit = [&](const std::string& w) {
                if (!first) out.text += ' ';
                out.text += w;
                first = false;
                ++out.tokens;
            };
            for (Slot slot : tpl.slots) {
                switch (slot) {
                case Slot::det: emit(kDet[closed_det.draw(rng)]); break;
                case Slot::noun: emit(nouns.words[nouns.sampler.draw(rng)]); break;
                case Slot::verb: emit(verbs.words[verbs.sampler.draw(rng)]); break;
                case Slot::adj:
                    emit(adjectives.words[adjectives.sampler.draw(rng)]);
                    break;
                case Slot::opt_adj:
                    if (rng.uniform() < 0.5) {
                        emit(adjectives.words[adjectives.sampler.draw(rng)]);
                    }
                    break;
                case Slot::propn: emit(propn.words[propn.sampler.draw(rng)]); break;
                case Slot::adv: emit(adverbs.words[adverbs.sampler.draw(rng)]); break;
                case Slot::opt_adv:
                    if (rng.uniform() < 0.5) {
                        emit(adverbs.words[adverbs.sampler.draw(rng)]);
                    }
                    break;
                case Slot::adp: emit(kAdp[closed_adp.draw(rng)]); break;
                case Slot::aux: emit(kAux[closed_aux.draw(rng)]); break;
                case Slot::pron: emit(kPron[closed_pron.draw(rng)]); break;
                case Slot::cconj: emit(kCconj[closed_cconj.draw(rng)]); break;
                case Slot::sconj: emit(kSconj[closed_sconj.draw(rng)]); break;
                case Slot::to: emit("to"); break;
                case Slot::not_: emit("not"); break;
                case Slot::comma: emit(","); break;
                case Slot::stop: emit("."); break;
                }
            }
            out.text += '\n';
        }
    }
    return out;
}

void save_text(const std::string& text, const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    out << text;
    if (!out) throw std::runtime_error("failed writing output file: " + path);
}

void save_pos_table(const std::vector<std::pair<std::string, std::string>>& table,
                    const std::string& path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open output file: " + path);
    for (const auto& [token, tag] : table) {
        out << token << '\t' << tag << '\n';
    }
    if (!out) throw std::runtime_error("failed writing output file: " + path);
}

} // namespace twintower
