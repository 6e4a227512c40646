#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

namespace twintower {

// Synthetic corpus generator. Sentences come from a small template grammar
// over real closed-class words plus generated open-class lexemes with a
// Zipf rank distribution; each document leans on one topic, which skews the
// open-class draws and gives tokens co-occurrence structure. Every word
// carries a gold UD tag.
struct TextgenOptions {
    std::uint64_t seed = 11;
    std::size_t min_tokens = 1200000; // generation stops at the document edge
    std::size_t topics = 20;
    std::size_t nouns = 2200;
    std::size_t verbs = 1000;
    std::size_t adjectives = 700;
    std::size_t proper_nouns = 600;
    std::size_t adverbs = 200;
};

struct GeneratedText {
    std::string text; // one sentence per line, blank line between documents
    std::vector<std::pair<std::string, std::string>> pos_table; // token, UD tag
    std::size_t tokens = 0;    // words + punctuation marks emitted
    std::size_t documents = 0;
};

GeneratedText generate_corpus(const TextgenOptions& options);

void save_text(const std::string& text, const std::string& path);
void save_pos_table(const std::vector<std::pair<std::string, std::string>>& table,
                    const std::string& path);

} // namespace twintower
