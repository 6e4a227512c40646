#pragma once

#include <cstdint>
#include <string>
#include <unordered_map>
#include <utility>
#include <vector>

namespace twintower {

// Special token ids. [UNK] absorbs out-of-vocabulary words, [MASK] marks
// corrupted positions in the masked task, [PAD] fills the tail of the causal
// target row and is banned from every softmax.
inline constexpr int kUnkId = 0;
inline constexpr int kMaskId = 1;
inline constexpr int kPadId = 2;
inline constexpr int kNumSpecials = 3;

class Vocabulary {
public:
    std::size_t size() const { return tokens_.size(); }
    const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
    std::uint64_t freq(int id) const { return freq_.at(static_cast<std::size_t>(id)); }
    // Unknown tokens map to [UNK].
    int id_of(const std::string& token) const;
    bool contains(const std::string& token) const { return index_.count(token) != 0; }
    static bool is_special(int id) { return id >= 0 && id < kNumSpecials; }

private:
    Vocabulary() = default;
    void push(std::string token, std::uint64_t count);

    std::vector<std::string> tokens_;
    std::vector<std::uint64_t> freq_;
    std::unordered_map<std::string, int> index_;

    friend Vocabulary build_vocab(const std::string&, std::size_t, std::uint64_t);
    friend Vocabulary load_vocab(const std::string&);
};

// Lowercased word-level split: runs of alphanumeric (or non-ASCII) bytes are
// words, punctuation characters are single-character tokens, whitespace
// separates.
std::vector<std::string> tokenize(const std::string& text);

Vocabulary build_vocab(const std::string& text, std::size_t max_vocab, std::uint64_t min_count);
void save_vocab(const Vocabulary& vocab, const std::string& path);
Vocabulary load_vocab(const std::string& path);

struct TokenStream {
    std::vector<int> ids;
    // Exclusive end offsets of each document, strictly increasing; the last
    // entry equals ids.size().
    std::vector<std::size_t> doc_boundaries;
};

// Documents are separated by blank lines in the source text.
TokenStream encode(const std::string& text, const Vocabulary& vocab);
std::vector<std::string> decode(const std::vector<int>& ids, const Vocabulary& vocab);

enum class TaskKind { cloze, causal, mlm };

TaskKind task_from_string(const std::string& name);
std::string task_name(TaskKind task);

struct Batch {
    std::size_t batch = 0;
    std::size_t len = 0;
    std::vector<int> inputs;              // batch x len, row-major
    std::vector<int> targets;             // batch x len
    std::vector<std::uint8_t> score_mask; // batch x len, 1 where loss applies
    TaskKind task = TaskKind::cloze;
};

// Cuts the stream into non-overlapping seq_len windows that never cross a
// document boundary (remainders are dropped), shuffles them with the seed,
// and groups them into batches; the final batch may be smaller. For the mlm
// task exactly round(mask_rate * seq_len) positions per sequence are masked.
std::vector<Batch> make_batches(const TokenStream& stream, TaskKind task,
                                std::size_t seq_len, std::size_t batch_size,
                                double mask_rate, std::uint64_t seed);

// Seeded document-level split into (train, eval); document order is kept.
std::pair<TokenStream, TokenStream> split_stream(const TokenStream& stream,
                                                 double eval_fraction,
                                                 std::uint64_t seed);

bool is_ud_tag(const std::string& tag);

// Two-column TSV token<TAB>UD-tag; vocab entries absent from the file get "X".
std::vector<std::string> load_pos_table(const std::string& path, const Vocabulary& vocab);

std::string read_text_file(const std::string& path);

} // namespace twintower
