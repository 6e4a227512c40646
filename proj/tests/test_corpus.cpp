#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "twintower/corpus.hpp"

#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <unistd.h>

using namespace twintower;

namespace {

struct TempDir {
    std::filesystem::path path;
    TempDir() {
        path = std::filesystem::temp_directory_path() /
               ("twintower-test-" + std::to_string(::getpid()));
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name, const std::string& content) const {
        const auto p = (path / name).string();
        std::ofstream out(p, std::ios::binary);
        out << content;
        return p;
    }
};

template <typename Fn>
std::string thrown_message(Fn&& fn) {
    try {
        fn();
    } catch (const std::exception& e) {
        return e.what();
    }
    return "";
}

} // namespace

TEST_CASE("tokenize lowercases, splits on whitespace, isolates punctuation") {
    auto t = tokenize("The cat, the DOG.");
    CHECK(t == std::vector<std::string>{"the", "cat", ",", "the", "dog", "."});
    CHECK(tokenize("  \n\t ").empty());
    CHECK(tokenize("a2b c") == std::vector<std::string>{"a2b", "c"});
    CHECK(tokenize("don't") == std::vector<std::string>{"don", "'", "t"});
}

TEST_CASE("build_vocab counts, orders, and folds") {
    auto v = build_vocab("a b a", 10, 1);
    REQUIRE(v.size() == 5);
    CHECK(v.token(kUnkId) == "[UNK]");
    CHECK(v.token(kMaskId) == "[MASK]");
    CHECK(v.token(kPadId) == "[PAD]");
    CHECK(v.token(3) == "a");
    CHECK(v.token(4) == "b");
    CHECK(v.freq(3) == 2);
    CHECK(v.freq(4) == 1);
    CHECK(v.id_of("a") == 3);
    CHECK(v.id_of("zzz") == kUnkId);

    // min_count folds rare tokens into [UNK].
    auto v2 = build_vocab("a b a", 10, 2);
    CHECK(v2.size() == 4);
    CHECK(v2.id_of("b") == kUnkId);
    CHECK(v2.freq(kUnkId) == 1);

    // Capacity cap keeps the most frequent, ties broken lexicographically.
    auto v3 = build_vocab("c c b b a a d", 5, 1);
    REQUIRE(v3.size() == 5);
    CHECK(v3.token(3) == "a");
    CHECK(v3.token(4) == "b");
    CHECK(v3.freq(kUnkId) == 3); // c(2) and d(1) folded

    CHECK(thrown_message([] { (void)build_vocab("   ", 10, 1); }) == "empty corpus");
    CHECK(thrown_message([] { (void)build_vocab("a", 2, 1); }) == "vocab too small");
}

TEST_CASE("vocab counts are non-increasing past the specials") {
    std::string text;
    for (int i = 0; i < 50; ++i) {
        for (int j = 0; j <= i % 7; ++j) {
            text += "w" + std::to_string(i) + " ";
        }
    }
    auto v = build_vocab(text, 30, 1);
    for (std::size_t id = kNumSpecials + 1; id < v.size(); ++id) {
        CHECK(v.freq(static_cast<int>(id)) <= v.freq(static_cast<int>(id - 1)));
    }
}

TEST_CASE("vocab save/load round-trip") {
    TempDir tmp;
    auto v = build_vocab("the quick brown fox the lazy dog the", 12, 1);
    const auto path = (tmp.path / "v.tsv").string();
    save_vocab(v, path);

    std::ifstream in(path);
    std::string header;
    std::getline(in, header);
    CHECK(header == "#twintower-vocab v1");

    auto v2 = load_vocab(path);
    REQUIRE(v2.size() == v.size());
    for (std::size_t id = 0; id < v.size(); ++id) {
        CHECK(v2.token(static_cast<int>(id)) == v.token(static_cast<int>(id)));
        CHECK(v2.freq(static_cast<int>(id)) == v.freq(static_cast<int>(id)));
    }

    const auto bad = tmp.file("bad.tsv", "#something else\nfoo\t1\n");
    CHECK(thrown_message([&] { (void)load_vocab(bad); }).find("not a twintower vocab") !=
          std::string::npos);
    CHECK(thrown_message([&] { (void)load_vocab((tmp.path / "nope.tsv").string()); })
              .find("cannot open") != std::string::npos);
}

TEST_CASE("encode maps tokens, records document boundaries, decode round-trips") {
    auto v = build_vocab("a b c", 10, 1);
    auto s = encode("a b\n\nc a\n\n\nb", v);
    CHECK(s.ids.size() == 5);
    CHECK(s.doc_boundaries == std::vector<std::size_t>{2, 4, 5});

    auto s2 = encode("a zzz", v);
    CHECK(s2.ids[0] == v.id_of("a"));
    CHECK(s2.ids[1] == kUnkId);

    auto round = decode(encode("a b c b a", v).ids, v);
    CHECK(round == std::vector<std::string>{"a", "b", "c", "b", "a"});

    CHECK(encode("", v).ids.empty());
    CHECK(encode("", v).doc_boundaries.empty());
}

TEST_CASE("make_batches causal shift and last-position masking") {
    TokenStream s;
    s.ids = {5, 6, 4, 3};
    s.doc_boundaries = {4};
    auto batches = make_batches(s, TaskKind::causal, 4, 8, 0.0, 1);
    REQUIRE(batches.size() == 1);
    const auto& b = batches[0];
    CHECK(b.batch == 1);
    CHECK(b.inputs == std::vector<int>{5, 6, 4, 3});
    CHECK(b.targets == std::vector<int>{6, 4, 3, kPadId});
    CHECK(b.score_mask == std::vector<std::uint8_t>{1, 1, 1, 0});
    CHECK(b.task == TaskKind::causal);
}

TEST_CASE("make_batches cloze copies inputs and scores everything") {
    TokenStream s;
    s.ids = {3, 4, 5, 6, 7, 8};
    s.doc_boundaries = {6};
    auto batches = make_batches(s, TaskKind::cloze, 3, 8, 0.0, 7);
    REQUIRE(batches.size() == 1);
    const auto& b = batches[0];
    CHECK(b.batch == 2);
    CHECK(b.targets == b.inputs);
    for (auto m : b.score_mask) CHECK(m == 1);
}

TEST_CASE("make_batches mlm masks the exact rounded count") {
    TokenStream s;
    s.ids.resize(64);
    for (std::size_t i = 0; i < 64; ++i) s.ids[i] = static_cast<int>(3 + i % 11);
    s.doc_boundaries = {64};

    auto batches = make_batches(s, TaskKind::mlm, 8, 4, 0.25, 3);
    REQUIRE(batches.size() == 2);
    for (const auto& b : batches) {
        for (std::size_t r = 0; r < b.batch; ++r) {
            std::size_t masked = 0;
            for (std::size_t i = 0; i < b.len; ++i) {
                const auto idx = r * b.len + i;
                if (b.score_mask[idx]) {
                    ++masked;
                    CHECK(b.inputs[idx] == kMaskId);
                    CHECK(b.targets[idx] != kMaskId);
                } else {
                    CHECK(b.inputs[idx] == b.targets[idx]);
                    CHECK(b.inputs[idx] != kMaskId);
                }
            }
            CHECK(masked == 2); // round(0.25 * 8)
        }
    }
}

TEST_CASE("make_batches windows never cross document boundaries") {
    TokenStream s;
    // Doc 1: ids 100..106 (7 tokens -> one window of 4, remainder dropped).
    // Doc 2: ids 200..202 (3 tokens -> too short, dropped entirely).
    // Doc 3: ids 300..308 (9 tokens -> two windows).
    for (int i = 0; i < 7; ++i) s.ids.push_back(100 + i);
    for (int i = 0; i < 3; ++i) s.ids.push_back(200 + i);
    for (int i = 0; i < 9; ++i) s.ids.push_back(300 + i);
    s.doc_boundaries = {7, 10, 19};

    auto batches = make_batches(s, TaskKind::cloze, 4, 100, 0.0, 9);
    REQUIRE(batches.size() == 1);
    CHECK(batches[0].batch == 3);
    std::set<int> firsts;
    for (std::size_t r = 0; r < 3; ++r) {
        const int first = batches[0].inputs[r * 4];
        firsts.insert(first);
        // Window contents are consecutive and single-document.
        for (std::size_t i = 1; i < 4; ++i) {
            CHECK(batches[0].inputs[r * 4 + i] == first + static_cast<int>(i));
        }
    }
    CHECK(firsts == std::set<int>{100, 300, 304});
}

TEST_CASE("make_batches determinism and seed sensitivity") {
    TokenStream s;
    for (int i = 0; i < 200; ++i) s.ids.push_back(3 + i % 29);
    s.doc_boundaries = {200};

    auto a = make_batches(s, TaskKind::mlm, 10, 4, 0.15, 42);
    auto b = make_batches(s, TaskKind::mlm, 10, 4, 0.15, 42);
    REQUIRE(a.size() == b.size());
    for (std::size_t i = 0; i < a.size(); ++i) {
        CHECK(a[i].inputs == b[i].inputs);
        CHECK(a[i].targets == b[i].targets);
        CHECK(a[i].score_mask == b[i].score_mask);
    }

    auto c = make_batches(s, TaskKind::mlm, 10, 4, 0.15, 43);
    bool any_diff = false;
    for (std::size_t i = 0; i < a.size() && !any_diff; ++i) {
        any_diff = a[i].inputs != c[i].inputs || a[i].score_mask != c[i].score_mask;
    }
    CHECK(any_diff);
}

TEST_CASE("make_batches error and precondition paths") {
    TokenStream s;
    s.ids = {3, 4};
    s.doc_boundaries = {2};
    CHECK(thrown_message([&] { (void)make_batches(s, TaskKind::cloze, 8, 2, 0.0, 1); }) ==
          "corpus too short");
    CHECK_THROWS_AS((void)make_batches(s, TaskKind::cloze, 1, 2, 0.0, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)make_batches(s, TaskKind::mlm, 2, 2, 0.0, 1),
                    std::invalid_argument);
    CHECK_THROWS_AS((void)make_batches(s, TaskKind::mlm, 2, 2, 1.0, 1),
                    std::invalid_argument);

    // All documents shorter than seq_len is also too short.
    TokenStream t;
    t.ids = {3, 4, 5, 6};
    t.doc_boundaries = {2, 4};
    CHECK(thrown_message([&] { (void)make_batches(t, TaskKind::cloze, 3, 2, 0.0, 1); }) ==
          "corpus too short");
}

TEST_CASE("split_stream is a seeded partition preserving order") {
    TokenStream s;
    for (int d = 0; d < 40; ++d) {
        for (int i = 0; i < 5; ++i) s.ids.push_back(d * 10 + i);
        s.doc_boundaries.push_back(s.ids.size());
    }
    auto [train, eval] = split_stream(s, 0.25, 11);
    CHECK(train.ids.size() + eval.ids.size() == s.ids.size());
    CHECK(!train.ids.empty());
    CHECK(!eval.ids.empty());
    CHECK(train.doc_boundaries.size() + eval.doc_boundaries.size() == 40);

    // Document ids inside each half stay in ascending order.
    auto check_order = [](const TokenStream& t) {
        for (std::size_t i = 1; i < t.ids.size(); ++i) {
            if (t.ids[i] % 10 == 0) continue; // new doc start
            CHECK(t.ids[i] == t.ids[i - 1] + 1);
        }
    };
    check_order(train);
    check_order(eval);

    auto [train2, eval2] = split_stream(s, 0.25, 11);
    CHECK(train2.ids == train.ids);
    CHECK(eval2.ids == eval.ids);

    auto [train3, eval3] = split_stream(s, 0.0, 11);
    CHECK(train3.ids == s.ids);
    CHECK(eval3.ids.empty());

    CHECK_THROWS_AS((void)split_stream(s, 1.0, 1), std::invalid_argument);
}

TEST_CASE("split_stream always yields a usable eval slice when asked") {
    TokenStream s;
    for (int i = 0; i < 6; ++i) s.ids.push_back(i);
    s.doc_boundaries = {3, 6};
    // Tiny fraction: the Bernoulli draw would usually pick nothing.
    auto [train, eval] = split_stream(s, 1e-9, 123);
    CHECK(!eval.ids.empty());
    CHECK(!train.ids.empty());
}

TEST_CASE("load_pos_table maps tokens and defaults to X") {
    TempDir tmp;
    auto v = build_vocab("run fast cat run", 10, 1);
    const auto path = tmp.file("pos.tsv", "run\tVERB\nfast\tADV\nmissing\tNOUN\n");
    auto tags = load_pos_table(path, v);
    REQUIRE(tags.size() == v.size());
    CHECK(tags[static_cast<std::size_t>(v.id_of("run"))] == "VERB");
    CHECK(tags[static_cast<std::size_t>(v.id_of("fast"))] == "ADV");
    CHECK(tags[static_cast<std::size_t>(v.id_of("cat"))] == "X");
    CHECK(tags[kUnkId] == "X");
    CHECK(tags[kMaskId] == "X");

    const auto bad1 = tmp.file("bad1.tsv", "run\tVERB\nnotab\n");
    auto msg = thrown_message([&] { (void)load_pos_table(bad1, v); });
    CHECK(msg.find("line 2") != std::string::npos);

    const auto bad2 = tmp.file("bad2.tsv", "run\tVERBISH\n");
    msg = thrown_message([&] { (void)load_pos_table(bad2, v); });
    CHECK(msg.find("VERBISH") != std::string::npos);

    msg = thrown_message([&] { (void)load_pos_table((tmp.path / "nope").string(), v); });
    CHECK(msg.find("cannot open") != std::string::npos);
}

TEST_CASE("ud tag set membership") {
    for (const char* t : {"ADJ", "ADP", "ADV", "AUX", "CCONJ", "DET", "INTJ", "NOUN", "NUM",
                          "PART", "PRON", "PROPN", "PUNCT", "SCONJ", "SYM", "VERB", "X"}) {
        CHECK(is_ud_tag(t));
    }
    CHECK(!is_ud_tag("VB"));
    CHECK(!is_ud_tag(""));
    CHECK(!is_ud_tag("noun"));
}

TEST_CASE("vocabulary serialization is deterministic") {
    TempDir tmp;
    const std::string text = "b a c a b a\n\nc c d e";
    auto p1 = (tmp.path / "v1.tsv").string();
    auto p2 = (tmp.path / "v2.tsv").string();
    save_vocab(build_vocab(text, 8, 1), p1);
    save_vocab(build_vocab(text, 8, 1), p2);
    CHECK(read_text_file(p1) == read_text_file(p2));
    CHECK(!read_text_file(p1).empty());
}
