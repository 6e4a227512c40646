#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"
#include "json.hpp"

#include "twintower/train.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

// End-to-end tests of the command line tools. Binaries are located through
// TT_BIN_DIR, injected by the build; every command runs through the shell so
// exit codes and redirection behave exactly as they would for a user.

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string bin(const std::string& name) {
    return std::string(TT_BIN_DIR) + "/" + name;
}

int run(const std::string& cmd) {
    int status = std::system(cmd.c_str());
    REQUIRE(status != -1);
    return WEXITSTATUS(status);
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    REQUIRE(in.good());
    std::stringstream buf;
    buf << in.rdbuf();
    return buf.str();
}

std::vector<std::string> lines_of(const std::string& text) {
    std::vector<std::string> out;
    std::stringstream ss(text);
    std::string line;
    while (std::getline(ss, line)) out.push_back(line);
    return out;
}

// One shared workspace: corpus, vocabulary, two seeds taken through both
// training phases and scoring, plus components. Built once, reused by every
// case below.
struct Env {
    fs::path dir;
    std::string corpus, vocab, pos, ckpt_a, ckpt_b, pref_a, pref_b, comp;

    Env() {
        dir = fs::temp_directory_path() / "twintower_cli_test";
        fs::remove_all(dir);
        fs::create_directories(dir);
        corpus = (dir / "corpus.txt").string();
        vocab = (dir / "vocab.tsv").string();
        pos = (dir / "pos.tsv").string();
        ckpt_a = (dir / "a2.ckpt").string();
        ckpt_b = (dir / "b2.ckpt").string();
        pref_a = (dir / "pref_a.tsv").string();
        pref_b = (dir / "pref_b.tsv").string();
        comp = (dir / "comp.tsv").string();

        REQUIRE(run(bin("make_corpus") + " --out " + corpus + " --pos-table " + pos +
                    " --seed 5 --min-tokens 15000 --topics 6 --nouns 220 --verbs 120"
                    " --adjectives 80 --proper-nouns 60 --adverbs 30 > /dev/null") == 0);
        REQUIRE(run(bin("twintower") + " build-vocab --corpus " + corpus + " --out " +
                    vocab + " --max-vocab 400 --min-count 2 > /dev/null") == 0);
        trained("a", 3, ckpt_a, pref_a);
        trained("b", 4, ckpt_b, pref_b);
        REQUIRE(run(bin("twintower") + " ica --ckpt " + ckpt_a + " --corpus " + corpus +
                    " --vocab " + vocab + " --out " + comp +
                    " --d 6 --max-samples 4000 --max-iter 200 > /dev/null") == 0);
    }

    void trained(const std::string& tag, int seed, const std::string& ckpt,
                 const std::string& pref) const {
        std::string p1 = (dir / (tag + "1.ckpt")).string();
        REQUIRE(run(bin("twintower") + " train --corpus " + corpus + " --vocab " +
                    vocab + " --out " + p1 + " --preset tiny-bert --seed " +
                    std::to_string(seed) +
                    " --steps 20 --batch-size 6 --log-every 10 > /dev/null") == 0);
        REQUIRE(run(bin("twintower") + " train-heads --ckpt " + p1 + " --corpus " +
                    corpus + " --vocab " + vocab + " --out " + ckpt +
                    " --steps 15 --batch-size 6 > /dev/null") == 0);
        REQUIRE(run(bin("twintower") + " score --ckpt " + ckpt + " --corpus " + corpus +
                    " --vocab " + vocab + " --out " + pref + " > /dev/null") == 0);
    }
};

const Env& env() {
    static Env e;
    return e;
}

} // namespace

TEST_CASE("build-vocab writes the requested vocabulary") {
    const Env& e = env();
    std::vector<std::string> lines = lines_of(slurp(e.vocab));
    CHECK(lines.size() == 401); // header + one row per entry
    CHECK(lines[0] == "#twintower-vocab v1");
    CHECK(lines[1].substr(0, 6) == "[UNK]\t");
}

TEST_CASE("data problems exit 1 and name the file") {
    const Env& e = env();
    fs::path err = e.dir / "err.txt";

    CHECK(run(bin("twintower") + " build-vocab --corpus " + (e.dir / "nope.txt").string() +
              " --out " + (e.dir / "x.tsv").string() + " 2> " + err.string()) == 1);
    CHECK(slurp(err).find("nope.txt") != std::string::npos);

    CHECK(run(bin("twintower") + " build-vocab --corpus " + e.corpus + " --out " +
              (e.dir / "x.tsv").string() + " --max-vocab 1 2> " + err.string()) == 1);
    CHECK(slurp(err).find("vocab too small") != std::string::npos);

    // wrong format version: the error names both the file and the expected header
    fs::path bad = e.dir / "bad_vocab.tsv";
    std::ofstream(bad) << "#twintower-vocab v9\nfoo\t1\n";
    CHECK(run(bin("twintower") + " score --ckpt " + e.ckpt_a + " --corpus " + e.corpus +
              " --vocab " + bad.string() + " --out " + (e.dir / "x.tsv").string() +
              " 2> " + err.string()) == 1);
    std::string msg = slurp(err);
    CHECK(msg.find("bad_vocab.tsv") != std::string::npos);
    CHECK(msg.find("#twintower-vocab v1") != std::string::npos);
}

TEST_CASE("usage problems exit 2") {
    const Env& e = env();
    CHECK(run(bin("twintower") + " 2> /dev/null") == 2);
    CHECK(run(bin("twintower") + " frobnicate 2> /dev/null") == 2);
    CHECK(run(bin("twintower") + " build-vocab --corpus " + e.corpus +
              " 2> /dev/null") == 2); // --out missing
    CHECK(run(bin("twintower") + " score --ckpt " + e.ckpt_a + " --corpus " + e.corpus +
              " --vocab " + e.vocab + " --out x.tsv --split bogus 2> /dev/null") == 2);
    CHECK(run(bin("twintower") + " correlate " + e.pref_a + " --out x.tsv"
              " 2> /dev/null") == 2); // needs at least two inputs
    CHECK(run(bin("twintower") + " --help > /dev/null") == 0);
    CHECK(run(bin("twintower") + " train --help > /dev/null") == 0);
}

TEST_CASE("config file applies with explicit flags taking precedence") {
    const Env& e = env();
    fs::path cfg = e.dir / "train.cfg";
    std::ofstream(cfg) << "# comment line\nsteps=7\nbatch-size=4\n";
    std::string out = (e.dir / "cfg.ckpt").string();

    REQUIRE(run(bin("twintower") + " train --corpus " + e.corpus + " --vocab " + e.vocab +
                " --out " + out + " --preset tiny-bert --config " + cfg.string() +
                " > /dev/null") == 0);
    CHECK(twintower::load_checkpoint(out).phase1_steps == 7);

    REQUIRE(run(bin("twintower") + " train --corpus " + e.corpus + " --vocab " + e.vocab +
                " --out " + out + " --preset tiny-bert --config " + cfg.string() +
                " --steps 5 > /dev/null") == 0);
    CHECK(twintower::load_checkpoint(out).phase1_steps == 5);

    fs::path badcfg = e.dir / "bad.cfg";
    std::ofstream(badcfg) << "not-an-option=1\n";
    CHECK(run(bin("twintower") + " train --corpus " + e.corpus + " --vocab " + e.vocab +
              " --out " + out + " --preset tiny-bert --config " + badcfg.string() +
              " 2> /dev/null") == 2);
    CHECK(run(bin("twintower") + " train --corpus " + e.corpus + " --vocab " + e.vocab +
              " --out " + out + " --preset tiny-bert --config " +
              (e.dir / "nope.cfg").string() + " 2> /dev/null") == 2);
}

TEST_CASE("correlate emits a symmetric matrix with unit diagonal") {
    const Env& e = env();
    std::string out = (e.dir / "corr.tsv").string();
    REQUIRE(run(bin("twintower") + " correlate " + e.pref_a + " " + e.pref_b + " " +
                e.pref_a + " --out " + out + " --k 50 > /dev/null") == 0);

    std::vector<std::string> lines = lines_of(slurp(out));
    REQUIRE(lines.size() == 6); // header, k, files, 3 matrix rows
    CHECK(lines[0] == "#twintower-correlation v1");
    CHECK(lines[1] == "k\t50");
    CHECK(lines[2].substr(0, 6) == "files\t");

    double m[3][3];
    for (int i = 0; i < 3; ++i) {
        std::stringstream row(lines[3 + i]);
        for (int j = 0; j < 3; ++j) REQUIRE(static_cast<bool>(row >> m[i][j]));
    }
    for (int i = 0; i < 3; ++i) {
        CHECK(m[i][i] == doctest::Approx(1.0).epsilon(1e-12));
        for (int j = 0; j < 3; ++j) CHECK(m[i][j] == m[j][i]);
    }
    // rows 0 and 2 are the same file, so their correlation is exactly 1
    CHECK(m[0][2] == doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("report covers every analysis section") {
    const Env& e = env();
    std::string out_json = (e.dir / "report.json").string();
    std::string out_text = (e.dir / "report.txt").string();
    REQUIRE(run(bin("twintower") + " report --ckpt " + e.ckpt_a + " --vocab " + e.vocab +
                " --pref " + e.pref_a + " --pref " + e.pref_b + " --pos-table " + e.pos +
                " --components " + e.comp + " --out-json " + out_json + " --out-text " +
                out_text + " --k 50 --freq-k 100 > /dev/null") == 0);

    json j = json::parse(slurp(out_json));
    for (const char* section : {"ordering", "correlations", "pos", "frequency",
                                "clusters"}) {
        CHECK(j.contains(section));
    }
    int order = j["ordering"]["tower_order"].get<int>();
    CHECK((order == 1 || order == 2));
    CHECK(j["correlations"]["matrix"].size() == 2);
    CHECK(j["correlations"]["matrix"][0][0].get<double>() == 1.0);
    CHECK(j["pos"]["groups"].size() > 0);
    CHECK(std::isfinite(j["frequency"]["spearman"].get<double>()));
    CHECK(j["clusters"]["histogram"].size() > 0);

    std::string text = slurp(out_text);
    for (const char* header : {"== ordering ==", "== correlations ==", "== pos ==",
                               "== frequency ==", "== clusters =="}) {
        CHECK(text.find(header) != std::string::npos);
    }
}

TEST_CASE("reruns are byte-identical and logged") {
    const Env& e = env();
    std::string pref2 = (e.dir / "pref_rerun.tsv").string();
    REQUIRE(run(bin("twintower") + " score --ckpt " + e.ckpt_a + " --corpus " + e.corpus +
                " --vocab " + e.vocab + " --out " + pref2 + " > /dev/null") == 0);
    CHECK(slurp(pref2) == slurp(e.pref_a));

    std::string out_json = (e.dir / "r1.json").string();
    std::string out_json2 = (e.dir / "r2.json").string();
    std::string cmd = bin("twintower") + " report --ckpt " + e.ckpt_a + " --vocab " +
                      e.vocab + " --pref " + e.pref_a + " --pos-table " + e.pos +
                      " --components " + e.comp + " --out-text " +
                      (e.dir / "r.txt").string() + " --k 50 > /dev/null --out-json ";
    REQUIRE(run(cmd + out_json) == 0);
    REQUIRE(run(cmd + out_json2) == 0);
    CHECK(slurp(out_json) == slurp(out_json2));

    // every command appended one manifest line: timestamp, command, config
    // hash, seed
    std::vector<std::string> log = lines_of(slurp(e.dir / "run.log"));
    REQUIRE(log.size() > 10);
    std::size_t scores = 0;
    for (const std::string& line : log) {
        CHECK(line.find(" config=") != std::string::npos);
        CHECK(line.find(" seed=") != std::string::npos);
        std::size_t at = line.find(" config=") + 8;
        CHECK(line.substr(at, 16).find_first_not_of("0123456789abcdef") ==
              std::string::npos);
        scores += line.find(" score ") != std::string::npos;
    }
    CHECK(scores >= 3);

    // identical invocations hash identically; different seeds differ
    std::string hash_a, hash_b;
    for (const std::string& line : log) {
        if (line.find(" train ") == std::string::npos) continue;
        std::string h = line.substr(line.find(" config=") + 8, 16);
        std::string seed = line.substr(line.find(" seed=") + 6);
        if (seed == "3") hash_a = h;
        if (seed == "4") hash_b = h;
    }
    REQUIRE(!hash_a.empty());
    REQUIRE(!hash_b.empty());
    CHECK(hash_a != hash_b);
}

TEST_CASE("pref files from a different vocabulary are rejected") {
    const Env& e = env();
    fs::path other_vocab = e.dir / "other_vocab.tsv";
    REQUIRE(run(bin("twintower") + " build-vocab --corpus " + e.corpus + " --out " +
                other_vocab.string() + " --max-vocab 50 > /dev/null") == 0);
    fs::path err = e.dir / "err2.txt";
    CHECK(run(bin("twintower") + " pos-report --pref " + e.pref_a + " --vocab " +
              other_vocab.string() + " --pos-table " + e.pos + " --out " +
              (e.dir / "x.json").string() + " 2> " + err.string()) == 1);
    CHECK(slurp(err).find("does not match the vocabulary") != std::string::npos);
}
