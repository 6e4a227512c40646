#include "CLI11.hpp"

#include "twintower/textgen.hpp"

#include <iostream>

using namespace twintower;

int main(int argc, char** argv) {
    CLI::App app{"synthetic topical corpus generator"};
    TextgenOptions opts;
    std::string out, pos_table;
    app.add_option("--out", out, "corpus text output")->required();
    app.add_option("--pos-table", pos_table, "token<TAB>UD-tag TSV output");
    app.add_option("--seed", opts.seed, "generation seed");
    app.add_option("--min-tokens", opts.min_tokens, "stop after at least this many tokens");
    app.add_option("--topics", opts.topics, "topic count");
    app.add_option("--nouns", opts.nouns, "open-class noun lexemes");
    app.add_option("--verbs", opts.verbs, "open-class verb lexemes");
    app.add_option("--adjectives", opts.adjectives, "open-class adjective lexemes");
    app.add_option("--proper-nouns", opts.proper_nouns, "proper noun lexemes");
    app.add_option("--adverbs", opts.adverbs, "derived adverb lexemes");

    try {
        app.parse(argc, argv);
        GeneratedText g = generate_corpus(opts);
        save_text(g.text, out);
        if (!pos_table.empty()) save_pos_table(g.pos_table, pos_table);
        std::cout << g.tokens << " tokens in " << g.documents << " documents, "
                  << g.pos_table.size() << " word forms -> " << out << "\n";
    } catch (const CLI::ParseError& e) {
        int code = app.exit(e);
        return code == 0 ? 0 : 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
