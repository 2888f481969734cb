// Writes the synthetic two-style demo corpus used by the tests and README
// walkthrough: alpha.txt, beta.txt, background.txt under the output root.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "fixture_gen.hpp"

int main(int argc, char** argv) {
    CLI::App app{"generate the synthetic two-style demo corpus"};
    std::string out = "fixture_corpus";
    int lines_per_style = 2200;
    int background_per_kind = 400;
    std::uint64_t seed = 1234;
    app.add_option("-o,--out", out, "output directory");
    app.add_option("--lines-per-style", lines_per_style, "lines in each style file");
    app.add_option("--background-per-kind", background_per_kind,
                   "background lines per taught phrasing");
    app.add_option("--seed", seed, "corpus seed");
    CLI11_PARSE(app, argc, argv);

    try {
        xp::FixtureSpec spec;
        spec.lines_per_style = lines_per_style;
        spec.background_per_kind = background_per_kind;
        spec.seed = seed;
        xp::write_fixture_corpus(out, spec);
        std::cout << "wrote alpha.txt, beta.txt, background.txt under " << out << "\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    }
    return 0;
}
