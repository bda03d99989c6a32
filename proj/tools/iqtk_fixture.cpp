// iqtk_fixture: writes a deterministic synthetic corpus (images +
// annotations.json + questions.json) so the pipeline can be exercised end to
// end without real photographs.

#include <cstdint>
#include <iostream>
#include <string>

#include "CLI11.hpp"
#include "iqtk/fixture.hpp"

int main(int argc, char** argv) {
    CLI::App app{"write a synthetic annotation corpus for the iqtk pipeline"};
    std::string out_dir = "fixture";
    int n = 24;
    std::uint64_t seed = 7;
    app.add_option("--out", out_dir, "corpus directory");
    app.add_option("--n", n, "number of images (>= 4)");
    app.add_option("--seed", seed, "generator seed");
    CLI11_PARSE(app, argc, argv);

    try {
        const auto c = iqtk::fixture::write_fixture_corpus(out_dir, n, seed);
        std::cout << "wrote: " << c.annotations_path << "\n"
                  << "wrote: " << c.questions_path << "\n"
                  << "images: " << c.n_images << " (" << c.n_unrecognizable
                  << " unrecognizable)\n";
        return 0;
    } catch (const std::exception& e) {
        nlohmann::json j;
        j["error"] = {{"type", "error"}, {"message", e.what()}};
        std::cerr << j.dump() << std::endl;
        return 1;
    }
}
