// make_synth: generates a small self-contained synthetic hyperspectral scene
// (cube + ground truth + stratified split + run configuration) so the full
// pretrain -> finetune -> evaluate -> map pipeline can be exercised without
// any real dataset.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "facto/hsi.hpp"
#include "facto/rng.hpp"

namespace fs = std::filesystem;
using namespace facto;

int main(int argc, char** argv) {
    CLI::App app{"synthetic 3-class scene generator"};
    std::string out_dir, name = "synthetic";
    uint64_t seed = 1;
    int size = 32, bands = 16, per_class = 25, patch = 5;
    int pre_epochs = 3, fin_epochs = 3;
    double noise = 0.30;
    app.add_option("--out", out_dir, "output directory")->required();
    app.add_option("--name", name, "scene name (file stem)");
    app.add_option("--seed", seed, "generator seed");
    app.add_option("--size", size, "scene height and width");
    app.add_option("--bands", bands, "number of spectral bands");
    app.add_option("--per-class", per_class, "training pixels per class");
    app.add_option("--noise", noise, "additive noise standard deviation");
    app.add_option("--patch", patch, "patch size written into the config");
    app.add_option("--pretrain-epochs", pre_epochs, "epochs in the generated config");
    app.add_option("--finetune-epochs", fin_epochs, "epochs in the generated config");
    CLI11_PARSE(app, argc, argv);

    const int H = size, W = size, B = bands;
    HsiCube cube;
    cube.height = H;
    cube.width = W;
    cube.bands = B;
    cube.name = name;
    cube.data.resize(static_cast<size_t>(H) * W * B);
    LabelField labels;
    labels.height = H;
    labels.width = W;
    labels.num_classes = 3;
    labels.class_names = {"ramp", "bump", "wave"};
    labels.labels.assign(static_cast<size_t>(H) * W, 0);

    Rng rng(seed);
    const int strip = std::max(1, W / 3 + 1);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c) {
            int cls = 1 + std::min(2, c / strip);
            for (int b = 0; b < B; ++b) {
                double x = b / double(B - 1);
                double base = cls == 1 ? 0.15 + 0.7 * x
                              : cls == 2
                                  ? 0.3 + 0.5 * std::exp(-std::pow((x - 0.25) / 0.18, 2))
                                  : 0.55 + 0.3 * std::sin(3.0 * M_PI * x);
                cube.at(r, c, b) =
                    static_cast<float>(std::clamp(base + noise * rng.normal(), 0.0, 1.0));
            }
            // 40% of pixels carry ground truth; the rest feed pre-training
            if ((r * W + c) % 5 < 2)
                labels.labels[static_cast<size_t>(r) * W + c] = static_cast<uint16_t>(cls);
        }

    fs::create_directories(out_dir);
    std::string stem = (fs::path(out_dir) / name).string();
    save_cube(cube, stem);
    save_labels(labels, stem + "_gt");

    // stratified train split: per_class shuffled labeled pixels per class
    std::vector<std::vector<PixelCoord>> by_class(4);
    for (int r = 0; r < H; ++r)
        for (int c = 0; c < W; ++c)
            if (int l = labels.at(r, c); l != 0) by_class[l].push_back({r, c});
    Rng split_rng(mix64(seed, 0x73706cULL));
    nlohmann::json train = nlohmann::json::object();
    for (int cls = 1; cls <= 3; ++cls) {
        split_rng.shuffle(by_class[cls]);
        nlohmann::json coords = nlohmann::json::array();
        int keep = std::min<int>(per_class, static_cast<int>(by_class[cls].size()));
        for (int i = 0; i < keep; ++i)
            coords.push_back({by_class[cls][i].first, by_class[cls][i].second});
        train[labels.class_names[cls - 1]] = std::move(coords);
    }
    {
        std::ofstream sf(stem + "_split.json");
        sf << nlohmann::json{{"train", train}}.dump(2) << "\n";
    }

    nlohmann::json cfg = {
        {"dataset",
         {{"name", name},
          {"cube", stem},
          {"labels", stem + "_gt"},
          {"split", stem + "_split.json"}}},
        {"patch_size", patch},
        {"seed", 1},
        {"out", (fs::path(out_dir) / "run").string()},
        {"spectral", {{"layers", 2}, {"heads", 2}, {"emb", 16}, {"mlp_hidden", 8}}},
        {"spatial", {{"layers", 2}, {"heads", 2}, {"emb", 16}, {"mlp_hidden", 8}}},
        {"pretrain",
         {{"epochs", pre_epochs}, {"batch", 32}, {"lr", 1e-3}, {"ratio", 0.7},
          {"decoder_sees_sequence", true}}},
        {"finetune", {{"epochs", fin_epochs}, {"batch", 16}, {"lr", 1e-3}}}};
    {
        std::ofstream cf(stem + "_config.json");
        cf << cfg.dump(2) << "\n";
    }
    std::cout << "scene written under " << out_dir << " (config " << stem << "_config.json)\n";
    return 0;
}
