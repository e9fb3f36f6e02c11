// factoformer: pre-training, fine-tuning, evaluation, map export, ablation
// grids, and cost profiling for the factorized spectral-spatial transformer.
//
// Exit codes: 0 success, 2 config/validation error, 3 runtime failure.

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "facto/checkpoint.hpp"
#include "facto/hsi.hpp"
#include "facto/metrics.hpp"
#include "facto/model.hpp"
#include "facto/pretrain.hpp"
#include "facto/runconfig.hpp"

namespace fs = std::filesystem;
using namespace facto;

namespace {

struct Dataset {
    HsiCube cube; // normalized
    LabelField labels;
    SplitSpec split;
};

Dataset load_dataset(const RunConfig& cfg) {
    Dataset d;
    d.cube = normalize(load_cube(cfg.cube_prefix));
    d.labels = load_labels(cfg.labels_prefix);
    if (d.labels.height != d.cube.height || d.labels.width != d.cube.width)
        throw ConfigError("label raster does not match cube dimensions");
    d.split = enumerate_splits(d.labels, cfg.split_file);
    return d;
}

EncoderConfig spectral_cfg(const RunConfig& cfg, int bands) {
    EncoderConfig c = cfg.spectral;
    c.tokens = bands;
    c.token_dim = cfg.patch_size * cfg.patch_size * cfg.band_group;
    return c;
}

EncoderConfig spatial_cfg(const RunConfig& cfg, int bands) {
    EncoderConfig c = cfg.spatial;
    c.tokens = cfg.patch_size * cfg.patch_size;
    c.token_dim = bands;
    return c;
}

std::string out_path(const RunConfig& cfg, const std::string& rel) {
    return (fs::path(cfg.out_dir) / rel).string();
}

void prepare_out(const RunConfig& cfg) {
    ensure_run_layout(cfg.out_dir);
    write_run_manifest(cfg, cfg.out_dir);
}

int run_pretrain(const RunConfig& cfg, const std::string& mode_name) {
    if (mode_name != "spectral" && mode_name != "spatial")
        throw ConfigError("pretrain mode must be 'spectral' or 'spatial'");
    Dataset d = load_dataset(cfg);
    std::vector<PixelCoord> centers = d.split.pretrain;
    if (centers.empty())
        throw ConfigError("no unlabeled pixels available for pre-training in this scene");
    CubeSampleSource src(d.cube, centers, cfg.patch_size);

    TokenMode mode = mode_name == "spectral" ? TokenMode::Spectral : TokenMode::Spatial;
    EncoderConfig ec =
        mode == TokenMode::Spectral ? spectral_cfg(cfg, d.cube.bands) : spatial_cfg(cfg, d.cube.bands);

    prepare_out(cfg);
    std::cout << "pretraining " << mode_name << " encoder on " << centers.size() << " samples, "
              << cfg.pretrain.epochs << " epochs\n";
    PretrainResult res = pretrain(src, mode, ec, cfg.pretrain);
    save_checkpoint(res.best_state, out_path(cfg, "checkpoints/" + mode_name + "_best"));
    save_checkpoint(res.final_state, out_path(cfg, "checkpoints/" + mode_name + "_final"));
    write_loss_log(res.log, out_path(cfg, "logs/pretrain_" + mode_name + ".tsv"));
    std::cout << "best epoch loss " << res.best_loss << " (epoch " << res.best_state.epoch
              << "); checkpoints written to " << out_path(cfg, "checkpoints/") << "\n";
    return 0;
}

ConfusionMatrix evaluate_model(const FactoFormer& model, const Dataset& d, int patch_size) {
    CubeSampleSource test(d.cube, d.split.test, patch_size, &d.labels);
    return evaluate([&model](const Sample& s) { return model.predict(s); }, test,
                    d.labels.num_classes);
}

void write_report(const RunConfig& cfg, const ConfusionMatrix& cm,
                  const std::vector<std::string>& class_names, const std::string& stem) {
    std::string rep = format_report(cm, class_names);
    std::ofstream rf(out_path(cfg, "reports/" + stem + ".txt"));
    rf << rep;
    std::ofstream jf(out_path(cfg, "reports/" + stem + ".json"));
    jf << report_json(cm, cfg.seed, hex64(fnv1a(config_canonical_json(cfg)))) << "\n";
    std::cout << rep;
}

int run_finetune(const RunConfig& cfg, bool scratch, const std::vector<std::string>& pretrained) {
    if (!scratch && pretrained.size() != 2)
        throw ConfigError("finetune needs --scratch or --from-pretrained SPE_PREFIX SPA_PREFIX");
    Dataset d = load_dataset(cfg);
    if (d.split.train.empty())
        throw ConfigError("no training pixels: a split file with a train section is required");

    FinetuneConfig fc = cfg.finetune;
    if (!scratch) {
        for (const std::string& p : pretrained)
            if (!fs::exists(p + ".json"))
                throw ConfigError("pretrained checkpoint not found: " + p);
        fc.pretrained_spectral = pretrained[0];
        fc.pretrained_spatial = pretrained[1];
    }

    prepare_out(cfg);
    CubeSampleSource train(d.cube, d.split.train, cfg.patch_size, &d.labels);
    std::cout << "fine-tuning on " << d.split.train.size() << " samples ("
              << (scratch ? "from scratch" : "pretrained init") << "), " << fc.epochs
              << " epochs\n";
    FinetuneResult res = finetune(train, spectral_cfg(cfg, d.cube.bands),
                                  spatial_cfg(cfg, d.cube.bands), d.labels.num_classes,
                                  cfg.patch_size, fc);
    {
        std::ofstream lf(out_path(cfg, "logs/finetune.tsv"));
        lf << "epoch\tloss\ttrain_acc\tlr\n";
        lf.precision(17);
        for (const auto& e : res.log)
            lf << e.epoch << "\t" << e.mean_loss << "\t" << e.train_accuracy << "\t" << e.lr
               << "\n";
    }
    save_model(res.model, cfg.dataset_name, out_path(cfg, "checkpoints/model"));
    ConfusionMatrix cm = evaluate_model(res.model, d, cfg.patch_size);
    write_report(cfg, cm, d.labels.class_names, "finetune_report");
    return 0;
}

int run_evaluate(const RunConfig& cfg, const std::string& model_prefix) {
    if (!fs::exists(model_prefix + ".json"))
        throw ConfigError("model checkpoint not found: " + model_prefix);
    Dataset d = load_dataset(cfg);
    FactoFormer model = load_model(model_prefix);
    prepare_out(cfg);
    ConfusionMatrix cm = evaluate_model(model, d, model.patch_size);
    write_report(cfg, cm, d.labels.class_names, "evaluate_report");
    return 0;
}

int run_map(const RunConfig& cfg, const std::string& model_prefix, bool all_pixels) {
    if (!fs::exists(model_prefix + ".json"))
        throw ConfigError("model checkpoint not found: " + model_prefix);
    Dataset d = load_dataset(cfg);
    FactoFormer model = load_model(model_prefix);
    prepare_out(cfg);
    auto pal = default_palette(d.labels.num_classes);
    write_palette_json(pal, out_path(cfg, "maps/palette.json"));
    export_label_map(d.labels, pal, out_path(cfg, "maps/ground_truth.ppm"));
    export_map([&model](const Sample& s) { return model.predict(s); }, d.cube, d.labels,
               model.patch_size, pal, out_path(cfg, "maps/prediction.ppm"), all_pixels);
    std::cout << "maps written to " << out_path(cfg, "maps/") << "\n";
    return 0;
}

int run_profile(const RunConfig& cfg) {
    Dataset d = load_dataset(cfg);
    int B = d.cube.bands;
    EncoderConfig spe = spectral_cfg(cfg, B);
    EncoderConfig spa = spatial_cfg(cfg, B);
    long long m = spe.tokens, n = spa.tokens;
    auto [joint_pairs, facto_pairs] = attention_cost(m, n);

    int joint_tokens = spa.tokens * ((B + cfg.joint_group - 1) / cfg.joint_group);
    EncoderConfig joint = cfg.spatial;
    joint.tokens = joint_tokens;
    joint.token_dim = cfg.joint_group;

    double facto_mf = factoformer_macs(spe, spa, d.labels.num_classes) / 1e6;
    double joint_mf = joint_macs(joint, d.labels.num_classes) / 1e6;
    std::cout << "token-pair counts per attention layer:\n"
              << "  factorized (m^2 + n^2): " << facto_pairs << "\n"
              << "  joint ((m+n)^2):        " << joint_pairs << "\n"
              << "analytic multiply-add cost (dense layers, millions):\n"
              << "  factorized model: " << facto_mf << "\n"
              << "  joint baseline:   " << joint_mf << " (" << joint_mf / facto_mf
              << "x factorized)\n"
              << "parameters (with pre-training heads):\n"
              << "  spectral encoder: " << count_params(spe, true) << "\n"
              << "  spatial encoder:  " << count_params(spa, true) << "\n";
    return 0;
}

// stratified per-class subsample of the train coordinates
std::vector<PixelCoord> stratified_fraction(const Dataset& d, double fraction, uint64_t seed) {
    std::map<int, std::vector<PixelCoord>> per_class;
    for (const PixelCoord& p : d.split.train)
        per_class[d.labels.at(p.first, p.second)].push_back(p);
    std::vector<PixelCoord> out;
    Rng rng(mix64(seed, 0x66726163ULL));
    for (auto& [cls, coords] : per_class) {
        rng.shuffle(coords);
        size_t keep = std::max<size_t>(1, static_cast<size_t>(std::llround(fraction * coords.size())));
        out.insert(out.end(), coords.begin(), coords.begin() + std::min(keep, coords.size()));
    }
    return out;
}

int run_ablate(RunConfig cfg, const std::string& grid) {
    Dataset d = load_dataset(cfg);
    prepare_out(cfg);
    std::ofstream csv(out_path(cfg, "reports/ablate_" + grid + ".csv"));
    csv.precision(10);

    auto finetune_eval = [&](const RunConfig& c, const Dataset& data,
                             const std::vector<PixelCoord>& train_coords,
                             std::optional<std::string> spe_ck,
                             std::optional<std::string> spa_ck) {
        FinetuneConfig fc = c.finetune;
        fc.pretrained_spectral = std::move(spe_ck);
        fc.pretrained_spatial = std::move(spa_ck);
        CubeSampleSource train(data.cube, train_coords, c.patch_size, &data.labels);
        FinetuneResult res =
            finetune(train, spectral_cfg(c, data.cube.bands), spatial_cfg(c, data.cube.bands),
                     data.labels.num_classes, c.patch_size, fc);
        return metrics(evaluate_model(res.model, data, c.patch_size));
    };

    if (grid == "ratio") {
        if (d.split.pretrain.empty())
            throw ConfigError("ratio grid needs unlabeled pixels for pre-training");
        CubeSampleSource pre_src(d.cube, d.split.pretrain, cfg.patch_size);
        const std::vector<double> ratios = {0.5, 0.6, 0.7, 0.8};
        // pre-train each branch once per ratio, then cross the checkpoints
        std::map<double, std::string> spe_ck, spa_ck;
        for (double r : ratios) {
            RunConfig c = cfg;
            c.pretrain.ratio = r;
            std::string tag = std::to_string(static_cast<int>(std::llround(r * 100)));
            PretrainResult ps = pretrain(pre_src, TokenMode::Spectral,
                                         spectral_cfg(c, d.cube.bands), c.pretrain);
            spe_ck[r] = out_path(cfg, "checkpoints/ablate_spe_" + tag);
            save_checkpoint(ps.best_state, spe_ck[r]);
            PretrainResult pp = pretrain(pre_src, TokenMode::Spatial,
                                         spatial_cfg(c, d.cube.bands), c.pretrain);
            spa_ck[r] = out_path(cfg, "checkpoints/ablate_spa_" + tag);
            save_checkpoint(pp.best_state, spa_ck[r]);
        }
        csv << "spectral_ratio,spatial_ratio,oa,aa,kappa\n";
        for (double rs : ratios)
            for (double rp : ratios) {
                MetricsReport m = finetune_eval(cfg, d, d.split.train, spe_ck[rs], spa_ck[rp]);
                csv << rs << "," << rp << "," << m.oa << "," << m.aa << "," << m.kappa << "\n";
                csv.flush();
            }
    } else if (grid == "patch") {
        csv << "patch,oa,aa,kappa\n";
        for (int S : {3, 5, 7, 9}) {
            RunConfig c = cfg;
            c.patch_size = S;
            c.validate();
            MetricsReport m = finetune_eval(c, d, d.split.train, std::nullopt, std::nullopt);
            csv << S << "," << m.oa << "," << m.aa << "," << m.kappa << "\n";
            csv.flush();
        }
    } else if (grid == "group") {
        csv << "band_group,oa,aa,kappa\n";
        for (int g : {1, 3, 5, 7}) {
            RunConfig c = cfg;
            c.band_group = g;
            c.finetune.band_group = g;
            c.validate();
            MetricsReport m = finetune_eval(c, d, d.split.train, std::nullopt, std::nullopt);
            csv << g << "," << m.oa << "," << m.aa << "," << m.kappa << "\n";
            csv.flush();
        }
    } else if (grid == "fraction") {
        csv << "fraction,train_samples,oa,aa,kappa\n";
        for (double f : {0.2, 0.4, 0.6, 0.8, 1.0}) {
            std::vector<PixelCoord> sub = stratified_fraction(d, f, cfg.seed);
            MetricsReport m = finetune_eval(cfg, d, sub, std::nullopt, std::nullopt);
            csv << f << "," << sub.size() << "," << m.oa << "," << m.aa << "," << m.kappa << "\n";
            csv.flush();
        }
    } else {
        throw ConfigError("unknown ablation grid '" + grid +
                          "' (expected ratio, patch, group, or fraction)");
    }
    std::cout << "grid results written to " << out_path(cfg, "reports/ablate_" + grid + ".csv")
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"factorized spectral-spatial transformer for hyperspectral classification"};
    app.require_subcommand(1);

    std::string config_path, mode = "spectral", model_prefix, grid = "patch";
    std::vector<std::string> pretrained;
    bool scratch = false, all_pixels = false;
    std::optional<uint64_t> seed_override;
    std::optional<int> threads_override, patch_override, group_override;
    std::optional<double> ratio_override;
    std::optional<std::string> out_override;

    auto add_common = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run configuration JSON")->required();
        cmd->add_option("--seed", seed_override, "override config seed");
        cmd->add_option("--threads", threads_override, "worker cap (1 = exactly deterministic)");
        cmd->add_option("--out", out_override, "override output directory");
        cmd->add_option("--patch", patch_override, "override spatial patch size");
        cmd->add_option("--group", group_override, "override spectral band grouping");
    };

    CLI::App* c_pre = app.add_subcommand("pretrain", "masked-token pre-training of one encoder");
    add_common(c_pre);
    c_pre->add_option("--mode", mode, "spectral | spatial")->required();
    c_pre->add_option("--ratio", ratio_override, "override masking ratio");

    CLI::App* c_fin = app.add_subcommand("finetune", "supervised training + evaluation");
    add_common(c_fin);
    c_fin->add_option("--from-pretrained", pretrained,
                      "spectral and spatial checkpoint prefixes")
        ->expected(2);
    c_fin->add_flag("--scratch", scratch, "random initialization (no pre-training)");

    CLI::App* c_eval = app.add_subcommand("evaluate", "evaluate a saved model on the test split");
    add_common(c_eval);
    c_eval->add_option("--model", model_prefix, "model checkpoint prefix")->required();

    CLI::App* c_map = app.add_subcommand("map", "export classification maps");
    add_common(c_map);
    c_map->add_option("--model", model_prefix, "model checkpoint prefix")->required();
    c_map->add_flag("--all-pixels", all_pixels, "predict unlabeled pixels too");

    CLI::App* c_abl = app.add_subcommand("ablate", "run an ablation grid");
    add_common(c_abl);
    c_abl->add_option("--grid", grid, "ratio | patch | group | fraction")->required();

    CLI::App* c_prof = app.add_subcommand("profile", "analytic cost and parameter report");
    add_common(c_prof);

    CLI11_PARSE(app, argc, argv);

    try {
        RunConfig cfg = load_run_config(config_path);
        if (seed_override) {
            cfg.seed = *seed_override;
            cfg.pretrain.seed = *seed_override;
            cfg.finetune.seed = *seed_override;
        }
        if (threads_override) cfg.threads = *threads_override;
        if (out_override) cfg.out_dir = *out_override;
        if (patch_override) cfg.patch_size = *patch_override;
        if (group_override) {
            cfg.band_group = *group_override;
            cfg.pretrain.band_group = *group_override;
            cfg.finetune.band_group = *group_override;
        }
        if (ratio_override) cfg.pretrain.ratio = *ratio_override;
        cfg.validate();

        if (c_pre->parsed()) return run_pretrain(cfg, mode);
        if (c_fin->parsed()) return run_finetune(cfg, scratch, pretrained);
        if (c_eval->parsed()) return run_evaluate(cfg, model_prefix);
        if (c_map->parsed()) return run_map(cfg, model_prefix, all_pixels);
        if (c_abl->parsed()) return run_ablate(cfg, grid);
        if (c_prof->parsed()) return run_profile(cfg);
        return 2;
    } catch (const ConfigError& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "runtime error: " << e.what() << "\n";
        return 3;
    }
}
