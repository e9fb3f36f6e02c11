#include "facto/runconfig.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace facto {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

std::string with_data_root(const std::string& path) {
    if (path.empty() || fs::path(path).is_absolute()) return path;
    const char* root = std::getenv("FACTO_DATA_ROOT");
    if (!root || !*root) return path;
    return (fs::path(root) / path).string();
}

EncoderConfig encoder_from_json(const json& j, EncoderConfig defaults) {
    EncoderConfig c = defaults;
    if (j.contains("layers")) c.layers = j.at("layers").get<int>();
    if (j.contains("heads")) c.heads = j.at("heads").get<int>();
    if (j.contains("emb")) c.emb = j.at("emb").get<int>();
    if (j.contains("mlp_hidden")) c.mlp_hidden = j.at("mlp_hidden").get<int>();
    return c;
}

} // namespace

void RunConfig::validate() const {
    auto fail = [](const std::string& msg) { throw ConfigError("config: " + msg); };
    if (patch_size < 1 || patch_size % 2 == 0) fail("patch_size must be odd and positive");
    if (band_group < 1 || band_group % 2 == 0) fail("band_group must be odd and positive");
    if (joint_group < 1) fail("joint_group must be >= 1");
    if (!(pretrain.ratio > 0.0 && pretrain.ratio < 1.0))
        fail("masking ratio must lie strictly between 0 and 1, got " +
             std::to_string(pretrain.ratio));
    if (pretrain.epochs < 1 || pretrain.batch < 1) fail("pretrain epochs/batch must be positive");
    if (pretrain.schedule.base_lr <= 0.0) fail("pretrain learning rate must be positive");
    if (finetune.epochs < 1 || finetune.batch < 1) fail("finetune epochs/batch must be positive");
    if (finetune.schedule.base_lr <= 0.0) fail("finetune learning rate must be positive");
    if (threads < 1) fail("threads must be >= 1");
    auto check_enc = [&](const EncoderConfig& c, const char* which) {
        if (c.layers < 1) fail(std::string(which) + ": layers must be >= 1");
        if (c.heads < 1 || c.emb < 1 || c.emb % c.heads != 0)
            fail(std::string(which) + ": emb must be a positive multiple of heads");
        if (c.mlp_hidden < 1) fail(std::string(which) + ": mlp_hidden must be positive");
    };
    check_enc(spectral, "spectral");
    check_enc(spatial, "spatial");
}

RunConfig load_run_config(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw ConfigError("cannot open config file: " + path);
    json j;
    try {
        f >> j;
    } catch (const std::exception& e) {
        throw ConfigError("config parse error in " + path + ": " + e.what());
    }
    RunConfig c;
    try {
        const json& ds = j.at("dataset");
        c.dataset_name = ds.value("name", "");
        c.cube_prefix = with_data_root(ds.at("cube").get<std::string>());
        c.labels_prefix = with_data_root(ds.at("labels").get<std::string>());
        if (ds.contains("split")) c.split_file = with_data_root(ds.at("split").get<std::string>());

        c.patch_size = j.value("patch_size", c.patch_size);
        c.band_group = j.value("band_group", c.band_group);
        c.joint_group = j.value("joint_group", c.joint_group);
        c.seed = j.value("seed", c.seed);
        c.threads = j.value("threads", c.threads);
        c.out_dir = j.value("out", c.out_dir);

        if (j.contains("spectral")) c.spectral = encoder_from_json(j.at("spectral"), c.spectral);
        if (j.contains("spatial")) c.spatial = encoder_from_json(j.at("spatial"), c.spatial);

        if (j.contains("pretrain")) {
            const json& p = j.at("pretrain");
            c.pretrain.epochs = p.value("epochs", c.pretrain.epochs);
            c.pretrain.batch = p.value("batch", c.pretrain.batch);
            c.pretrain.schedule.base_lr = p.value("lr", c.pretrain.schedule.base_lr);
            c.pretrain.schedule.factor = p.value("lr_decay", c.pretrain.schedule.factor);
            c.pretrain.schedule.every = p.value("lr_decay_every", c.pretrain.schedule.every);
            c.pretrain.ratio = p.value("ratio", c.pretrain.ratio);
            c.pretrain.decoder_sees_sequence =
                p.value("decoder_sees_sequence", c.pretrain.decoder_sees_sequence);
        }
        if (j.contains("finetune")) {
            const json& p = j.at("finetune");
            c.finetune.epochs = p.value("epochs", c.finetune.epochs);
            c.finetune.batch = p.value("batch", c.finetune.batch);
            c.finetune.schedule.base_lr = p.value("lr", c.finetune.schedule.base_lr);
            c.finetune.schedule.factor = p.value("lr_decay", c.finetune.schedule.factor);
            c.finetune.schedule.every = p.value("lr_decay_every", c.finetune.schedule.every);
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::exception& e) {
        throw ConfigError("config field error in " + path + ": " + e.what());
    }
    c.pretrain.seed = c.seed;
    c.pretrain.band_group = c.band_group;
    c.pretrain.joint_group = c.joint_group;
    c.finetune.seed = c.seed;
    c.finetune.band_group = c.band_group;
    return c;
}

std::string config_canonical_json(const RunConfig& c) {
    json j;
    j["dataset"] = {{"name", c.dataset_name},
                    {"cube", c.cube_prefix},
                    {"labels", c.labels_prefix},
                    {"split", c.split_file ? json(*c.split_file) : json(nullptr)}};
    j["patch_size"] = c.patch_size;
    j["band_group"] = c.band_group;
    j["joint_group"] = c.joint_group;
    j["seed"] = c.seed;
    j["threads"] = c.threads;
    auto enc = [](const EncoderConfig& e) {
        return json{{"layers", e.layers},
                    {"heads", e.heads},
                    {"emb", e.emb},
                    {"mlp_hidden", e.mlp_hidden}};
    };
    j["spectral"] = enc(c.spectral);
    j["spatial"] = enc(c.spatial);
    j["pretrain"] = {{"epochs", c.pretrain.epochs},
                     {"batch", c.pretrain.batch},
                     {"lr", c.pretrain.schedule.base_lr},
                     {"lr_decay", c.pretrain.schedule.factor},
                     {"lr_decay_every", c.pretrain.schedule.every},
                     {"ratio", c.pretrain.ratio},
                     {"decoder_sees_sequence", c.pretrain.decoder_sees_sequence}};
    j["finetune"] = {{"epochs", c.finetune.epochs},
                     {"batch", c.finetune.batch},
                     {"lr", c.finetune.schedule.base_lr},
                     {"lr_decay", c.finetune.schedule.factor},
                     {"lr_decay_every", c.finetune.schedule.every}};
    return j.dump();
}

uint64_t fnv1a(const std::string& bytes) {
    uint64_t h = 0xcbf29ce484222325ULL;
    for (unsigned char c : bytes) {
        h ^= c;
        h *= 0x100000001b3ULL;
    }
    return h;
}

std::string hex64(uint64_t v) {
    static const char* digits = "0123456789abcdef";
    std::string s(16, '0');
    for (int i = 15; i >= 0; --i) {
        s[i] = digits[v & 0xf];
        v >>= 4;
    }
    return s;
}

uint64_t hash_file(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    if (!f) return 0;
    std::ostringstream ss;
    ss << f.rdbuf();
    return fnv1a(ss.str());
}

void ensure_run_layout(const std::string& out_dir) {
    for (const char* sub : {"checkpoints", "logs", "reports", "maps"})
        fs::create_directories(fs::path(out_dir) / sub);
}

void write_run_manifest(const RunConfig& cfg, const std::string& out_dir) {
    json j;
    std::string canon = config_canonical_json(cfg);
    j["config"] = json::parse(canon);
    j["config_hash"] = hex64(fnv1a(canon));
    j["seed"] = cfg.seed;
    j["inputs"] = {
        {"cube_json", hex64(hash_file(cfg.cube_prefix + ".json"))},
        {"cube_raw", hex64(hash_file(cfg.cube_prefix + ".raw"))},
        {"labels_json", hex64(hash_file(cfg.labels_prefix + ".json"))},
        {"labels_raw", hex64(hash_file(cfg.labels_prefix + ".raw"))},
        {"split", cfg.split_file ? json(hex64(hash_file(*cfg.split_file))) : json(nullptr)},
    };
    std::ofstream f(fs::path(out_dir) / "manifest.json");
    if (!f) throw std::runtime_error("cannot write run manifest");
    f << j.dump(2) << "\n";
}

} // namespace facto
