#include "facto/checkpoint.hpp"

#include <fstream>
#include <stdexcept>

#include <json.hpp>

namespace facto {

using nlohmann::json;

void save_checkpoint(const Checkpoint& ckpt, const std::string& prefix) {
    json manifest;
    manifest["config"] = {{"layers", ckpt.config.layers},   {"heads", ckpt.config.heads},
                          {"emb", ckpt.config.emb},         {"mlp_hidden", ckpt.config.mlp_hidden},
                          {"tokens", ckpt.config.tokens},   {"token_dim", ckpt.config.token_dim}};
    manifest["seed"] = ckpt.seed;
    manifest["epoch"] = ckpt.epoch;
    manifest["mode"] = ckpt.mode;
    json plist = json::array();
    size_t offset = 0;
    std::vector<float> payload;
    for (const auto& [name, m] : ckpt.params.items()) {
        plist.push_back({{"name", name}, {"rows", m.rows}, {"cols", m.cols}, {"offset", offset}});
        for (double x : m.d) payload.push_back(static_cast<float>(x));
        offset += m.size() * sizeof(float);
    }
    manifest["params"] = plist;
    std::ofstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("cannot write " + prefix + ".json");
    jf << manifest.dump(2) << "\n";
    std::ofstream bf(prefix + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write " + prefix + ".bin");
    bf.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
    if (!bf) throw std::runtime_error("write failed on " + prefix + ".bin");
}

Checkpoint load_checkpoint(const std::string& prefix) {
    std::ifstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("cannot open checkpoint manifest: " + prefix + ".json");
    json manifest;
    jf >> manifest;
    Checkpoint ckpt;
    const json& c = manifest.at("config");
    ckpt.config.layers = c.at("layers").get<int>();
    ckpt.config.heads = c.at("heads").get<int>();
    ckpt.config.emb = c.at("emb").get<int>();
    ckpt.config.mlp_hidden = c.at("mlp_hidden").get<int>();
    ckpt.config.tokens = c.at("tokens").get<int>();
    ckpt.config.token_dim = c.at("token_dim").get<int>();
    ckpt.seed = manifest.at("seed").get<uint64_t>();
    ckpt.epoch = manifest.at("epoch").get<int>();
    ckpt.mode = manifest.at("mode").get<std::string>();

    std::ifstream bf(prefix + ".bin", std::ios::binary | std::ios::ate);
    if (!bf) throw std::runtime_error("cannot open checkpoint payload: " + prefix + ".bin");
    size_t bytes = static_cast<size_t>(bf.tellg());
    std::vector<float> payload(bytes / sizeof(float));
    bf.seekg(0);
    bf.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
    if (!bf) throw std::runtime_error("short read on " + prefix + ".bin");

    for (const auto& p : manifest.at("params")) {
        int rows = p.at("rows").get<int>();
        int cols = p.at("cols").get<int>();
        size_t off = p.at("offset").get<size_t>() / sizeof(float);
        size_t n = static_cast<size_t>(rows) * cols;
        if (off + n > payload.size())
            throw std::runtime_error("checkpoint payload truncated: " + prefix);
        Mat m(rows, cols);
        for (size_t i = 0; i < n; ++i) m.d[i] = static_cast<double>(payload[off + i]);
        ckpt.params.add(p.at("name").get<std::string>(), std::move(m));
    }
    return ckpt;
}

} // namespace facto
