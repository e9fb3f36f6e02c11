#include "facto/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numeric>
#include <stdexcept>

#include <json.hpp>

namespace facto {

namespace {

void init_head(ParamStore& head, int in_dim, int hidden, int num_classes, Rng& rng) {
    Mat w1(in_dim, hidden);
    for (double& x : w1.d) x = rng.trunc_normal(0.02);
    head.add("fuse.w1", std::move(w1));
    head.add("fuse.b1", Mat(1, hidden));
    Mat w2(hidden, num_classes);
    for (double& x : w2.d) x = rng.trunc_normal(0.02);
    head.add("fuse.w2", std::move(w2));
    head.add("fuse.b2", Mat(1, num_classes));
}

Tape::Ref head_forward(Tape& t, const BoundParams& bh, Tape::Ref fused) {
    Tape::Ref h = t.gelu(t.add_rowvec(t.matmul(fused, bh.of("fuse.w1")), bh.of("fuse.b1")));
    return t.add_rowvec(t.matmul(h, bh.of("fuse.w2")), bh.of("fuse.b2"));
}

std::vector<double> row_to_vec(const Mat& m) {
    return std::vector<double>(m.d.begin(), m.d.end());
}

int argmax1(const std::vector<double>& v) {
    return static_cast<int>(std::max_element(v.begin(), v.end()) - v.begin()) + 1;
}

// builds the full classification graph; returns the 1 x C logits ref
Tape::Ref classify_graph(Tape& t, const FactoFormer& m, const Sample& sample,
                         const BoundParams& bspe, const BoundParams& bspa,
                         const BoundParams& bh) {
    RawTokens spe = tokenize_spectral(sample, m.band_group);
    RawTokens spa = tokenize_spatial(sample);
    Tape::Ref zs = m.spectral.encode_from(t, bspe, m.spectral.embed_all(t, bspe, spe.tokens));
    Tape::Ref zp = m.spatial.encode_from(t, bspa, m.spatial.embed_all(t, bspa, spa.tokens));
    Tape::Ref cls_s = t.select_rows(zs, {0});
    Tape::Ref cls_p = t.select_rows(zp, {0});
    Tape::Ref fused = t.concat_cols({cls_s, cls_p});
    return head_forward(t, bh, fused);
}

} // namespace

void FactoFormer::init(uint64_t seed) {
    spectral.init(mix64(seed, 1));
    spatial.init(mix64(seed, 2));
    head = ParamStore();
    Rng rng(mix64(seed, 3));
    init_head(head, spectral.cfg.emb + spatial.cfg.emb, fusion_hidden, num_classes, rng);
}

std::vector<double> FactoFormer::classify(const Sample& sample) const {
    if (sample.patch_size != patch_size)
        throw std::runtime_error("classify: sample patch size mismatch");
    Tape t;
    BoundParams bspe = bind_params(t, spectral.params);
    BoundParams bspa = bind_params(t, spatial.params);
    BoundParams bh = bind_params(t, head);
    return row_to_vec(t.val(classify_graph(t, *this, sample, bspe, bspa, bh)));
}

int FactoFormer::predict(const Sample& sample) const { return argmax1(classify(sample)); }

void JointModel::init(uint64_t seed) {
    encoder.init(mix64(seed, 4));
    head = ParamStore();
    Rng rng(mix64(seed, 5));
    init_head(head, encoder.cfg.emb, fusion_hidden, num_classes, rng);
}

std::vector<double> JointModel::classify(const Sample& sample) const {
    RawTokens raw = tokenize_joint(sample, group_len);
    Tape t;
    BoundParams be = bind_params(t, encoder.params);
    BoundParams bh = bind_params(t, head);
    Tape::Ref z = encoder.encode_from(t, be, encoder.embed_all(t, be, raw.tokens));
    Tape::Ref logits = head_forward(t, bh, t.select_rows(z, {0}));
    return row_to_vec(t.val(logits));
}

int JointModel::predict(const Sample& sample) const { return argmax1(classify(sample)); }

double cross_entropy(const std::vector<double>& logits, int label) {
    if (label < 1 || label > static_cast<int>(logits.size()))
        throw std::runtime_error("cross_entropy: label out of range");
    double mx = *std::max_element(logits.begin(), logits.end());
    double sum = 0.0;
    for (double x : logits) sum += std::exp(x - mx);
    return std::log(sum) + mx - logits[label - 1];
}

void load_pretrained_encoder(Encoder& enc, const Checkpoint& ckpt) {
    if (ckpt.config.layers != enc.cfg.layers || ckpt.config.emb != enc.cfg.emb ||
        ckpt.config.heads != enc.cfg.heads || ckpt.config.mlp_hidden != enc.cfg.mlp_hidden ||
        ckpt.config.tokens != enc.cfg.tokens || ckpt.config.token_dim != enc.cfg.token_dim)
        throw std::runtime_error("pretrained checkpoint does not match encoder config");
    for (auto& [name, m] : enc.params.items()) {
        // every non-decoder parameter must be present
        m = ckpt.params.get(name);
    }
}

FinetuneResult finetune(const SampleSource& train, EncoderConfig spectral_cfg,
                        EncoderConfig spatial_cfg, int num_classes, int patch_size,
                        const FinetuneConfig& cfg) {
    if (train.size() == 0) throw std::runtime_error("finetune: empty training set");
    FinetuneResult res;
    FactoFormer& m = res.model;
    m.num_classes = num_classes;
    m.patch_size = patch_size;
    m.band_group = cfg.band_group;
    m.spectral.cfg = spectral_cfg;
    m.spatial.cfg = spatial_cfg;
    m.init(cfg.seed);
    if (cfg.pretrained_spectral)
        load_pretrained_encoder(m.spectral, load_checkpoint(*cfg.pretrained_spectral));
    if (cfg.pretrained_spatial)
        load_pretrained_encoder(m.spatial, load_checkpoint(*cfg.pretrained_spatial));

    Adam opt_spe, opt_spa, opt_head;
    std::vector<size_t> order(train.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.schedule.lr_at(epoch);
        Rng shuffle_rng(mix64(cfg.seed, 0x667473ULL, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        size_t correct = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch) {
            size_t stop = std::min(order.size(), start + cfg.batch);
            // the two encoders reuse parameter names, so each store needs
            // its own gradient accumulator
            GradMap grads_spe, grads_spa, grads_head;
            for (size_t bi = start; bi < stop; ++bi) {
                Sample s = train.get(order[bi]);
                if (!s.label) throw std::runtime_error("finetune: unlabeled training sample");
                Tape t;
                BoundParams bspe = bind_params(t, m.spectral.params);
                BoundParams bspa = bind_params(t, m.spatial.params);
                BoundParams bh = bind_params(t, m.head);
                Tape::Ref logits = classify_graph(t, m, s, bspe, bspa, bh);
                Tape::Ref loss = t.cross_entropy(logits, *s.label - 1);
                double lv = t.val(loss)(0, 0);
                if (!std::isfinite(lv))
                    throw std::runtime_error("finetune: non-finite loss at epoch " +
                                             std::to_string(epoch + 1));
                loss_sum += lv;
                const Mat& lv_row = t.val(logits);
                int pred = static_cast<int>(std::max_element(lv_row.d.begin(), lv_row.d.end()) -
                                            lv_row.d.begin()) +
                           1;
                if (pred == *s.label) ++correct;
                t.backward(loss);
                harvest_grads(t, bspe, grads_spe);
                harvest_grads(t, bspa, grads_spa);
                harvest_grads(t, bh, grads_head);
            }
            double inv = 1.0 / static_cast<double>(stop - start);
            for (GradMap* g : {&grads_spe, &grads_spa, &grads_head})
                for (auto& [name, gm] : *g)
                    for (double& x : gm.d) x *= inv;
            opt_spe.step(m.spectral.params, grads_spe, lr);
            opt_spa.step(m.spatial.params, grads_spa, lr);
            opt_head.step(m.head, grads_head, lr);
        }
        res.log.push_back({epoch + 1, loss_sum / static_cast<double>(order.size()),
                           static_cast<double>(correct) / static_cast<double>(order.size()), lr});
    }
    return res;
}

double factoformer_macs(const EncoderConfig& spectral_cfg, const EncoderConfig& spatial_cfg,
                        int num_classes, int fusion_hidden) {
    double head = static_cast<double>(spectral_cfg.emb + spatial_cfg.emb) * fusion_hidden +
                  static_cast<double>(fusion_hidden) * num_classes;
    return encoder_macs(spectral_cfg) + encoder_macs(spatial_cfg) + head;
}

double joint_macs(const EncoderConfig& joint_cfg, int num_classes, int fusion_hidden) {
    double head = static_cast<double>(joint_cfg.emb) * fusion_hidden +
                  static_cast<double>(fusion_hidden) * num_classes;
    return encoder_macs(joint_cfg) + head;
}

namespace {

using nlohmann::json;

json config_json(const EncoderConfig& c) {
    return {{"layers", c.layers},   {"heads", c.heads},           {"emb", c.emb},
            {"mlp_hidden", c.mlp_hidden}, {"tokens", c.tokens}, {"token_dim", c.token_dim}};
}

EncoderConfig config_from_json(const json& j) {
    EncoderConfig c;
    c.layers = j.at("layers").get<int>();
    c.heads = j.at("heads").get<int>();
    c.emb = j.at("emb").get<int>();
    c.mlp_hidden = j.at("mlp_hidden").get<int>();
    c.tokens = j.at("tokens").get<int>();
    c.token_dim = j.at("token_dim").get<int>();
    return c;
}

} // namespace

void save_model(const FactoFormer& model, const std::string& dataset_name,
                const std::string& prefix) {
    json manifest;
    manifest["kind"] = "factoformer";
    manifest["dataset"] = dataset_name;
    manifest["patch_size"] = model.patch_size;
    manifest["band_group"] = model.band_group;
    manifest["classes"] = model.num_classes;
    manifest["fusion_hidden"] = model.fusion_hidden;
    manifest["spectral"] = config_json(model.spectral.cfg);
    manifest["spatial"] = config_json(model.spatial.cfg);
    json plist = json::array();
    std::vector<float> payload;
    size_t offset = 0;
    auto dump_store = [&](const std::string& prefix_name, const ParamStore& store) {
        for (const auto& [name, m] : store.items()) {
            plist.push_back({{"name", prefix_name + name},
                             {"rows", m.rows},
                             {"cols", m.cols},
                             {"offset", offset}});
            for (double x : m.d) payload.push_back(static_cast<float>(x));
            offset += m.size() * sizeof(float);
        }
    };
    dump_store("spe.", model.spectral.params);
    dump_store("spa.", model.spatial.params);
    dump_store("", model.head);
    manifest["params"] = plist;
    std::ofstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("cannot write " + prefix + ".json");
    jf << manifest.dump(2) << "\n";
    std::ofstream bf(prefix + ".bin", std::ios::binary);
    if (!bf) throw std::runtime_error("cannot write " + prefix + ".bin");
    bf.write(reinterpret_cast<const char*>(payload.data()),
             static_cast<std::streamsize>(payload.size() * sizeof(float)));
}

FactoFormer load_model(const std::string& prefix, std::string* dataset_name) {
    std::ifstream jf(prefix + ".json");
    if (!jf) throw std::runtime_error("cannot open model manifest: " + prefix + ".json");
    json manifest;
    jf >> manifest;
    if (manifest.value("kind", "") != "factoformer")
        throw std::runtime_error("not a factoformer model checkpoint: " + prefix);
    FactoFormer m;
    m.patch_size = manifest.at("patch_size").get<int>();
    m.band_group = manifest.at("band_group").get<int>();
    m.num_classes = manifest.at("classes").get<int>();
    m.fusion_hidden = manifest.at("fusion_hidden").get<int>();
    m.spectral.cfg = config_from_json(manifest.at("spectral"));
    m.spatial.cfg = config_from_json(manifest.at("spatial"));
    if (dataset_name) *dataset_name = manifest.value("dataset", "");

    std::ifstream bf(prefix + ".bin", std::ios::binary | std::ios::ate);
    if (!bf) throw std::runtime_error("cannot open model payload: " + prefix + ".bin");
    size_t bytes = static_cast<size_t>(bf.tellg());
    std::vector<float> payload(bytes / sizeof(float));
    bf.seekg(0);
    bf.read(reinterpret_cast<char*>(payload.data()), static_cast<std::streamsize>(bytes));
    if (!bf) throw std::runtime_error("short read on " + prefix + ".bin");

    for (const auto& p : manifest.at("params")) {
        std::string name = p.at("name").get<std::string>();
        int rows = p.at("rows").get<int>();
        int cols = p.at("cols").get<int>();
        size_t off = p.at("offset").get<size_t>() / sizeof(float);
        size_t n = static_cast<size_t>(rows) * cols;
        if (off + n > payload.size()) throw std::runtime_error("model payload truncated");
        Mat mat(rows, cols);
        for (size_t i = 0; i < n; ++i) mat.d[i] = static_cast<double>(payload[off + i]);
        if (name.rfind("spe.", 0) == 0) {
            m.spectral.params.add(name.substr(4), std::move(mat));
        } else if (name.rfind("spa.", 0) == 0) {
            m.spatial.params.add(name.substr(4), std::move(mat));
        } else {
            m.head.add(name, std::move(mat));
        }
    }
    return m;
}

} // namespace facto
