#ifndef FACTO_MODEL_HPP
#define FACTO_MODEL_HPP

#include <optional>
#include <string>
#include <vector>

#include "facto/encoder.hpp"
#include "facto/optimizer.hpp"
#include "facto/pretrain.hpp"

namespace facto {

// Two factorized encoders plus the CLS-fusion MLP classifier.
struct FactoFormer {
    Encoder spectral;
    Encoder spatial;
    ParamStore head; // fuse.w1 (d_spe+d_spa x hidden), fuse.b1, fuse.w2 (hidden x C), fuse.b2
    int num_classes = 0;
    int patch_size = 0;
    int band_group = 1;
    int fusion_hidden = 64;

    void init(uint64_t seed);
    std::vector<double> classify(const Sample& sample) const;
    int predict(const Sample& sample) const; // argmax class in 1..C
};

// Single encoder over 1x1xk joint tokens, CLS -> MLP head.
struct JointModel {
    Encoder encoder;
    ParamStore head;
    int num_classes = 0;
    int patch_size = 0;
    int group_len = 10;
    int fusion_hidden = 64;

    void init(uint64_t seed);
    std::vector<double> classify(const Sample& sample) const;
    int predict(const Sample& sample) const;
};

// -log softmax(logits)[label], label in 1..C, log-sum-exp form.
double cross_entropy(const std::vector<double>& logits, int label);

struct FinetuneConfig {
    int epochs = 80;
    int batch = 32;
    StepDecay schedule{3e-4, 0.9, 20};
    uint64_t seed = 1;
    int band_group = 1;
    std::optional<std::string> pretrained_spectral; // checkpoint prefixes
    std::optional<std::string> pretrained_spatial;
};

struct FinetuneLog {
    int epoch = 0;
    double mean_loss = 0.0;
    double train_accuracy = 0.0;
    double lr = 0.0;
};

struct FinetuneResult {
    FactoFormer model;
    std::vector<FinetuneLog> log;
};

// Loads encoder weights (embedding, positional, CLS, blocks, final LN) from a
// pretrain checkpoint; decoder-side parameters are discarded.
void load_pretrained_encoder(Encoder& enc, const Checkpoint& ckpt);

FinetuneResult finetune(const SampleSource& train, EncoderConfig spectral_cfg,
                        EncoderConfig spatial_cfg, int num_classes, int patch_size,
                        const FinetuneConfig& cfg);

// Analytic dense-layer multiply-add cost of one classification forward.
double factoformer_macs(const EncoderConfig& spectral_cfg, const EncoderConfig& spatial_cfg,
                        int num_classes, int fusion_hidden = 64);
double joint_macs(const EncoderConfig& joint_cfg, int num_classes, int fusion_hidden = 64);

// Bundled model checkpoint: both encoders + fusion head, with dataset name,
// patch size and class count for validation on load.
void save_model(const FactoFormer& model, const std::string& dataset_name,
                const std::string& prefix);
FactoFormer load_model(const std::string& prefix, std::string* dataset_name = nullptr);

} // namespace facto

#endif
