#ifndef FACTO_PRETRAIN_HPP
#define FACTO_PRETRAIN_HPP

#include <cstdint>
#include <string>
#include <vector>

#include "facto/checkpoint.hpp"
#include "facto/encoder.hpp"
#include "facto/optimizer.hpp"
#include "facto/rng.hpp"
#include "facto/tokenizer.hpp"

namespace facto {

// Masked patch-token indices (0-based, in [0, N)); CLS is never maskable.
struct MaskPlan {
    std::vector<int> masked; // sorted, unique
    double ratio = 0.7;
};

// Learnable mask token plus the token-wise linear reconstruction head.
// When `sees_sequence` is set, one extra transformer block mixes the
// reassembled sequence before the head, so masked predictions can read
// visible content.
struct Decoder {
    ParamStore params; // dec.mask, dec.head.w, dec.head.b [, dec.mix.*]
    bool sees_sequence = false;
    int heads = 1;

    void init(int emb, int token_dim, int mlp_hidden, int heads_, bool sees_sequence_,
              uint64_t seed);
};

struct PretrainConfig {
    int epochs = 200;
    int batch = 32;
    StepDecay schedule{5e-4, 0.9, 20};
    double ratio = 0.7;
    uint64_t seed = 1;
    bool decoder_sees_sequence = false;
    int band_group = 1;  // spectral tokenization
    int joint_group = 10; // joint tokenization
};

// Uniform sample without replacement of round(ratio * N) indices.
MaskPlan sample_mask(int num_tokens, double ratio, Rng& rng);

// Visible-only encoding, mask-token reinsertion, token-wise linear head at
// masked positions; returns predictions in masked-index order.
Tape::Ref masked_forward(Tape& t, const Encoder& enc, const BoundParams& be,
                         const Decoder& dec, const BoundParams& bd, const Mat& raw_tokens,
                         const MaskPlan& plan);

// Convenience forward returning values only.
Mat masked_forward(const Encoder& enc, const Decoder& dec, const Mat& raw_tokens,
                   const MaskPlan& plan);

// Mean over masked tokens and dimensions of squared reconstruction error.
double masked_mse(const Mat& pred, const RawTokens& raw, const MaskPlan& plan);

// Abstract sample provider; extraction happens lazily so large pretrain sets
// never materialize at once.
class SampleSource {
public:
    virtual ~SampleSource() = default;
    virtual size_t size() const = 0;
    virtual Sample get(size_t i) const = 0;
};

class CubeSampleSource : public SampleSource {
public:
    CubeSampleSource(const HsiCube& cube, std::vector<PixelCoord> centers, int patch_size,
                     const LabelField* labels = nullptr)
        : cube_(&cube), centers_(std::move(centers)), patch_size_(patch_size), labels_(labels) {}
    size_t size() const override { return centers_.size(); }
    Sample get(size_t i) const override {
        return extract_sample(*cube_, centers_[i], patch_size_, labels_);
    }

private:
    const HsiCube* cube_;
    std::vector<PixelCoord> centers_;
    int patch_size_;
    const LabelField* labels_;
};

struct EpochLog {
    int epoch = 0; // 1-based
    double mean_loss = 0.0;
    double lr = 0.0;
};

struct PretrainResult {
    Encoder encoder;
    Decoder decoder;
    std::vector<EpochLog> log;
    Checkpoint final_state; // encoder + decoder params, "dec." prefixed
    Checkpoint best_state;  // lowest epoch loss
    double best_loss = 0.0;
};

RawTokens tokenize_for_mode(const Sample& s, TokenMode mode, const PretrainConfig& cfg);

PretrainResult pretrain(const SampleSource& samples, TokenMode mode, EncoderConfig enc_cfg,
                        const PretrainConfig& cfg);

void write_loss_log(const std::vector<EpochLog>& log, const std::string& path);

} // namespace facto

#endif
