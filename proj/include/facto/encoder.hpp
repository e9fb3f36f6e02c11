#ifndef FACTO_ENCODER_HPP
#define FACTO_ENCODER_HPP

#include <cstdint>
#include <string>
#include <unordered_map>
#include <vector>

#include "facto/tape.hpp"
#include "facto/tensor.hpp"
#include "facto/tokenizer.hpp"

namespace facto {

struct EncoderConfig {
    int layers = 5;     // L
    int heads = 4;      // h
    int emb = 32;       // d
    int mlp_hidden = 4; // absolute hidden width
    int tokens = 0;     // N (patch tokens, CLS excluded)
    int token_dim = 0;

    int head_dim() const { return emb / heads; }
    void validate() const;
};

// Ordered name -> Mat store; ordering fixes checkpoint layout and the
// iteration order of optimizer updates.
class ParamStore {
public:
    Mat& add(const std::string& name, Mat m);
    Mat& get(const std::string& name);
    const Mat& get(const std::string& name) const;
    bool has(const std::string& name) const { return index_.count(name) > 0; }

    const std::vector<std::pair<std::string, Mat>>& items() const { return items_; }
    std::vector<std::pair<std::string, Mat>>& items() { return items_; }

    size_t scalar_count() const;

private:
    std::vector<std::pair<std::string, Mat>> items_;
    std::unordered_map<std::string, size_t> index_;
};

using GradMap = std::unordered_map<std::string, Mat>;

// Tape refs for one forward pass over a ParamStore.
struct BoundParams {
    std::vector<std::pair<std::string, Tape::Ref>> refs;
    Tape::Ref of(const std::string& name) const;
};

BoundParams bind_params(Tape& tape, const ParamStore& store);
void harvest_grads(const Tape& tape, const BoundParams& bound, GradMap& acc);

class Rng;

// One pre-norm residual block under a parameter name prefix, so encoder
// layers ("layerN.") and the optional decoder mixing block share the math.
void add_block_params(ParamStore& store, const std::string& prefix, int emb, int mlp_hidden,
                      Rng& rng);
Tape::Ref transformer_block(Tape& t, const BoundParams& b, Tape::Ref x,
                            const std::string& prefix, int heads);

// One factorized transformer: embedding, L pre-norm blocks, final LN.
// Weight matrices are stored input-major (rows = fan-in), biases as 1 x n.
struct Encoder {
    EncoderConfig cfg;
    ParamStore params;

    void init(uint64_t seed);

    // (count+1) x d sequence with CLS at row 0. `positions` are the 0-based
    // patch-token indices whose pos_embed rows apply (identity for a full
    // sequence, the visible subset during masked pre-training).
    Tape::Ref embed_tokens(Tape& t, const BoundParams& b, const Mat& raw_tokens,
                           const std::vector<int>& positions) const;
    Tape::Ref embed_all(Tape& t, const BoundParams& b, const Mat& raw_tokens) const;

    Tape::Ref block(Tape& t, const BoundParams& b, Tape::Ref x, int layer) const;
    Tape::Ref encode_from(Tape& t, const BoundParams& b, Tape::Ref seq) const;

    // tokenize -> embed -> encode; returns the (N+1) x d output values
    Mat encode(const Mat& raw_tokens) const;
};

// Pure forward helpers mirroring the pieces of the encoder; they run on a
// scratch tape so training and inference share one code path.
Mat attention_head(const Mat& Q, const Mat& K, const Mat& V);
Mat multi_head(const Mat& x, const Encoder& enc, int layer);
Mat encoder_block(const Mat& x, const Encoder& enc, int layer);

// Learnable-scalar count for one encoder; with_decoder adds the mask token
// and the linear reconstruction head.
long long count_params(const EncoderConfig& cfg, bool with_decoder);

// token-pair counts per attention layer: {(m+n)^2, m^2 + n^2}
std::pair<long long, long long> attention_cost(long long m, long long n);

// Dense-layer multiply-add estimate for one unmasked forward pass
// (embedding, QKV, output projection, MLP; data-dependent attention
// products excluded, matching common FLOP-counter conventions).
double encoder_macs(const EncoderConfig& cfg);

} // namespace facto

#endif
