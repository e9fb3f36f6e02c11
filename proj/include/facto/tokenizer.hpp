#ifndef FACTO_TOKENIZER_HPP
#define FACTO_TOKENIZER_HPP

#include "facto/hsi.hpp"
#include "facto/tensor.hpp"

namespace facto {

enum class TokenMode { Spectral, Spatial, Joint };

struct RawTokens {
    Mat tokens; // N x token_dim
    TokenMode mode = TokenMode::Spectral;

    int count() const { return tokens.rows; }
    int dim() const { return tokens.cols; }
};

// Learnable inputs of the embedding stage (Mat shapes follow the math:
// projection is d x token_dim, pos_embed N x d, cls_token 1 x d).
struct EmbedParams {
    Mat projection;
    Mat pos_embed;
    Mat cls_token;
};

// CLS at row 0 followed by N embedded patch tokens.
struct TokenSequence {
    Mat embeddings; // (N+1) x d
};

// One token per band: the flattened S x S slice, row-major. With band
// grouping g > 1 (odd) each token concatenates the band with its g-1
// neighbors, reflect-padded at the spectrum ends.
RawTokens tokenize_spectral(const Sample& sample, int band_group = 1);

// One token per pixel in row-major order: the full B-band spectrum.
RawTokens tokenize_spatial(const Sample& sample);

// 1x1xk spectral-spatial patches, pixel-major then spectral-group; the last
// group is zero-padded to k.
RawTokens tokenize_joint(const Sample& sample, int group_len);

// embeddings[i+1] = projection * tokens[i] + pos_embed[i]; row 0 is the CLS
// token with no positional term.
TokenSequence embed(const RawTokens& raw, const EmbedParams& params);

} // namespace facto

#endif
