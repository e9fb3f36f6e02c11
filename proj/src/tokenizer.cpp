#include "facto/tokenizer.hpp"

#include <stdexcept>

namespace facto {

namespace {

int reflect_band(int b, int bands) {
    if (bands == 1) return 0;
    int period = 2 * (bands - 1);
    b = ((b % period) + period) % period;
    return b < bands ? b : period - b;
}

} // namespace

RawTokens tokenize_spectral(const Sample& sample, int band_group) {
    if (band_group < 1 || band_group % 2 == 0)
        throw std::runtime_error("band group must be odd and positive");
    int S = sample.patch_size;
    int B = sample.bands;
    int area = S * S;
    RawTokens out;
    out.mode = TokenMode::Spectral;
    out.tokens = Mat(B, area * band_group);
    int half = band_group / 2;
    for (int b = 0; b < B; ++b) {
        int col = 0;
        for (int n = -half; n <= half; ++n) {
            int src = reflect_band(b + n, B);
            for (int i = 0; i < S; ++i)
                for (int j = 0; j < S; ++j) out.tokens(b, col++) = sample.at(i, j, src);
        }
    }
    return out;
}

RawTokens tokenize_spatial(const Sample& sample) {
    int S = sample.patch_size;
    int B = sample.bands;
    RawTokens out;
    out.mode = TokenMode::Spatial;
    out.tokens = Mat(S * S, B);
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j)
            for (int b = 0; b < B; ++b) out.tokens(i * S + j, b) = sample.at(i, j, b);
    return out;
}

RawTokens tokenize_joint(const Sample& sample, int group_len) {
    if (group_len < 1) throw std::runtime_error("joint group length must be >= 1");
    int S = sample.patch_size;
    int B = sample.bands;
    int groups = (B + group_len - 1) / group_len;
    RawTokens out;
    out.mode = TokenMode::Joint;
    out.tokens = Mat(S * S * groups, group_len);
    for (int i = 0; i < S; ++i)
        for (int j = 0; j < S; ++j)
            for (int gidx = 0; gidx < groups; ++gidx) {
                int row = (i * S + j) * groups + gidx;
                for (int k = 0; k < group_len; ++k) {
                    int b = gidx * group_len + k;
                    out.tokens(row, k) = b < B ? sample.at(i, j, b) : 0.0;
                }
            }
    return out;
}

TokenSequence embed(const RawTokens& raw, const EmbedParams& params) {
    const Mat& E = params.projection; // d x token_dim
    int d = E.rows;
    int N = raw.count();
    if (E.cols != raw.dim()) throw std::runtime_error("embed: projection/token dim mismatch");
    if (params.pos_embed.rows != N || params.pos_embed.cols != d)
        throw std::runtime_error("embed: positional embedding shape mismatch");
    if (params.cls_token.rows != 1 || params.cls_token.cols != d)
        throw std::runtime_error("embed: cls token shape mismatch");
    TokenSequence seq;
    seq.embeddings = Mat(N + 1, d);
    for (int j = 0; j < d; ++j) seq.embeddings(0, j) = params.cls_token(0, j);
    for (int i = 0; i < N; ++i)
        for (int j = 0; j < d; ++j) {
            double acc = params.pos_embed(i, j);
            for (int k = 0; k < raw.dim(); ++k) acc += E(j, k) * raw.tokens(i, k);
            seq.embeddings(i + 1, j) = acc;
        }
    return seq;
}

} // namespace facto
