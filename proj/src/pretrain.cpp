#include "facto/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <limits>
#include <numeric>
#include <stdexcept>

namespace facto {

void Decoder::init(int emb, int token_dim, int mlp_hidden, int heads_, bool sees_sequence_,
                   uint64_t seed) {
    Rng rng(mix64(seed, 0x646563ULL));
    params = ParamStore();
    sees_sequence = sees_sequence_;
    heads = heads_;
    Mat mask(1, emb);
    for (double& x : mask.d) x = rng.trunc_normal(0.02);
    params.add("dec.mask", std::move(mask));
    Mat hw(emb, token_dim);
    for (double& x : hw.d) x = rng.trunc_normal(0.02);
    params.add("dec.head.w", std::move(hw));
    params.add("dec.head.b", Mat(1, token_dim));
    if (sees_sequence) add_block_params(params, "dec.mix.", emb, mlp_hidden, rng);
}

MaskPlan sample_mask(int num_tokens, double ratio, Rng& rng) {
    if (num_tokens < 2) throw std::runtime_error("sample_mask: need at least 2 tokens");
    if (!(ratio > 0.0 && ratio < 1.0)) throw std::runtime_error("sample_mask: ratio must be in (0,1)");
    int count = static_cast<int>(std::llround(ratio * num_tokens));
    if (count == 0 || count == num_tokens)
        throw std::runtime_error("sample_mask: ratio leaves no masked or no visible tokens");
    std::vector<int> idx(num_tokens);
    std::iota(idx.begin(), idx.end(), 0);
    // partial Fisher-Yates: the first `count` entries are a uniform subset
    for (int i = 0; i < count; ++i) {
        int j = i + static_cast<int>(rng.below(static_cast<uint64_t>(num_tokens - i)));
        std::swap(idx[i], idx[j]);
    }
    MaskPlan plan;
    plan.ratio = ratio;
    plan.masked.assign(idx.begin(), idx.begin() + count);
    std::sort(plan.masked.begin(), plan.masked.end());
    return plan;
}

namespace {

std::vector<int> visible_indices(int num_tokens, const MaskPlan& plan) {
    std::vector<char> is_masked(num_tokens, 0);
    for (int m : plan.masked) {
        if (m < 0 || m >= num_tokens) throw std::runtime_error("mask index out of range");
        if (is_masked[m]) throw std::runtime_error("duplicate mask index");
        is_masked[m] = 1;
    }
    std::vector<int> vis;
    vis.reserve(num_tokens - plan.masked.size());
    for (int i = 0; i < num_tokens; ++i)
        if (!is_masked[i]) vis.push_back(i);
    return vis;
}

} // namespace

Tape::Ref masked_forward(Tape& t, const Encoder& enc, const BoundParams& be,
                         const Decoder& dec, const BoundParams& bd, const Mat& raw_tokens,
                         const MaskPlan& plan) {
    int N = raw_tokens.rows;
    if (N != enc.cfg.tokens) throw std::runtime_error("masked_forward: token count mismatch");
    std::vector<int> vis = visible_indices(N, plan);
    if (vis.empty() || plan.masked.empty())
        throw std::runtime_error("masked_forward: mask must leave both sides non-empty");

    Mat vis_rows(static_cast<int>(vis.size()), raw_tokens.cols);
    for (size_t i = 0; i < vis.size(); ++i)
        for (int j = 0; j < raw_tokens.cols; ++j)
            vis_rows(static_cast<int>(i), j) = raw_tokens(vis[i], j);

    Tape::Ref seq = enc.embed_tokens(t, be, vis_rows, vis);
    Tape::Ref latents = enc.encode_from(t, be, seq);

    std::vector<int> patch_rows(vis.size());
    std::iota(patch_rows.begin(), patch_rows.end(), 1); // skip CLS
    Tape::Ref vis_latents = t.select_rows(latents, patch_rows);

    Tape::Ref mask_rows = t.add(t.repeat_row(bd.of("dec.mask"), static_cast<int>(plan.masked.size())),
                                t.select_rows(be.of("embed.pos"), plan.masked));
    Tape::Ref merged = t.merge_rows(vis_latents, vis, mask_rows, plan.masked);

    Tape::Ref at_masked;
    if (dec.sees_sequence) {
        Tape::Ref cls = t.select_rows(latents, {0});
        Tape::Ref full = t.concat_rows({cls, merged});
        Tape::Ref mixed = transformer_block(t, bd, full, "dec.mix.", dec.heads);
        std::vector<int> shifted(plan.masked.size());
        for (size_t i = 0; i < plan.masked.size(); ++i) shifted[i] = plan.masked[i] + 1;
        // condition every masked prediction on the encoder's sequence summary;
        // this keeps the CLS output sample-specific, which is what fine-tuning
        // later classifies from
        at_masked = t.add(t.select_rows(mixed, shifted),
                          t.repeat_row(cls, static_cast<int>(plan.masked.size())));
    } else {
        at_masked = t.select_rows(merged, plan.masked);
    }
    return t.add_rowvec(t.matmul(at_masked, bd.of("dec.head.w")), bd.of("dec.head.b"));
}

Mat masked_forward(const Encoder& enc, const Decoder& dec, const Mat& raw_tokens,
                   const MaskPlan& plan) {
    Tape t;
    BoundParams be = bind_params(t, enc.params);
    BoundParams bd = bind_params(t, dec.params);
    return t.val(masked_forward(t, enc, be, dec, bd, raw_tokens, plan));
}

double masked_mse(const Mat& pred, const RawTokens& raw, const MaskPlan& plan) {
    if (plan.masked.empty()) throw std::runtime_error("masked_mse: empty mask");
    if (pred.rows != static_cast<int>(plan.masked.size()) || pred.cols != raw.dim())
        throw std::runtime_error("masked_mse: shape mismatch");
    double acc = 0.0;
    for (size_t i = 0; i < plan.masked.size(); ++i)
        for (int j = 0; j < raw.dim(); ++j) {
            double e = pred(static_cast<int>(i), j) - raw.tokens(plan.masked[i], j);
            acc += e * e;
        }
    return acc / (static_cast<double>(plan.masked.size()) * raw.dim());
}

RawTokens tokenize_for_mode(const Sample& s, TokenMode mode, const PretrainConfig& cfg) {
    switch (mode) {
        case TokenMode::Spectral: return tokenize_spectral(s, cfg.band_group);
        case TokenMode::Spatial: return tokenize_spatial(s);
        case TokenMode::Joint: return tokenize_joint(s, cfg.joint_group);
    }
    throw std::runtime_error("unknown token mode");
}

namespace {

Mat masked_targets(const RawTokens& raw, const MaskPlan& plan) {
    Mat tgt(static_cast<int>(plan.masked.size()), raw.dim());
    for (size_t i = 0; i < plan.masked.size(); ++i)
        for (int j = 0; j < raw.dim(); ++j)
            tgt(static_cast<int>(i), j) = raw.tokens(plan.masked[i], j);
    return tgt;
}

Checkpoint make_checkpoint(const Encoder& enc, const Decoder& dec, uint64_t seed, int epoch,
                           TokenMode mode) {
    Checkpoint c;
    c.config = enc.cfg;
    c.seed = seed;
    c.epoch = epoch;
    c.mode = mode == TokenMode::Spectral ? "spectral"
             : mode == TokenMode::Spatial ? "spatial"
                                          : "joint";
    for (const auto& [name, m] : enc.params.items()) c.params.add(name, m);
    for (const auto& [name, m] : dec.params.items()) c.params.add(name, m);
    return c;
}

} // namespace

PretrainResult pretrain(const SampleSource& samples, TokenMode mode, EncoderConfig enc_cfg,
                        const PretrainConfig& cfg) {
    if (samples.size() == 0) throw std::runtime_error("pretrain: empty sample set");
    PretrainResult res;
    res.encoder.cfg = enc_cfg;
    res.encoder.init(cfg.seed);
    res.decoder.init(enc_cfg.emb, enc_cfg.token_dim, enc_cfg.mlp_hidden, enc_cfg.heads,
                     cfg.decoder_sees_sequence, cfg.seed);
    Adam opt_enc, opt_dec;
    res.best_loss = std::numeric_limits<double>::infinity();

    std::vector<size_t> order(samples.size());
    std::iota(order.begin(), order.end(), 0);

    for (int epoch = 0; epoch < cfg.epochs; ++epoch) {
        double lr = cfg.schedule.lr_at(epoch);
        Rng shuffle_rng(mix64(cfg.seed, 0x736866ULL, static_cast<uint64_t>(epoch)));
        shuffle_rng.shuffle(order);
        double loss_sum = 0.0;
        size_t loss_count = 0;
        for (size_t start = 0; start < order.size(); start += cfg.batch) {
            size_t stop = std::min(order.size(), start + cfg.batch);
            GradMap grads;
            for (size_t bi = start; bi < stop; ++bi) {
                Sample s = samples.get(order[bi]);
                RawTokens raw = tokenize_for_mode(s, mode, cfg);
                Rng mask_rng(mix64(cfg.seed, static_cast<uint64_t>(epoch) + 1,
                                   static_cast<uint64_t>(order[bi])));
                MaskPlan plan = sample_mask(raw.count(), cfg.ratio, mask_rng);
                Tape t;
                BoundParams be = bind_params(t, res.encoder.params);
                BoundParams bd = bind_params(t, res.decoder.params);
                Tape::Ref pred =
                    masked_forward(t, res.encoder, be, res.decoder, bd, raw.tokens, plan);
                Tape::Ref loss = t.mse_to(pred, masked_targets(raw, plan));
                double lv = t.val(loss)(0, 0);
                if (!std::isfinite(lv))
                    throw std::runtime_error("pretrain: non-finite loss at epoch " +
                                             std::to_string(epoch + 1) + ", sample " +
                                             std::to_string(order[bi]));
                loss_sum += lv;
                ++loss_count;
                t.backward(loss);
                harvest_grads(t, be, grads);
                harvest_grads(t, bd, grads);
            }
            double inv = 1.0 / static_cast<double>(stop - start);
            for (auto& [name, gm] : grads)
                for (double& x : gm.d) x *= inv;
            opt_enc.step(res.encoder.params, grads, lr);
            opt_dec.step(res.decoder.params, grads, lr);
        }
        double mean_loss = loss_sum / static_cast<double>(loss_count);
        res.log.push_back({epoch + 1, mean_loss, lr});
        if (mean_loss < res.best_loss) {
            res.best_loss = mean_loss;
            res.best_state = make_checkpoint(res.encoder, res.decoder, cfg.seed, epoch + 1, mode);
        }
    }
    res.final_state = make_checkpoint(res.encoder, res.decoder, cfg.seed, cfg.epochs, mode);
    return res;
}

void write_loss_log(const std::vector<EpochLog>& log, const std::string& path) {
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write loss log: " + path);
    f << "epoch\tloss\tlr\n";
    f.precision(17);
    for (const auto& e : log) f << e.epoch << "\t" << e.mean_loss << "\t" << e.lr << "\n";
}

} // namespace facto
