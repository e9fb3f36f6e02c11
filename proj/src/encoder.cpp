#include "facto/encoder.hpp"

#include <cmath>
#include <numeric>
#include <stdexcept>

#include "facto/rng.hpp"

namespace facto {

void EncoderConfig::validate() const {
    if (layers < 0) throw std::runtime_error("encoder config: negative layer count");
    if (heads < 1 || emb < 1 || emb % heads != 0)
        throw std::runtime_error("encoder config: emb must be a positive multiple of heads");
    if (mlp_hidden < 1) throw std::runtime_error("encoder config: mlp_hidden must be positive");
    if (tokens < 1 || token_dim < 1)
        throw std::runtime_error("encoder config: tokens and token_dim must be positive");
}

Mat& ParamStore::add(const std::string& name, Mat m) {
    if (index_.count(name)) throw std::runtime_error("duplicate parameter: " + name);
    index_[name] = items_.size();
    items_.emplace_back(name, std::move(m));
    return items_.back().second;
}

Mat& ParamStore::get(const std::string& name) {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
    return items_[it->second].second;
}

const Mat& ParamStore::get(const std::string& name) const {
    auto it = index_.find(name);
    if (it == index_.end()) throw std::runtime_error("unknown parameter: " + name);
    return items_[it->second].second;
}

size_t ParamStore::scalar_count() const {
    size_t n = 0;
    for (const auto& [name, m] : items_) n += m.size();
    return n;
}

BoundParams bind_params(Tape& tape, const ParamStore& store) {
    BoundParams b;
    b.refs.reserve(store.items().size());
    for (const auto& [name, m] : store.items()) b.refs.emplace_back(name, tape.leaf(m));
    return b;
}

Tape::Ref BoundParams::of(const std::string& name) const {
    for (const auto& [n, r] : refs)
        if (n == name) return r;
    throw std::runtime_error("unbound parameter: " + name);
}

void harvest_grads(const Tape& tape, const BoundParams& bound, GradMap& acc) {
    for (const auto& [name, ref] : bound.refs) {
        const Mat& gm = tape.grad(ref);
        auto it = acc.find(name);
        if (it == acc.end()) {
            acc.emplace(name, gm);
        } else {
            for (size_t i = 0; i < gm.size(); ++i) it->second.d[i] += gm.d[i];
        }
    }
}

namespace {

Mat init_weight(int rows, int cols, Rng& rng) {
    Mat m(rows, cols);
    for (double& x : m.d) x = rng.trunc_normal(0.02);
    return m;
}

std::string lk(int layer, const char* field) {
    return "layer" + std::to_string(layer) + "." + field;
}

} // namespace

void add_block_params(ParamStore& store, const std::string& prefix, int emb, int mlp_hidden,
                      Rng& rng) {
    int d = emb;
    store.add(prefix + "wq", init_weight(d, d, rng));
    store.add(prefix + "bq", Mat(1, d));
    store.add(prefix + "wk", init_weight(d, d, rng));
    store.add(prefix + "bk", Mat(1, d));
    store.add(prefix + "wv", init_weight(d, d, rng));
    store.add(prefix + "bv", Mat(1, d));
    store.add(prefix + "wo", init_weight(d, d, rng));
    store.add(prefix + "bo", Mat(1, d));
    store.add(prefix + "ln1.g", Mat(1, d, 1.0));
    store.add(prefix + "ln1.b", Mat(1, d));
    store.add(prefix + "mlp.w1", init_weight(d, mlp_hidden, rng));
    store.add(prefix + "mlp.b1", Mat(1, mlp_hidden));
    store.add(prefix + "ln2.g", Mat(1, d, 1.0));
    store.add(prefix + "ln2.b", Mat(1, d));
    store.add(prefix + "mlp.w2", init_weight(mlp_hidden, d, rng));
    store.add(prefix + "mlp.b2", Mat(1, d));
}

Tape::Ref transformer_block(Tape& t, const BoundParams& b, Tape::Ref x,
                            const std::string& prefix, int heads) {
    int d = t.val(x).cols;
    if (d % heads != 0) throw std::runtime_error("transformer_block: emb not divisible by heads");
    int dk = d / heads;
    double inv_sqrt_dk = 1.0 / std::sqrt(static_cast<double>(dk));

    Tape::Ref h = t.layernorm(x, b.of(prefix + "ln1.g"), b.of(prefix + "ln1.b"));
    Tape::Ref q = t.add_rowvec(t.matmul(h, b.of(prefix + "wq")), b.of(prefix + "bq"));
    Tape::Ref k = t.add_rowvec(t.matmul(h, b.of(prefix + "wk")), b.of(prefix + "bk"));
    Tape::Ref v = t.add_rowvec(t.matmul(h, b.of(prefix + "wv")), b.of(prefix + "bv"));
    std::vector<Tape::Ref> head_outs;
    head_outs.reserve(heads);
    for (int i = 0; i < heads; ++i) {
        Tape::Ref qi = t.slice_cols(q, i * dk, dk);
        Tape::Ref ki = t.slice_cols(k, i * dk, dk);
        Tape::Ref vi = t.slice_cols(v, i * dk, dk);
        Tape::Ref scores = t.scale(t.matmul(qi, t.transpose(ki)), inv_sqrt_dk);
        head_outs.push_back(t.matmul(t.softmax_rows(scores), vi));
    }
    Tape::Ref att = t.add_rowvec(t.matmul(t.concat_cols(head_outs), b.of(prefix + "wo")),
                                 b.of(prefix + "bo"));
    Tape::Ref x1 = t.add(x, att);

    Tape::Ref h2 = t.layernorm(x1, b.of(prefix + "ln2.g"), b.of(prefix + "ln2.b"));
    Tape::Ref m1 =
        t.gelu(t.add_rowvec(t.matmul(h2, b.of(prefix + "mlp.w1")), b.of(prefix + "mlp.b1")));
    Tape::Ref m2 = t.add_rowvec(t.matmul(m1, b.of(prefix + "mlp.w2")), b.of(prefix + "mlp.b2"));
    return t.add(x1, m2);
}

void Encoder::init(uint64_t seed) {
    cfg.validate();
    Rng rng(mix64(seed, 0x656e63ULL));
    params = ParamStore();
    int d = cfg.emb;
    params.add("embed.proj", init_weight(cfg.token_dim, d, rng)); // fan-in major
    params.add("embed.pos", init_weight(cfg.tokens, d, rng));
    params.add("embed.cls", Mat(1, d));
    for (int l = 0; l < cfg.layers; ++l)
        add_block_params(params, "layer" + std::to_string(l) + ".", d, cfg.mlp_hidden, rng);
    params.add("final_ln.g", Mat(1, d, 1.0));
    params.add("final_ln.b", Mat(1, d));
}

Tape::Ref Encoder::embed_tokens(Tape& t, const BoundParams& b, const Mat& raw_tokens,
                                const std::vector<int>& positions) const {
    if (raw_tokens.cols != cfg.token_dim)
        throw std::runtime_error("embed_tokens: token dim mismatch");
    if (static_cast<int>(positions.size()) != raw_tokens.rows)
        throw std::runtime_error("embed_tokens: position count mismatch");
    Tape::Ref raw = t.leaf(raw_tokens);
    Tape::Ref proj = t.matmul(raw, b.of("embed.proj"));
    Tape::Ref pos = t.select_rows(b.of("embed.pos"), positions);
    Tape::Ref z = t.add(proj, pos);
    return t.concat_rows({b.of("embed.cls"), z});
}

Tape::Ref Encoder::embed_all(Tape& t, const BoundParams& b, const Mat& raw_tokens) const {
    if (raw_tokens.rows != cfg.tokens)
        throw std::runtime_error("embed_all: token count mismatch");
    std::vector<int> all(cfg.tokens);
    std::iota(all.begin(), all.end(), 0);
    return embed_tokens(t, b, raw_tokens, all);
}

Tape::Ref Encoder::block(Tape& t, const BoundParams& b, Tape::Ref x, int layer) const {
    return transformer_block(t, b, x, "layer" + std::to_string(layer) + ".", cfg.heads);
}

Tape::Ref Encoder::encode_from(Tape& t, const BoundParams& b, Tape::Ref seq) const {
    Tape::Ref x = seq;
    for (int l = 0; l < cfg.layers; ++l) x = block(t, b, x, l);
    return t.layernorm(x, b.of("final_ln.g"), b.of("final_ln.b"));
}

Mat Encoder::encode(const Mat& raw_tokens) const {
    Tape t;
    BoundParams b = bind_params(t, params);
    Tape::Ref seq = embed_all(t, b, raw_tokens);
    return t.val(encode_from(t, b, seq));
}

Mat attention_head(const Mat& Q, const Mat& K, const Mat& V) {
    if (Q.cols != K.cols || K.rows != V.rows)
        throw std::runtime_error("attention_head: shape mismatch");
    check_finite(Q, "Q");
    check_finite(K, "K");
    check_finite(V, "V");
    Tape t;
    Tape::Ref q = t.leaf(Q), k = t.leaf(K), v = t.leaf(V);
    double s = 1.0 / std::sqrt(static_cast<double>(Q.cols));
    return t.val(t.matmul(t.softmax_rows(t.scale(t.matmul(q, t.transpose(k)), s)), v));
}

Mat multi_head(const Mat& x, const Encoder& enc, int layer) {
    // the attention half of a block, without the LN and residual
    Tape t;
    BoundParams b = bind_params(t, enc.params);
    int dk = enc.cfg.head_dim();
    double s = 1.0 / std::sqrt(static_cast<double>(dk));
    auto nm = [layer](const char* f) { return lk(layer, f); };
    Tape::Ref xi = t.leaf(x);
    Tape::Ref q = t.add_rowvec(t.matmul(xi, b.of(nm("wq"))), b.of(nm("bq")));
    Tape::Ref k = t.add_rowvec(t.matmul(xi, b.of(nm("wk"))), b.of(nm("bk")));
    Tape::Ref v = t.add_rowvec(t.matmul(xi, b.of(nm("wv"))), b.of(nm("bv")));
    std::vector<Tape::Ref> heads;
    for (int i = 0; i < enc.cfg.heads; ++i) {
        Tape::Ref qi = t.slice_cols(q, i * dk, dk);
        Tape::Ref ki = t.slice_cols(k, i * dk, dk);
        Tape::Ref vi = t.slice_cols(v, i * dk, dk);
        heads.push_back(
            t.matmul(t.softmax_rows(t.scale(t.matmul(qi, t.transpose(ki)), s)), vi));
    }
    return t.val(
        t.add_rowvec(t.matmul(t.concat_cols(heads), b.of(nm("wo"))), b.of(nm("bo"))));
}

Mat encoder_block(const Mat& x, const Encoder& enc, int layer) {
    Tape t;
    BoundParams b = bind_params(t, enc.params);
    return t.val(enc.block(t, b, t.leaf(x), layer));
}

long long count_params(const EncoderConfig& cfg, bool with_decoder) {
    long long d = cfg.emb;
    long long n = cfg.tokens;
    long long td = cfg.token_dim;
    long long embed = d * td + n * d + d; // projection + positional + CLS
    long long per_layer = 4 * (d * d + d)                       // q, k, v, o with biases
                          + 2 * 2 * d                           // two LN gain/bias pairs
                          + d * cfg.mlp_hidden + cfg.mlp_hidden // MLP in
                          + cfg.mlp_hidden * d + d;             // MLP out
    long long total = embed + cfg.layers * per_layer + 2 * d;   // + final LN
    if (with_decoder) total += d + td * d + td;                 // mask token + linear head
    return total;
}

std::pair<long long, long long> attention_cost(long long m, long long n) {
    if (m < 0 || n < 0) throw std::runtime_error("attention_cost: negative token count");
    return {(m + n) * (m + n), m * m + n * n};
}

double encoder_macs(const EncoderConfig& cfg) {
    double T = cfg.tokens + 1.0;
    double d = cfg.emb;
    double embed = static_cast<double>(cfg.tokens) * cfg.token_dim * d;
    double per_layer = 4.0 * T * d * d                // QKV + output projection
                       + 2.0 * T * d * cfg.mlp_hidden; // MLP
    return embed + cfg.layers * per_layer;
}

} // namespace facto
