#include <doctest.h>

#include <algorithm>
#include <map>

#include "facto/rng.hpp"
#include "facto/tokenizer.hpp"

using namespace facto;

namespace {

Sample make_sample(int S, int B, uint64_t seed = 7) {
    Sample s;
    s.patch_size = S;
    s.bands = B;
    s.patch.resize(static_cast<size_t>(S) * S * B);
    Rng rng(seed);
    for (double& v : s.patch) v = rng.uniform();
    return s;
}

int reflect_idx(int i, int n) {
    if (n == 1) return 0;
    int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

} // namespace

TEST_CASE("tokenize_spectral: shapes and content") {
    Sample s = make_sample(7, 20);
    RawTokens r = tokenize_spectral(s);
    CHECK(r.count() == 20);
    CHECK(r.dim() == 49);
    // token b is the flattened S x S slice of band b, row-major
    for (int b = 0; b < 20; ++b)
        for (int i = 0; i < 7; ++i)
            for (int j = 0; j < 7; ++j)
                CHECK(r.tokens(b, i * 7 + j) == doctest::Approx(s.at(i, j, b)));
}

TEST_CASE("tokenize_spectral: S=1 gives scalar tokens per band") {
    Sample s = make_sample(1, 3);
    RawTokens r = tokenize_spectral(s);
    CHECK(r.count() == 3);
    CHECK(r.dim() == 1);
    for (int b = 0; b < 3; ++b) CHECK(r.tokens(b, 0) == doctest::Approx(s.at(0, 0, b)));
}

TEST_CASE("tokenize_spectral: band grouping with reflect padding") {
    // oracle re-gathers each token from the sample by index arithmetic
    Sample s = make_sample(3, 10);
    int g = 3;
    RawTokens r = tokenize_spectral(s, g);
    CHECK(r.count() == 10);
    CHECK(r.dim() == 9 * g);
    for (int b = 0; b < 10; ++b) {
        int col = 0;
        for (int n = -1; n <= 1; ++n) {
            int src = reflect_idx(b + n, 10);
            for (int i = 0; i < 3; ++i)
                for (int j = 0; j < 3; ++j)
                    CHECK(r.tokens(b, col++) == doctest::Approx(s.at(i, j, src)));
        }
    }
    CHECK_THROWS(tokenize_spectral(s, 2)); // even group
}

TEST_CASE("tokenize_spatial: shapes, and reassembly restores the patch") {
    Sample s = make_sample(7, 20);
    RawTokens r = tokenize_spatial(s);
    CHECK(r.count() == 49);
    CHECK(r.dim() == 20);
    for (int i = 0; i < 7; ++i)
        for (int j = 0; j < 7; ++j)
            for (int b = 0; b < 20; ++b)
                CHECK(r.tokens(i * 7 + j, b) == doctest::Approx(s.at(i, j, b)));
}

TEST_CASE("tokenize_spatial: S=1 gives the full center spectrum") {
    Sample s = make_sample(1, 12);
    RawTokens r = tokenize_spatial(s);
    CHECK(r.count() == 1);
    CHECK(r.dim() == 12);
}

TEST_CASE("tokenize_joint: counts, zero padding, k=B equivalence") {
    Sample s = make_sample(7, 200);
    RawTokens r = tokenize_joint(s, 10);
    CHECK(r.count() == 49 * 20);
    CHECK(r.dim() == 10);

    Sample t = make_sample(3, 7);
    RawTokens rj = tokenize_joint(t, 3); // ceil(7/3)=3 groups, last padded by 2
    CHECK(rj.count() == 9 * 3);
    CHECK(rj.tokens(2, 1) == 0.0); // third group of first pixel: bands 6,-,-
    CHECK(rj.tokens(2, 2) == 0.0);

    // k = B matches the spatial token set up to the mode tag
    RawTokens full = tokenize_joint(s, 200);
    RawTokens spa = tokenize_spatial(s);
    REQUIRE(full.count() == spa.count());
    for (int i = 0; i < full.count(); ++i)
        for (int j = 0; j < full.dim(); ++j)
            CHECK(full.tokens(i, j) == doctest::Approx(spa.tokens(i, j)));
}

TEST_CASE("tokenize_joint: k=1, S=1 gives one scalar per band") {
    Sample s = make_sample(1, 4);
    RawTokens r = tokenize_joint(s, 1);
    CHECK(r.count() == 4);
    CHECK(r.dim() == 1);
}

TEST_CASE("token partition: every mode is a permutation of the patch values") {
    Sample s = make_sample(5, 11);
    auto census = [](const std::vector<double>& vals) {
        std::map<long long, int> m;
        for (double v : vals) m[static_cast<long long>(v * 1e12)]++;
        return m;
    };
    auto patch_census = census(s.patch);
    for (auto mode : {0, 1, 2}) {
        RawTokens r = mode == 0   ? tokenize_spectral(s)
                      : mode == 1 ? tokenize_spatial(s)
                                  : tokenize_joint(s, 4);
        std::vector<double> vals;
        for (double v : r.tokens.d)
            if (v != 0.0) vals.push_back(v); // joint zero padding excluded
        auto c = census(vals);
        for (auto& [k, n] : patch_census) CHECK(c[k] == n);
    }
}

TEST_CASE("embed: zero projection and zero cls leaves only positional rows") {
    Sample s = make_sample(3, 4);
    RawTokens r = tokenize_spectral(s);
    EmbedParams p;
    int d = 5;
    p.projection = Mat(d, r.dim());
    p.pos_embed = Mat(r.count(), d);
    Rng rng(3);
    for (double& x : p.pos_embed.d) x = rng.normal();
    p.cls_token = Mat(1, d);
    TokenSequence seq = embed(r, p);
    REQUIRE(seq.embeddings.rows == r.count() + 1);
    for (int j = 0; j < d; ++j) CHECK(seq.embeddings(0, j) == 0.0);
    for (int i = 0; i < r.count(); ++i)
        for (int j = 0; j < d; ++j)
            CHECK(seq.embeddings(i + 1, j) == doctest::Approx(p.pos_embed(i, j)));
}

TEST_CASE("embed: identity projection with zero pos returns the tokens") {
    Sample s = make_sample(1, 6); // token_dim = 1... use spatial for dim=6
    RawTokens r = tokenize_spatial(s);
    int d = r.dim();
    EmbedParams p;
    p.projection = Mat(d, d);
    for (int i = 0; i < d; ++i) p.projection(i, i) = 1.0;
    p.pos_embed = Mat(r.count(), d);
    p.cls_token = Mat(1, d);
    TokenSequence seq = embed(r, p);
    for (int i = 0; i < r.count(); ++i)
        for (int j = 0; j < d; ++j)
            CHECK(seq.embeddings(i + 1, j) == doctest::Approx(r.tokens(i, j)));
}

TEST_CASE("embed: matches an independent dense matmul oracle") {
    Sample s = make_sample(3, 8);
    RawTokens r = tokenize_spectral(s);
    int d = 6;
    EmbedParams p;
    Rng rng(11);
    p.projection = Mat(d, r.dim());
    for (double& x : p.projection.d) x = rng.normal();
    p.pos_embed = Mat(r.count(), d);
    for (double& x : p.pos_embed.d) x = rng.normal();
    p.cls_token = Mat(1, d);
    for (double& x : p.cls_token.d) x = rng.normal();
    TokenSequence seq = embed(r, p);
    for (int j = 0; j < d; ++j) CHECK(seq.embeddings(0, j) == doctest::Approx(p.cls_token(0, j)));
    for (int i = 0; i < r.count(); ++i)
        for (int j = 0; j < d; ++j) {
            double acc = p.pos_embed(i, j);
            for (int k = 0; k < r.dim(); ++k) acc += p.projection(j, k) * r.tokens(i, k);
            CHECK(seq.embeddings(i + 1, j) == doctest::Approx(acc).epsilon(1e-6));
        }
}

TEST_CASE("embed is affine per token") {
    Sample s = make_sample(3, 5);
    RawTokens r = tokenize_spectral(s);
    int d = 4;
    EmbedParams p;
    Rng rng(13);
    p.projection = Mat(d, r.dim());
    for (double& x : p.projection.d) x = rng.normal();
    p.pos_embed = Mat(r.count(), d);
    for (double& x : p.pos_embed.d) x = rng.normal();
    p.cls_token = Mat(1, d);

    RawTokens zero = r;
    for (double& x : zero.tokens.d) x = 0.0;
    RawTokens scaled = r;
    double alpha = 2.75;
    for (double& x : scaled.tokens.d) x *= alpha;

    TokenSequence e0 = embed(zero, p);
    TokenSequence e1 = embed(r, p);
    TokenSequence e2 = embed(scaled, p);
    for (int i = 1; i <= r.count(); ++i)
        for (int j = 0; j < d; ++j) {
            double lhs = e2.embeddings(i, j) - e0.embeddings(i, j);
            double rhs = alpha * (e1.embeddings(i, j) - e0.embeddings(i, j));
            CHECK(lhs == doctest::Approx(rhs).epsilon(1e-6));
        }
}

TEST_CASE("embed rejects dimension mismatch") {
    Sample s = make_sample(3, 5);
    RawTokens r = tokenize_spectral(s);
    EmbedParams p;
    p.projection = Mat(4, r.dim() + 1);
    p.pos_embed = Mat(r.count(), 4);
    p.cls_token = Mat(1, 4);
    CHECK_THROWS(embed(r, p));
}

TEST_CASE("sequence lengths: spectral B+1, spatial S^2+1") {
    Sample s = make_sample(7, 200);
    CHECK(tokenize_spectral(s).count() + 1 == 201);
    CHECK(tokenize_spatial(s).count() + 1 == 50);
}
