#include "facto/tape.hpp"

#include <algorithm>
#include <cmath>

namespace facto {

namespace {
constexpr double kLnEps = 1e-5;        // layernorm variance epsilon
constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;
} // namespace

Tape::Ref Tape::push(Mat v, std::function<void()> back) {
    Node n;
    n.g = Mat(v.rows, v.cols);
    n.v = std::move(v);
    n.back = std::move(back);
    nodes_.push_back(std::move(n));
    return static_cast<Ref>(nodes_.size() - 1);
}

Tape::Ref Tape::leaf(Mat v) { return push(std::move(v)); }

Tape::Ref Tape::matmul(Ref a, Ref b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols != B.rows) throw std::runtime_error("matmul: inner dimension mismatch");
    Mat C(A.rows, B.cols);
    for (int i = 0; i < A.rows; ++i)
        for (int k = 0; k < A.cols; ++k) {
            double av = A(i, k);
            if (av == 0.0) continue;
            for (int j = 0; j < B.cols; ++j) C(i, j) += av * B(k, j);
        }
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, b, out] {
        const Mat& A = val(a);
        const Mat& B = val(b);
        const Mat& G = grad(out);
        Mat& ga = g(a);
        Mat& gb = g(b);
        // dA += G * B^T
        for (int i = 0; i < A.rows; ++i)
            for (int j = 0; j < B.cols; ++j) {
                double gv = G(i, j);
                if (gv == 0.0) continue;
                for (int k = 0; k < A.cols; ++k) ga(i, k) += gv * B(k, j);
            }
        // dB += A^T * G
        for (int i = 0; i < A.rows; ++i)
            for (int k = 0; k < A.cols; ++k) {
                double av = A(i, k);
                if (av == 0.0) continue;
                for (int j = 0; j < B.cols; ++j) gb(k, j) += av * G(i, j);
            }
    };
    return out;
}

Tape::Ref Tape::add(Ref a, Ref b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (!A.same_shape(B)) throw std::runtime_error("add: shape mismatch");
    Mat C = A;
    for (size_t i = 0; i < C.size(); ++i) C.d[i] += B.d[i];
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, b, out] {
        const Mat& G = grad(out);
        Mat& ga = g(a);
        Mat& gb = g(b);
        for (size_t i = 0; i < G.size(); ++i) {
            ga.d[i] += G.d[i];
            gb.d[i] += G.d[i];
        }
    };
    return out;
}

Tape::Ref Tape::add_rowvec(Ref a, Ref row) {
    const Mat& A = val(a);
    const Mat& R = val(row);
    if (R.rows != 1 || R.cols != A.cols) throw std::runtime_error("add_rowvec: shape mismatch");
    Mat C = A;
    for (int i = 0; i < C.rows; ++i)
        for (int j = 0; j < C.cols; ++j) C(i, j) += R(0, j);
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, row, out] {
        const Mat& G = grad(out);
        Mat& ga = g(a);
        Mat& gr = g(row);
        for (int i = 0; i < G.rows; ++i)
            for (int j = 0; j < G.cols; ++j) {
                ga(i, j) += G(i, j);
                gr(0, j) += G(i, j);
            }
    };
    return out;
}

Tape::Ref Tape::scale(Ref a, double s) {
    Mat C = val(a);
    for (double& x : C.d) x *= s;
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, out, s] {
        const Mat& G = grad(out);
        Mat& ga = g(a);
        for (size_t i = 0; i < G.size(); ++i) ga.d[i] += s * G.d[i];
    };
    return out;
}

Tape::Ref Tape::transpose(Ref a) {
    const Mat& A = val(a);
    Mat C(A.cols, A.rows);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < A.cols; ++j) C(j, i) = A(i, j);
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, out] {
        const Mat& G = grad(out);
        Mat& ga = g(a);
        for (int i = 0; i < G.rows; ++i)
            for (int j = 0; j < G.cols; ++j) ga(j, i) += G(i, j);
    };
    return out;
}

Tape::Ref Tape::slice_cols(Ref a, int c0, int n) {
    const Mat& A = val(a);
    if (c0 < 0 || c0 + n > A.cols) throw std::runtime_error("slice_cols: out of range");
    Mat C(A.rows, n);
    for (int i = 0; i < A.rows; ++i)
        for (int j = 0; j < n; ++j) C(i, j) = A(i, c0 + j);
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, out, c0, n] {
        const Mat& G = grad(out);
        Mat& ga = g(a);
        for (int i = 0; i < G.rows; ++i)
            for (int j = 0; j < n; ++j) ga(i, c0 + j) += G(i, j);
    };
    return out;
}

Tape::Ref Tape::concat_cols(const std::vector<Ref>& parts) {
    int rows = val(parts.at(0)).rows;
    int cols = 0;
    for (Ref p : parts) {
        if (val(p).rows != rows) throw std::runtime_error("concat_cols: row mismatch");
        cols += val(p).cols;
    }
    Mat C(rows, cols);
    int off = 0;
    for (Ref p : parts) {
        const Mat& P = val(p);
        for (int i = 0; i < rows; ++i)
            for (int j = 0; j < P.cols; ++j) C(i, off + j) = P(i, j);
        off += P.cols;
    }
    Ref out = push(std::move(C));
    std::vector<Ref> ps = parts;
    nodes_[out].back = [this, ps, out] {
        const Mat& G = grad(out);
        int off = 0;
        for (Ref p : ps) {
            Mat& gp = g(p);
            for (int i = 0; i < gp.rows; ++i)
                for (int j = 0; j < gp.cols; ++j) gp(i, j) += G(i, off + j);
            off += gp.cols;
        }
    };
    return out;
}

Tape::Ref Tape::concat_rows(const std::vector<Ref>& parts) {
    int cols = val(parts.at(0)).cols;
    int rows = 0;
    for (Ref p : parts) {
        if (val(p).cols != cols) throw std::runtime_error("concat_rows: column mismatch");
        rows += val(p).rows;
    }
    Mat C(rows, cols);
    int off = 0;
    for (Ref p : parts) {
        const Mat& P = val(p);
        for (int i = 0; i < P.rows; ++i)
            for (int j = 0; j < cols; ++j) C(off + i, j) = P(i, j);
        off += P.rows;
    }
    Ref out = push(std::move(C));
    std::vector<Ref> ps = parts;
    nodes_[out].back = [this, ps, out] {
        const Mat& G = grad(out);
        int off = 0;
        for (Ref p : ps) {
            Mat& gp = g(p);
            for (int i = 0; i < gp.rows; ++i)
                for (int j = 0; j < gp.cols; ++j) gp(i, j) += G(off + i, j);
            off += gp.rows;
        }
    };
    return out;
}

Tape::Ref Tape::select_rows(Ref a, std::vector<int> idx) {
    const Mat& A = val(a);
    Mat C(static_cast<int>(idx.size()), A.cols);
    for (size_t i = 0; i < idx.size(); ++i) {
        if (idx[i] < 0 || idx[i] >= A.rows) throw std::runtime_error("select_rows: out of range");
        for (int j = 0; j < A.cols; ++j) C(static_cast<int>(i), j) = A(idx[i], j);
    }
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, out, idx = std::move(idx)] {
        const Mat& G = grad(out);
        Mat& ga = g(a);
        for (size_t i = 0; i < idx.size(); ++i)
            for (int j = 0; j < G.cols; ++j) ga(idx[i], j) += G(static_cast<int>(i), j);
    };
    return out;
}

Tape::Ref Tape::repeat_row(Ref row, int n) {
    const Mat& R = val(row);
    if (R.rows != 1) throw std::runtime_error("repeat_row: input must be 1 x C");
    Mat C(n, R.cols);
    for (int i = 0; i < n; ++i)
        for (int j = 0; j < R.cols; ++j) C(i, j) = R(0, j);
    Ref out = push(std::move(C));
    nodes_[out].back = [this, row, out] {
        const Mat& G = grad(out);
        Mat& gr = g(row);
        for (int i = 0; i < G.rows; ++i)
            for (int j = 0; j < G.cols; ++j) gr(0, j) += G(i, j);
    };
    return out;
}

Tape::Ref Tape::merge_rows(Ref a, std::vector<int> pos_a, Ref b, std::vector<int> pos_b) {
    const Mat& A = val(a);
    const Mat& B = val(b);
    if (A.cols != B.cols) throw std::runtime_error("merge_rows: column mismatch");
    if (static_cast<int>(pos_a.size()) != A.rows || static_cast<int>(pos_b.size()) != B.rows)
        throw std::runtime_error("merge_rows: position count mismatch");
    int total = A.rows + B.rows;
    Mat C(total, A.cols);
    std::vector<char> seen(total, 0);
    auto place = [&](const Mat& src, const std::vector<int>& pos) {
        for (size_t i = 0; i < pos.size(); ++i) {
            int p = pos[i];
            if (p < 0 || p >= total || seen[p]) throw std::runtime_error("merge_rows: bad positions");
            seen[p] = 1;
            for (int j = 0; j < src.cols; ++j) C(p, j) = src(static_cast<int>(i), j);
        }
    };
    place(A, pos_a);
    place(B, pos_b);
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, b, out, pa = std::move(pos_a), pb = std::move(pos_b)] {
        const Mat& G = grad(out);
        Mat& ga = g(a);
        Mat& gb = g(b);
        for (size_t i = 0; i < pa.size(); ++i)
            for (int j = 0; j < G.cols; ++j) ga(static_cast<int>(i), j) += G(pa[i], j);
        for (size_t i = 0; i < pb.size(); ++i)
            for (int j = 0; j < G.cols; ++j) gb(static_cast<int>(i), j) += G(pb[i], j);
    };
    return out;
}

Tape::Ref Tape::gelu(Ref a) {
    const Mat& A = val(a);
    Mat C(A.rows, A.cols);
    for (size_t i = 0; i < A.size(); ++i) {
        double x = A.d[i];
        C.d[i] = 0.5 * x * (1.0 + std::erf(x * kInvSqrt2));
    }
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, out] {
        const Mat& A = val(a);
        const Mat& G = grad(out);
        Mat& ga = g(a);
        for (size_t i = 0; i < A.size(); ++i) {
            double x = A.d[i];
            double cdf = 0.5 * (1.0 + std::erf(x * kInvSqrt2));
            double pdf = kInvSqrt2Pi * std::exp(-0.5 * x * x);
            ga.d[i] += G.d[i] * (cdf + x * pdf);
        }
    };
    return out;
}

Tape::Ref Tape::softmax_rows(Ref a) {
    const Mat& A = val(a);
    check_finite(A, "softmax input");
    Mat C(A.rows, A.cols);
    for (int i = 0; i < A.rows; ++i) {
        double mx = A(i, 0);
        for (int j = 1; j < A.cols; ++j) mx = std::max(mx, A(i, j));
        double sum = 0.0;
        for (int j = 0; j < A.cols; ++j) {
            double e = std::exp(A(i, j) - mx);
            C(i, j) = e;
            sum += e;
        }
        for (int j = 0; j < A.cols; ++j) C(i, j) /= sum;
    }
    Ref out = push(std::move(C));
    nodes_[out].back = [this, a, out] {
        const Mat& Y = val(out);
        const Mat& G = grad(out);
        Mat& ga = g(a);
        for (int i = 0; i < Y.rows; ++i) {
            double dot = 0.0;
            for (int j = 0; j < Y.cols; ++j) dot += G(i, j) * Y(i, j);
            for (int j = 0; j < Y.cols; ++j) ga(i, j) += Y(i, j) * (G(i, j) - dot);
        }
    };
    return out;
}

Tape::Ref Tape::layernorm(Ref x, Ref gain, Ref bias) {
    const Mat& X = val(x);
    const Mat& Gn = val(gain);
    const Mat& B = val(bias);
    if (Gn.rows != 1 || Gn.cols != X.cols || B.rows != 1 || B.cols != X.cols)
        throw std::runtime_error("layernorm: gain/bias shape mismatch");
    Mat C(X.rows, X.cols);
    Mat xhat(X.rows, X.cols);
    std::vector<double> inv_std(X.rows);
    for (int i = 0; i < X.rows; ++i) {
        double mu = 0.0;
        for (int j = 0; j < X.cols; ++j) mu += X(i, j);
        mu /= X.cols;
        double var = 0.0;
        for (int j = 0; j < X.cols; ++j) {
            double dx = X(i, j) - mu;
            var += dx * dx;
        }
        var /= X.cols;
        double is = 1.0 / std::sqrt(var + kLnEps);
        inv_std[i] = is;
        for (int j = 0; j < X.cols; ++j) {
            double h = (X(i, j) - mu) * is;
            xhat(i, j) = h;
            C(i, j) = Gn(0, j) * h + B(0, j);
        }
    }
    Ref out = push(std::move(C));
    nodes_[out].back = [this, x, gain, bias, out, xhat = std::move(xhat),
                        inv_std = std::move(inv_std)] {
        const Mat& Gn = val(gain);
        const Mat& G = grad(out);
        Mat& gx = g(x);
        Mat& gg = g(gain);
        Mat& gb = g(bias);
        int n = G.cols;
        for (int i = 0; i < G.rows; ++i) {
            double m1 = 0.0, m2 = 0.0;
            for (int j = 0; j < n; ++j) {
                double dh = G(i, j) * Gn(0, j);
                m1 += dh;
                m2 += dh * xhat(i, j);
                gg(0, j) += G(i, j) * xhat(i, j);
                gb(0, j) += G(i, j);
            }
            m1 /= n;
            m2 /= n;
            for (int j = 0; j < n; ++j) {
                double dh = G(i, j) * Gn(0, j);
                gx(i, j) += (dh - m1 - xhat(i, j) * m2) * inv_std[i];
            }
        }
    };
    return out;
}

Tape::Ref Tape::mse_to(Ref pred, const Mat& target) {
    const Mat& P = val(pred);
    if (!P.same_shape(target)) throw std::runtime_error("mse_to: shape mismatch");
    if (P.size() == 0) throw std::runtime_error("mse_to: empty prediction");
    double acc = 0.0;
    for (size_t i = 0; i < P.size(); ++i) {
        double e = P.d[i] - target.d[i];
        acc += e * e;
    }
    Mat C(1, 1);
    C(0, 0) = acc / static_cast<double>(P.size());
    Ref out = push(std::move(C));
    nodes_[out].back = [this, pred, out, target] {
        const Mat& P = val(pred);
        double gs = grad(out)(0, 0) * 2.0 / static_cast<double>(P.size());
        Mat& gp = g(pred);
        for (size_t i = 0; i < P.size(); ++i) gp.d[i] += gs * (P.d[i] - target.d[i]);
    };
    return out;
}

Tape::Ref Tape::cross_entropy(Ref logits, int label) {
    const Mat& L = val(logits);
    if (L.rows != 1) throw std::runtime_error("cross_entropy: logits must be 1 x C");
    if (label < 0 || label >= L.cols) throw std::runtime_error("cross_entropy: label out of range");
    double mx = L(0, 0);
    for (int j = 1; j < L.cols; ++j) mx = std::max(mx, L(0, j));
    double sum = 0.0;
    for (int j = 0; j < L.cols; ++j) sum += std::exp(L(0, j) - mx);
    Mat C(1, 1);
    C(0, 0) = std::log(sum) + mx - L(0, label);
    Ref out = push(std::move(C));
    nodes_[out].back = [this, logits, out, label, mx, sum] {
        const Mat& L = val(logits);
        double gs = grad(out)(0, 0);
        Mat& gl = g(logits);
        for (int j = 0; j < L.cols; ++j) {
            double p = std::exp(L(0, j) - mx) / sum;
            gl(0, j) += gs * (p - (j == label ? 1.0 : 0.0));
        }
    };
    return out;
}

void Tape::backward(Ref loss) {
    if (loss < 0 || loss >= static_cast<Ref>(nodes_.size()))
        throw std::runtime_error("backward: invalid loss ref");
    const Mat& L = val(loss);
    if (L.rows != 1 || L.cols != 1) throw std::runtime_error("backward: loss must be scalar");
    g(loss)(0, 0) = 1.0;
    for (Ref r = loss; r >= 0; --r) {
        if (nodes_[r].back) nodes_[r].back();
    }
}

} // namespace facto
