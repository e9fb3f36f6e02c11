#ifndef FACTO_TAPE_HPP
#define FACTO_TAPE_HPP

#include <functional>
#include <vector>

#include "facto/tensor.hpp"

namespace facto {

// Reverse-mode autodiff over matrices. Every op records a node whose
// backward closure scatters the output gradient into its inputs.
// A tape is built per forward pass and discarded after backward().
class Tape {
public:
    using Ref = int;

    Ref leaf(Mat v);

    const Mat& val(Ref r) const { return nodes_[r].v; }
    const Mat& grad(Ref r) const { return nodes_[r].g; }

    Ref matmul(Ref a, Ref b);
    Ref add(Ref a, Ref b);              // same shape
    Ref add_rowvec(Ref a, Ref row);     // row is 1 x C, broadcast over rows
    Ref scale(Ref a, double s);
    Ref transpose(Ref a);
    Ref slice_cols(Ref a, int c0, int n);
    Ref concat_cols(const std::vector<Ref>& parts);
    Ref concat_rows(const std::vector<Ref>& parts);
    Ref select_rows(Ref a, std::vector<int> idx);
    Ref repeat_row(Ref row, int n);     // row is 1 x C
    // rows of a land at pos_a, rows of b at pos_b; positions partition [0, |a|+|b|)
    Ref merge_rows(Ref a, std::vector<int> pos_a, Ref b, std::vector<int> pos_b);

    Ref gelu(Ref a);                    // exact erf form
    Ref softmax_rows(Ref a);            // row-wise, max-subtracted
    Ref layernorm(Ref x, Ref gain, Ref bias); // gain/bias are 1 x C

    Ref mse_to(Ref pred, const Mat& target);      // scalar: mean squared error
    Ref cross_entropy(Ref logits, int label);     // logits 1 x C, label 0-based

    void backward(Ref loss); // loss must be 1x1; seeds with 1

    size_t num_nodes() const { return nodes_.size(); }

private:
    struct Node {
        Mat v;
        Mat g;
        std::function<void()> back; // empty for leaves
    };
    std::vector<Node> nodes_;

    Ref push(Mat v, std::function<void()> back = {});
    Mat& g(Ref r) { return nodes_[r].g; }
};

} // namespace facto

#endif
