#ifndef FACTO_TENSOR_HPP
#define FACTO_TENSOR_HPP

#include <cassert>
#include <cmath>
#include <cstddef>
#include <string>
#include <stdexcept>
#include <vector>

namespace facto {

// Dense row-major matrix of doubles. All model math runs in 64-bit;
// checkpoints narrow to f32 on disk.
struct Mat {
    int rows = 0;
    int cols = 0;
    std::vector<double> d;

    Mat() = default;
    Mat(int r, int c) : rows(r), cols(c), d(static_cast<size_t>(r) * c, 0.0) {}
    Mat(int r, int c, double fill)
        : rows(r), cols(c), d(static_cast<size_t>(r) * c, fill) {}

    double& operator()(int r, int c) { return d[static_cast<size_t>(r) * cols + c]; }
    double operator()(int r, int c) const { return d[static_cast<size_t>(r) * cols + c]; }

    size_t size() const { return d.size(); }

    bool same_shape(const Mat& o) const { return rows == o.rows && cols == o.cols; }
};

inline void check_finite(const Mat& m, const char* what) {
    for (double x : m.d) {
        if (!std::isfinite(x)) throw std::runtime_error(std::string("non-finite value in ") + what);
    }
}

} // namespace facto

#endif
