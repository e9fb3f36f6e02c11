#ifndef FACTO_HSI_HPP
#define FACTO_HSI_HPP

#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace facto {

// H x W x B reflectance volume, row-major with band innermost.
struct HsiCube {
    int height = 0;
    int width = 0;
    int bands = 0;
    std::string name;
    std::vector<float> data; // size H*W*B

    float at(int r, int c, int b) const {
        return data[(static_cast<size_t>(r) * width + c) * bands + b];
    }
    float& at(int r, int c, int b) {
        return data[(static_cast<size_t>(r) * width + c) * bands + b];
    }
};

struct LabelField {
    int height = 0;
    int width = 0;
    int num_classes = 0;
    std::vector<uint16_t> labels; // 0 = unlabeled, 1..C
    std::vector<std::string> class_names;

    uint16_t at(int r, int c) const { return labels[static_cast<size_t>(r) * width + c]; }
};

using PixelCoord = std::pair<int, int>; // (row, col)

struct SplitSpec {
    std::vector<PixelCoord> train;
    std::vector<PixelCoord> test;
    std::vector<PixelCoord> pretrain;
};

struct Sample {
    int patch_size = 0; // S
    int bands = 0;
    std::vector<double> patch; // S*S*B, row-major, band innermost, values in [0,1]
    std::optional<int> label;  // 1..C
    PixelCoord center{0, 0};

    double at(int r, int c, int b) const {
        return patch[(static_cast<size_t>(r) * patch_size + c) * bands + b];
    }
};

// Portable cube format: <prefix>.json header + <prefix>.raw little-endian f32
// payload in row-major band-innermost order.
HsiCube load_cube(const std::string& prefix);
void save_cube(const HsiCube& cube, const std::string& prefix);

// Label rasters use the same header scheme with a u16 payload.
LabelField load_labels(const std::string& prefix);
void save_labels(const LabelField& labels, const std::string& prefix);

// Per-band min-max scaling over the whole scene; constant bands map to 0.
HsiCube normalize(const HsiCube& cube);

// S x S x B window centered at `center` with reflect padding at scene borders
// (border pixel not duplicated).
Sample extract_sample(const HsiCube& cube, PixelCoord center, int patch_size,
                      const LabelField* labels = nullptr);

// Train/test from a split file (JSON lists of [row, col] per class); test is
// labeled-minus-train. Without a split file all labeled pixels land in test.
// Pretrain is every pixel with label 0.
SplitSpec enumerate_splits(const LabelField& labels,
                           const std::optional<std::string>& split_file = std::nullopt);

} // namespace facto

#endif
