#ifndef FACTO_METRICS_HPP
#define FACTO_METRICS_HPP

#include <array>
#include <functional>
#include <string>
#include <vector>

#include "facto/hsi.hpp"
#include "facto/pretrain.hpp"

namespace facto {

// rows = true class, cols = predicted class (0-based internally)
struct ConfusionMatrix {
    int num_classes = 0;
    std::vector<long long> counts; // C x C
    long long total = 0;

    explicit ConfusionMatrix(int c = 0)
        : num_classes(c), counts(static_cast<size_t>(c) * c, 0) {}

    void add(int true_class, int pred_class); // 1-based labels
    long long at(int t, int p) const { return counts[static_cast<size_t>(t) * num_classes + p]; }
    void merge(const ConfusionMatrix& other);
};

struct MetricsReport {
    double oa = 0.0;
    double aa = 0.0;
    double kappa = 0.0;
    std::vector<double> per_class; // recall per class; 0 for empty rows
};

// OA = trace/total; AA averages per-class recall over classes with samples;
// kappa = (p_o - p_e) / (1 - p_e) from the marginals.
MetricsReport metrics(const ConfusionMatrix& cm);

using Predictor = std::function<int(const Sample&)>; // returns class in 1..C

ConfusionMatrix evaluate(const Predictor& predict, const SampleSource& test, int num_classes);

// Human-readable per-class table plus OA/AA/kappa at the conventional
// precision (percentages to 2 decimals, kappa to 4).
std::string format_report(const ConfusionMatrix& cm,
                          const std::vector<std::string>& class_names = {});
std::string report_json(const ConfusionMatrix& cm, uint64_t seed, const std::string& config_hash);

using Rgb = std::array<uint8_t, 3>;

// Fixed palette: index 0 = background (black), 1..n = class colors.
std::vector<Rgb> default_palette(int num_classes);
void write_palette_json(const std::vector<Rgb>& palette, const std::string& path);

// Predicts every labeled pixel (all pixels when `all_pixels`) and writes a
// P6 portable pixmap; unlabeled pixels stay black.
void export_map(const Predictor& predict, const HsiCube& cube, const LabelField& labels,
                int patch_size, const std::vector<Rgb>& palette, const std::string& path,
                bool all_pixels = false);

// Renders ground truth labels directly (identity model).
void export_label_map(const LabelField& labels, const std::vector<Rgb>& palette,
                      const std::string& path);

} // namespace facto

#endif
