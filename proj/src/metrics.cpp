#include "facto/metrics.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

namespace facto {

void ConfusionMatrix::add(int true_class, int pred_class) {
    if (true_class < 1 || true_class > num_classes || pred_class < 1 || pred_class > num_classes)
        throw std::runtime_error("confusion matrix: class out of range");
    ++counts[static_cast<size_t>(true_class - 1) * num_classes + (pred_class - 1)];
    ++total;
}

void ConfusionMatrix::merge(const ConfusionMatrix& other) {
    if (other.num_classes != num_classes)
        throw std::runtime_error("confusion matrix: merge dimension mismatch");
    for (size_t i = 0; i < counts.size(); ++i) counts[i] += other.counts[i];
    total += other.total;
}

MetricsReport metrics(const ConfusionMatrix& cm) {
    if (cm.total == 0) throw std::runtime_error("metrics: empty confusion matrix");
    int C = cm.num_classes;
    MetricsReport r;
    r.per_class.resize(C, 0.0);
    long long trace = 0;
    double pe = 0.0;
    int present = 0;
    double aa_sum = 0.0;
    for (int c = 0; c < C; ++c) {
        long long row = 0, col = 0;
        for (int j = 0; j < C; ++j) {
            row += cm.at(c, j);
            col += cm.at(j, c);
        }
        trace += cm.at(c, c);
        pe += static_cast<double>(row) * static_cast<double>(col);
        if (row > 0) {
            r.per_class[c] = static_cast<double>(cm.at(c, c)) / static_cast<double>(row);
            aa_sum += r.per_class[c];
            ++present;
        }
    }
    double total = static_cast<double>(cm.total);
    r.oa = static_cast<double>(trace) / total;
    r.aa = present > 0 ? aa_sum / present : 0.0;
    pe /= total * total;
    r.kappa = pe < 1.0 ? (r.oa - pe) / (1.0 - pe) : 1.0;
    return r;
}

ConfusionMatrix evaluate(const Predictor& predict, const SampleSource& test, int num_classes) {
    if (test.size() == 0) throw std::runtime_error("evaluate: empty test set");
    ConfusionMatrix cm(num_classes);
    for (size_t i = 0; i < test.size(); ++i) {
        Sample s = test.get(i);
        if (!s.label) throw std::runtime_error("evaluate: unlabeled test sample");
        cm.add(*s.label, predict(s));
    }
    return cm;
}

std::string format_report(const ConfusionMatrix& cm, const std::vector<std::string>& class_names) {
    MetricsReport r = metrics(cm);
    std::ostringstream os;
    os << std::fixed;
    for (int c = 0; c < cm.num_classes; ++c) {
        long long row = 0;
        for (int j = 0; j < cm.num_classes; ++j) row += cm.at(c, j);
        std::string name = c < static_cast<int>(class_names.size()) ? class_names[c]
                                                                    : "class " + std::to_string(c + 1);
        os << std::setw(30) << std::left << name << std::right << std::setw(8) << row << "  "
           << std::setw(6) << std::setprecision(2) << r.per_class[c] * 100.0 << "\n";
    }
    os << "OA (%)  " << std::setprecision(2) << r.oa * 100.0 << "\n";
    os << "AA (%)  " << std::setprecision(2) << r.aa * 100.0 << "\n";
    os << "kappa   " << std::setprecision(4) << r.kappa << "\n";
    os << "total   " << cm.total << "\n";
    return os.str();
}

std::string report_json(const ConfusionMatrix& cm, uint64_t seed, const std::string& config_hash) {
    MetricsReport r = metrics(cm);
    nlohmann::json j;
    j["oa"] = r.oa;
    j["aa"] = r.aa;
    j["kappa"] = r.kappa;
    j["per_class"] = r.per_class;
    j["total"] = cm.total;
    j["seed"] = seed;
    j["config_hash"] = config_hash;
    std::vector<std::vector<long long>> rows(cm.num_classes,
                                             std::vector<long long>(cm.num_classes));
    for (int t = 0; t < cm.num_classes; ++t)
        for (int p = 0; p < cm.num_classes; ++p) rows[t][p] = cm.at(t, p);
    j["counts"] = rows;
    return j.dump(2);
}

std::vector<Rgb> default_palette(int num_classes) {
    // background + a fixed cycle of saturated colors
    static const std::vector<Rgb> base = {
        {255, 0, 0},     {0, 255, 0},     {0, 0, 255},     {255, 255, 0},  {255, 0, 255},
        {0, 255, 255},   {255, 128, 0},   {128, 0, 255},   {0, 128, 0},    {128, 128, 0},
        {0, 128, 255},   {255, 0, 128},   {128, 64, 0},    {64, 128, 128}, {192, 192, 192},
        {128, 0, 0},     {0, 64, 128},    {255, 192, 128}, {64, 0, 128},   {0, 192, 64},
    };
    std::vector<Rgb> pal;
    pal.push_back({0, 0, 0});
    for (int c = 0; c < num_classes; ++c) pal.push_back(base[c % base.size()]);
    return pal;
}

void write_palette_json(const std::vector<Rgb>& palette, const std::string& path) {
    nlohmann::json j = nlohmann::json::array();
    for (const Rgb& c : palette) j.push_back({c[0], c[1], c[2]});
    std::ofstream f(path);
    if (!f) throw std::runtime_error("cannot write palette: " + path);
    f << j.dump(2) << "\n";
}

namespace {

void write_ppm(const std::vector<Rgb>& pixels, int width, int height, const std::string& path) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write map: " + path);
    f << "P6\n" << width << " " << height << "\n255\n";
    for (const Rgb& p : pixels) f.write(reinterpret_cast<const char*>(p.data()), 3);
    if (!f) throw std::runtime_error("write failed on " + path);
}

} // namespace

void export_map(const Predictor& predict, const HsiCube& cube, const LabelField& labels,
                int patch_size, const std::vector<Rgb>& palette, const std::string& path,
                bool all_pixels) {
    if (labels.height != cube.height || labels.width != cube.width)
        throw std::runtime_error("export_map: cube/label dimension mismatch");
    std::vector<Rgb> pixels(static_cast<size_t>(cube.height) * cube.width, Rgb{0, 0, 0});
    for (int r = 0; r < cube.height; ++r)
        for (int c = 0; c < cube.width; ++c) {
            if (!all_pixels && labels.at(r, c) == 0) continue;
            Sample s = extract_sample(cube, {r, c}, patch_size, &labels);
            int pred = predict(s);
            pixels[static_cast<size_t>(r) * cube.width + c] = palette.at(pred);
        }
    write_ppm(pixels, cube.width, cube.height, path);
}

void export_label_map(const LabelField& labels, const std::vector<Rgb>& palette,
                      const std::string& path) {
    std::vector<Rgb> pixels(static_cast<size_t>(labels.height) * labels.width);
    for (size_t i = 0; i < pixels.size(); ++i) pixels[i] = palette.at(labels.labels[i]);
    write_ppm(pixels, labels.width, labels.height, path);
}

} // namespace facto
