#include "facto/hsi.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <set>
#include <stdexcept>

#include <json.hpp>

namespace facto {

namespace {

using nlohmann::json;

json read_header(const std::string& path) {
    std::ifstream f(path);
    if (!f) throw std::runtime_error("cannot open header: " + path);
    json j;
    f >> j;
    return j;
}

std::vector<char> read_payload(const std::string& path, size_t expected_bytes) {
    std::ifstream f(path, std::ios::binary | std::ios::ate);
    if (!f) throw std::runtime_error("cannot open payload: " + path);
    size_t n = static_cast<size_t>(f.tellg());
    if (n != expected_bytes)
        throw std::runtime_error("payload size mismatch in " + path + ": expected " +
                                 std::to_string(expected_bytes) + " bytes, found " +
                                 std::to_string(n));
    std::vector<char> buf(n);
    f.seekg(0);
    f.read(buf.data(), static_cast<std::streamsize>(n));
    if (!f) throw std::runtime_error("short read on " + path);
    return buf;
}

void write_file(const std::string& path, const void* data, size_t bytes) {
    std::ofstream f(path, std::ios::binary);
    if (!f) throw std::runtime_error("cannot write " + path);
    f.write(static_cast<const char*>(data), static_cast<std::streamsize>(bytes));
    if (!f) throw std::runtime_error("write failed on " + path);
}

// reflect index into [0, n) without duplicating the border sample
int reflect(int i, int n) {
    if (n == 1) return 0;
    int period = 2 * (n - 1);
    i = ((i % period) + period) % period;
    return i < n ? i : period - i;
}

} // namespace

HsiCube load_cube(const std::string& prefix) {
    json h = read_header(prefix + ".json");
    HsiCube c;
    c.height = h.at("height").get<int>();
    c.width = h.at("width").get<int>();
    c.bands = h.at("bands").get<int>();
    c.name = h.value("name", "");
    if (c.height < 1 || c.width < 1 || c.bands < 1)
        throw std::runtime_error("cube header has non-positive dimensions");
    if (h.at("dtype").get<std::string>() != "f32")
        throw std::runtime_error("cube dtype must be f32");
    if (h.at("order").get<std::string>() != "row-major band-innermost")
        throw std::runtime_error("unsupported cube order");
    size_t count = static_cast<size_t>(c.height) * c.width * c.bands;
    std::vector<char> buf = read_payload(prefix + ".raw", count * sizeof(float));
    c.data.resize(count);
    std::memcpy(c.data.data(), buf.data(), buf.size());
    for (float v : c.data)
        if (!std::isfinite(v)) throw std::runtime_error("non-finite value in cube " + prefix);
    return c;
}

void save_cube(const HsiCube& cube, const std::string& prefix) {
    json h = {{"height", cube.height}, {"width", cube.width},   {"bands", cube.bands},
              {"dtype", "f32"},        {"order", "row-major band-innermost"},
              {"name", cube.name}};
    std::ofstream f(prefix + ".json");
    if (!f) throw std::runtime_error("cannot write " + prefix + ".json");
    f << h.dump(2) << "\n";
    write_file(prefix + ".raw", cube.data.data(), cube.data.size() * sizeof(float));
}

LabelField load_labels(const std::string& prefix) {
    json h = read_header(prefix + ".json");
    LabelField l;
    l.height = h.at("height").get<int>();
    l.width = h.at("width").get<int>();
    l.num_classes = h.at("classes").get<int>();
    if (h.at("dtype").get<std::string>() != "u16")
        throw std::runtime_error("label dtype must be u16");
    if (h.contains("class_names"))
        l.class_names = h.at("class_names").get<std::vector<std::string>>();
    size_t count = static_cast<size_t>(l.height) * l.width;
    std::vector<char> buf = read_payload(prefix + ".raw", count * sizeof(uint16_t));
    l.labels.resize(count);
    std::memcpy(l.labels.data(), buf.data(), buf.size());
    for (uint16_t v : l.labels)
        if (v > l.num_classes)
            throw std::runtime_error("label value exceeds class count in " + prefix);
    return l;
}

void save_labels(const LabelField& labels, const std::string& prefix) {
    json h = {{"height", labels.height},
              {"width", labels.width},
              {"classes", labels.num_classes},
              {"dtype", "u16"},
              {"order", "row-major"}};
    if (!labels.class_names.empty()) h["class_names"] = labels.class_names;
    std::ofstream f(prefix + ".json");
    if (!f) throw std::runtime_error("cannot write " + prefix + ".json");
    f << h.dump(2) << "\n";
    write_file(prefix + ".raw", labels.labels.data(), labels.labels.size() * sizeof(uint16_t));
}

HsiCube normalize(const HsiCube& cube) {
    HsiCube out = cube;
    for (int b = 0; b < cube.bands; ++b) {
        float lo = std::numeric_limits<float>::max();
        float hi = std::numeric_limits<float>::lowest();
        for (int r = 0; r < cube.height; ++r)
            for (int c = 0; c < cube.width; ++c) {
                float v = cube.at(r, c, b);
                lo = std::min(lo, v);
                hi = std::max(hi, v);
            }
        float range = hi - lo;
        for (int r = 0; r < cube.height; ++r)
            for (int c = 0; c < cube.width; ++c)
                out.at(r, c, b) = range > 0.0f ? (cube.at(r, c, b) - lo) / range : 0.0f;
    }
    return out;
}

Sample extract_sample(const HsiCube& cube, PixelCoord center, int patch_size,
                      const LabelField* labels) {
    int S = patch_size;
    if (S < 1 || S % 2 == 0) throw std::runtime_error("patch size must be odd and positive");
    if (S > 2 * std::min(cube.height, cube.width) - 1)
        throw std::runtime_error("patch size too large for scene");
    auto [row, col] = center;
    if (row < 0 || row >= cube.height || col < 0 || col >= cube.width)
        throw std::runtime_error("sample center outside image");
    Sample s;
    s.patch_size = S;
    s.bands = cube.bands;
    s.center = center;
    s.patch.resize(static_cast<size_t>(S) * S * cube.bands);
    int half = S / 2;
    size_t k = 0;
    for (int i = 0; i < S; ++i) {
        int r = reflect(row - half + i, cube.height);
        for (int j = 0; j < S; ++j) {
            int c = reflect(col - half + j, cube.width);
            for (int b = 0; b < cube.bands; ++b) s.patch[k++] = cube.at(r, c, b);
        }
    }
    if (labels) {
        uint16_t l = labels->at(row, col);
        if (l > 0) s.label = static_cast<int>(l);
    }
    return s;
}

SplitSpec enumerate_splits(const LabelField& labels,
                           const std::optional<std::string>& split_file) {
    SplitSpec spec;
    std::set<PixelCoord> train_set;
    if (split_file) {
        json j = read_header(*split_file);
        const json& tr = j.at("train");
        for (auto it = tr.begin(); it != tr.end(); ++it) {
            for (const auto& rc : it.value()) {
                PixelCoord p{rc.at(0).get<int>(), rc.at(1).get<int>()};
                if (p.first < 0 || p.first >= labels.height || p.second < 0 ||
                    p.second >= labels.width)
                    throw std::runtime_error("split coordinate outside scene");
                if (labels.at(p.first, p.second) == 0)
                    throw std::runtime_error("split coordinate has label 0");
                if (!train_set.insert(p).second)
                    throw std::runtime_error("duplicate coordinate in split file");
                spec.train.push_back(p);
            }
        }
    }
    for (int r = 0; r < labels.height; ++r)
        for (int c = 0; c < labels.width; ++c) {
            PixelCoord p{r, c};
            if (labels.at(r, c) == 0) {
                spec.pretrain.push_back(p);
            } else if (!train_set.count(p)) {
                spec.test.push_back(p);
            }
        }
    return spec;
}

} // namespace facto
