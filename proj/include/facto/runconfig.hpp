#ifndef FACTO_RUNCONFIG_HPP
#define FACTO_RUNCONFIG_HPP

#include <optional>
#include <stdexcept>
#include <string>

#include "facto/encoder.hpp"
#include "facto/model.hpp"
#include "facto/pretrain.hpp"

namespace facto {

// Raised for bad configs and failed upfront validation (CLI exit code 2);
// every other failure maps to exit code 3.
struct ConfigError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

struct RunConfig {
    std::string dataset_name;
    std::string cube_prefix;   // portable cube format prefix
    std::string labels_prefix; // label raster prefix
    std::optional<std::string> split_file;

    int patch_size = 7;
    int band_group = 1;
    int joint_group = 10;

    // tokens/token_dim are derived from the data at run time
    EncoderConfig spectral{5, 4, 32, 4, 0, 0};
    EncoderConfig spatial{5, 4, 64, 8, 0, 0};

    PretrainConfig pretrain;
    FinetuneConfig finetune;

    uint64_t seed = 1;
    int threads = 1;
    std::string out_dir = "out";

    void validate() const; // throws ConfigError
};

RunConfig load_run_config(const std::string& path);

// canonical JSON of the effective config (after overrides)
std::string config_canonical_json(const RunConfig& cfg);

uint64_t fnv1a(const std::string& bytes);
std::string hex64(uint64_t v);
uint64_t hash_file(const std::string& path); // 0 when absent

// writes out_dir/manifest.json with the config hash, seed, and content
// hashes of the input files
void write_run_manifest(const RunConfig& cfg, const std::string& out_dir);

// creates out_dir and the fixed layout: checkpoints/, logs/, reports/, maps/
void ensure_run_layout(const std::string& out_dir);

} // namespace facto

#endif
