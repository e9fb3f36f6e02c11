#ifndef FACTO_CHECKPOINT_HPP
#define FACTO_CHECKPOINT_HPP

#include <cstdint>
#include <string>

#include "facto/encoder.hpp"

namespace facto {

// Checkpoint = <prefix>.json manifest (config, parameter names/shapes/byte
// offsets, seed, epoch, mode tag) + <prefix>.bin little-endian f32 payload.
// save(load(x)) is byte-identical to x.
struct Checkpoint {
    EncoderConfig config;
    ParamStore params;
    uint64_t seed = 0;
    int epoch = 0;
    std::string mode; // "spectral" | "spatial" | "joint" | "factoformer"
};

void save_checkpoint(const Checkpoint& ckpt, const std::string& prefix);
Checkpoint load_checkpoint(const std::string& prefix);

} // namespace facto

#endif
