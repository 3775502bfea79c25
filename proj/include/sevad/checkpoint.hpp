#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "sevad/model.hpp"

namespace sevad {

// Checkpoint container: the model (config + parameters) plus a JSON
// snapshot of the training run that produced it.
struct Checkpoint {
    Model model;
    std::string train_info;  // raw JSON text, may be empty
};

// Binary layout: magic "SVCK", format version (u32 LE), config JSON blob
// (u32 length + bytes), then named tensors in registry order as
// (name length, name, rank, dims, f32 LE data), terminated by a CRC32 of
// everything after the magic. Round trips are bit-exact.
std::vector<uint8_t> save_checkpoint(const Model& model, const std::string& train_info);
Checkpoint load_checkpoint(const std::vector<uint8_t>& bytes);

void save_checkpoint_file(const std::string& path, const Model& model,
                          const std::string& train_info);
Checkpoint load_checkpoint_file(const std::string& path);

uint32_t crc32_ieee(const uint8_t* data, size_t len);

}  // namespace sevad
