#pragma once

#include <filesystem>
#include <string>
#include <vector>

#include "xprompt/model.hpp"

namespace xp {

// Base-model checkpoint: tag "XPC1", the config integers, an extension-row
// count (always 0 — learned rows ship separately), then every tensor as
// little-endian float32 in declared order. Loading validates byte length.
void save_checkpoint(const std::filesystem::path& path, const ModelWeights& w);
ModelWeights load_checkpoint(const std::filesystem::path& path);

// One learned imaginary word as a small shippable artifact: its name,
// free-form provenance, and the d_model embedding row (tag "XPS1").
struct ImaginarySidecar {
    std::string name;
    std::string provenance;
    std::vector<float> row;
};

void save_sidecar(const std::filesystem::path& path, const ImaginarySidecar& sidecar);
ImaginarySidecar load_sidecar(const std::filesystem::path& path);

}  // namespace xp
