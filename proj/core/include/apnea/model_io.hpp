#pragma once

#include <filesystem>

#include "apnea/model.hpp"

namespace apnea {

// Container: magic "APNEAMDL", u32 format version, mode byte, length-
// prefixed JSON architecture config, named tensor records (f64 or u8
// payloads, little endian), trailing FNV-1a 64 checksum of everything
// before it. Loading gives the strong guarantee: on any failure nothing
// is returned and the error type names the cause (VersionError,
// TruncationError, ChecksumError, DataError).
void save_model(const Model& model, const std::filesystem::path& path);
Model load_model(const std::filesystem::path& path);

// The config block's JSON text, usable standalone for --arch-json files.
std::string architecture_to_json(const ArchitectureConfig& config);
ArchitectureConfig architecture_from_json(const std::string& text);

}  // namespace apnea
