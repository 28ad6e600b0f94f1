#pragma once

// Versioned binary parameter files.
//
// Layout (little-endian):
//   magic "TSAPPRM\0" | u32 version | u64 len + architecture manifest |
//   u64 len + metadata | u64 entry count |
//   per entry: u64 len + name | u8 trainable | u64 rank | u64 dims[rank] | f64 data[]
//
// The architecture manifest must match the loading model's byte for byte;
// metadata (training provenance, domains) is free-form and returned as is.

#include <filesystem>
#include <string>

#include "tsap/nn.hpp"

namespace tsap {

inline constexpr std::uint32_t kParamFormatVersion = 1;

void save_params(const std::filesystem::path& path, const ParamSet& params,
                 const std::string& arch_manifest, const std::string& metadata = "{}");

/// Overwrites the values of `params` from the file. Throws ContractError if
/// the embedded manifest differs from `arch_manifest` or the entries do not
/// line up, and ParseError on a corrupt or foreign file.
void load_params(const std::filesystem::path& path, ParamSet& params,
                 const std::string& arch_manifest, std::string* metadata = nullptr);

/// Reads only the manifests, e.g. to report what a file contains.
void peek_params(const std::filesystem::path& path, std::string* arch_manifest,
                 std::string* metadata);

}  // namespace tsap
