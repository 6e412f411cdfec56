#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "wsds/network.hpp"

namespace wsds {

inline constexpr char kCheckpointMagic[4] = {'W', 'S', 'D', 'S'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Binary tensor table, all integers little-endian:
///   "WSDS" | u32 version | u32 record count |
///   per record: u32 name length | name bytes | u32 rank | rank x u32 extent |
///               numel x f64 payload
/// Records are written in name order, so equal tables encode to equal bytes.
std::vector<std::uint8_t> encode_tensor_table(const std::map<std::string, Tensor>& table);
std::map<std::string, Tensor> decode_tensor_table(const std::vector<std::uint8_t>& bytes);

void write_tensor_table(const std::filesystem::path& path,
                        const std::map<std::string, Tensor>& table);
std::map<std::string, Tensor> read_tensor_table(const std::filesystem::path& path);

void save_checkpoint(const SegModel& model, const std::filesystem::path& path);
/// Copies the stored parameters into `model`; throws CheckpointError unless
/// names and shapes match the model's architecture exactly.
void load_checkpoint(SegModel& model, const std::filesystem::path& path);
void apply_parameters(SegModel& model, const std::map<std::string, Tensor>& table);

/// 64-bit FNV-1a of the encoded parameters, as 16 hex digits.
std::string model_id(const SegModel& model);
std::string fnv1a_hex(const std::vector<std::uint8_t>& bytes);

}  // namespace wsds
