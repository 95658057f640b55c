#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "efield/error.hpp"

namespace efield {

using Eigen::Index;

enum class DType : std::uint8_t { f32 = 1, f64 = 2 };

std::string to_string(DType dtype);
DType parse_dtype(const std::string& s);
std::size_t dtype_size(DType dtype);

struct HeadMeta {
    std::string model_id;
    std::uint32_t layer = 0;
    std::uint32_t query_head = 0;
    std::uint32_t kv_head = 0;
    std::string text_id;
};

// Query and key vectors of one attention head, one token per row.
struct HeadTensors {
    Eigen::MatrixXd q;
    Eigen::MatrixXd k;
    double softmax_scale = 1.0;
    HeadMeta meta;

    Index length() const { return q.rows(); }
    Index head_dim() const { return q.cols(); }

    // Throws std::invalid_argument on shape mismatch, empty matrices,
    // non-positive scale or non-finite entries.
    void validate() const;
};

// Decoded 64-byte EFT1 header.
struct DumpHeader {
    std::uint32_t format_version = 0;
    DType dtype = DType::f64;
    std::uint64_t length = 0;
    std::uint64_t head_dim = 0;
    double softmax_scale = 0.0;
    std::uint32_t layer = 0;
    std::uint32_t query_head = 0;
    std::uint32_t kv_head = 0;
};

inline constexpr std::size_t kDumpHeaderBytes = 64;
inline constexpr std::uint32_t kDumpFormatVersion = 1;

std::uint64_t dump_file_size(std::uint64_t length, std::uint64_t head_dim, DType dtype);

/// Writes `tensors` as an EFT1 dump. Values are rounded to `dtype` before the
/// finiteness check, so a double that overflows float32 is rejected too.
void write_head_dump(const HeadTensors& tensors, const std::filesystem::path& path,
                     DType dtype = DType::f64);

DumpHeader read_dump_header(const std::filesystem::path& path);

/// Reads an EFT1 dump; values are promoted to double.
HeadTensors read_head_dump(const std::filesystem::path& path);

struct ManifestHead {
    std::string dump_path;  // as written in the manifest, relative to it
    std::string model_id;
    std::uint32_t layer = 0;
    std::uint32_t query_head = 0;
    std::uint32_t kv_head = 0;
    std::uint64_t length = 0;
    std::uint64_t head_dim = 0;
    DType dtype = DType::f64;
};

// layer -> (query head -> kv head)
using GqaMap = std::map<std::uint32_t, std::map<std::uint32_t, std::uint32_t>>;

struct Manifest {
    int version = 1;
    std::vector<ManifestHead> heads;
    GqaMap gqa_map;
    std::string text_id;
    std::filesystem::path base_dir;  // directory of the manifest file; not serialized

    std::filesystem::path resolve(const ManifestHead& head) const;
};

/// Reads a dump and checks its header against the manifest entry.
HeadTensors read_head_dump(const Manifest& manifest, const ManifestHead& expected);

/// Parses and validates a manifest, header-checking every referenced dump.
Manifest load_manifest(const std::filesystem::path& path);

/// Schema validation only (no file access).
Manifest parse_manifest(const std::string& json_text, const std::filesystem::path& base_dir);

void save_manifest(const Manifest& manifest, const std::filesystem::path& path);
std::string manifest_to_json(const Manifest& manifest);

} // namespace efield
