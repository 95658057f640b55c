#include "efield/tensor_io.hpp"

#include <array>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <limits>
#include <optional>
#include <set>
#include <sstream>

#include <fmt/format.h>
#include <json.hpp>

namespace efield {

namespace fs = std::filesystem;
using json = nlohmann::json;

namespace {

constexpr std::array<char, 4> kMagic = {'E', 'F', 'T', '1'};

template <typename U>
void store_le(std::uint8_t* dst, U value) {
    static_assert(std::is_unsigned_v<U>);
    for (std::size_t b = 0; b < sizeof(U); ++b)
        dst[b] = static_cast<std::uint8_t>(value >> (8 * b));
}

template <typename U>
U load_le(const std::uint8_t* src) {
    static_assert(std::is_unsigned_v<U>);
    U value = 0;
    for (std::size_t b = 0; b < sizeof(U); ++b)
        value |= static_cast<U>(src[b]) << (8 * b);
    return value;
}

// Header field offsets. Bytes 52..63 are reserved and zero.
constexpr std::size_t kOffVersion = 4;
constexpr std::size_t kOffDtype = 8;
constexpr std::size_t kOffLength = 12;
constexpr std::size_t kOffHeadDim = 20;
constexpr std::size_t kOffScale = 28;
constexpr std::size_t kOffLayer = 36;
constexpr std::size_t kOffQueryHead = 40;
constexpr std::size_t kOffKvHead = 44;

std::array<std::uint8_t, kDumpHeaderBytes> encode_header(const DumpHeader& h) {
    std::array<std::uint8_t, kDumpHeaderBytes> buf{};
    std::memcpy(buf.data(), kMagic.data(), kMagic.size());
    store_le<std::uint32_t>(buf.data() + kOffVersion, h.format_version);
    buf[kOffDtype] = static_cast<std::uint8_t>(h.dtype);
    store_le<std::uint64_t>(buf.data() + kOffLength, h.length);
    store_le<std::uint64_t>(buf.data() + kOffHeadDim, h.head_dim);
    store_le<std::uint64_t>(buf.data() + kOffScale, std::bit_cast<std::uint64_t>(h.softmax_scale));
    store_le<std::uint32_t>(buf.data() + kOffLayer, h.layer);
    store_le<std::uint32_t>(buf.data() + kOffQueryHead, h.query_head);
    store_le<std::uint32_t>(buf.data() + kOffKvHead, h.kv_head);
    return buf;
}

DumpHeader decode_header(const std::uint8_t* buf, const fs::path& path) {
    if (std::memcmp(buf, kMagic.data(), kMagic.size()) != 0)
        throw IoError(fmt::format("{}: bad magic", path.string()));
    DumpHeader h;
    h.format_version = load_le<std::uint32_t>(buf + kOffVersion);
    if (h.format_version != kDumpFormatVersion)
        throw IoError(fmt::format("{}: unsupported format version {}", path.string(), h.format_version));
    const std::uint8_t dt = buf[kOffDtype];
    if (dt != 1 && dt != 2)
        throw IoError(fmt::format("{}: unknown dtype code {}", path.string(), dt));
    h.dtype = static_cast<DType>(dt);
    h.length = load_le<std::uint64_t>(buf + kOffLength);
    h.head_dim = load_le<std::uint64_t>(buf + kOffHeadDim);
    h.softmax_scale = std::bit_cast<double>(load_le<std::uint64_t>(buf + kOffScale));
    h.layer = load_le<std::uint32_t>(buf + kOffLayer);
    h.query_head = load_le<std::uint32_t>(buf + kOffQueryHead);
    h.kv_head = load_le<std::uint32_t>(buf + kOffKvHead);
    if (h.length == 0 || h.head_dim == 0)
        throw IoError(fmt::format("{}: empty shape {}x{}", path.string(), h.length, h.head_dim));
    if (!(std::isfinite(h.softmax_scale) && h.softmax_scale > 0.0))
        throw IoError(fmt::format("{}: softmax_scale must be finite and positive", path.string()));
    // L * d_h * 2 * 8 must fit comfortably in 64 bits.
    if (h.length > (std::uint64_t{1} << 28) || h.head_dim > (std::uint64_t{1} << 28))
        throw IoError(fmt::format("{}: implausible shape {}x{}", path.string(), h.length, h.head_dim));
    return h;
}

void encode_matrix(const Eigen::MatrixXd& m, DType dtype, std::uint8_t* dst, const char* name) {
    const std::size_t width = dtype_size(dtype);
    for (Index i = 0; i < m.rows(); ++i) {
        for (Index j = 0; j < m.cols(); ++j) {
            const double v = m(i, j);
            if (dtype == DType::f32) {
                const float f = static_cast<float>(v);
                if (!std::isfinite(f))
                    throw std::invalid_argument(
                        fmt::format("non-finite {} entry at ({}, {}) at dtype f32", name, i, j));
                store_le<std::uint32_t>(dst, std::bit_cast<std::uint32_t>(f));
            } else {
                if (!std::isfinite(v))
                    throw std::invalid_argument(fmt::format("non-finite {} entry at ({}, {})", name, i, j));
                store_le<std::uint64_t>(dst, std::bit_cast<std::uint64_t>(v));
            }
            dst += width;
        }
    }
}

Eigen::MatrixXd decode_matrix(const std::uint8_t* src, Index rows, Index cols, DType dtype,
                              const fs::path& path, const char* name) {
    Eigen::MatrixXd m(rows, cols);
    const std::size_t width = dtype_size(dtype);
    for (Index i = 0; i < rows; ++i) {
        for (Index j = 0; j < cols; ++j) {
            double v;
            if (dtype == DType::f32)
                v = static_cast<double>(std::bit_cast<float>(load_le<std::uint32_t>(src)));
            else
                v = std::bit_cast<double>(load_le<std::uint64_t>(src));
            if (!std::isfinite(v))
                throw IoError(fmt::format("{}: non-finite {} entry at ({}, {})", path.string(), name, i, j));
            m(i, j) = v;
            src += width;
        }
    }
    return m;
}

std::vector<std::uint8_t> read_file(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(fmt::format("{}: cannot open for reading", path.string()));
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (in.bad())
        throw IoError(fmt::format("{}: read failed", path.string()));
    return bytes;
}

} // namespace

std::string to_string(DType dtype) {
    return dtype == DType::f32 ? "f32" : "f64";
}

DType parse_dtype(const std::string& s) {
    if (s == "f32" || s == "float32")
        return DType::f32;
    if (s == "f64" || s == "float64")
        return DType::f64;
    throw std::invalid_argument(fmt::format("unknown dtype '{}' (expected f32 or f64)", s));
}

std::size_t dtype_size(DType dtype) {
    return dtype == DType::f32 ? 4 : 8;
}

void HeadTensors::validate() const {
    if (q.rows() < 1 || q.cols() < 1)
        throw std::invalid_argument("head tensors must have L >= 1 and d_h >= 1");
    if (q.rows() != k.rows() || q.cols() != k.cols())
        throw std::invalid_argument(fmt::format("Q is {}x{} but K is {}x{}", q.rows(), q.cols(), k.rows(), k.cols()));
    if (!(std::isfinite(softmax_scale) && softmax_scale > 0.0))
        throw std::invalid_argument("softmax_scale must be finite and positive");
    if (!q.allFinite())
        throw std::invalid_argument("non-finite entry in Q");
    if (!k.allFinite())
        throw std::invalid_argument("non-finite entry in K");
}

std::uint64_t dump_file_size(std::uint64_t length, std::uint64_t head_dim, DType dtype) {
    return kDumpHeaderBytes + 2 * length * head_dim * dtype_size(dtype);
}

void write_head_dump(const HeadTensors& tensors, const fs::path& path, DType dtype) {
    tensors.validate();
    const auto rows = static_cast<std::uint64_t>(tensors.length());
    const auto cols = static_cast<std::uint64_t>(tensors.head_dim());

    DumpHeader h;
    h.format_version = kDumpFormatVersion;
    h.dtype = dtype;
    h.length = rows;
    h.head_dim = cols;
    h.softmax_scale = tensors.softmax_scale;
    h.layer = tensors.meta.layer;
    h.query_head = tensors.meta.query_head;
    h.kv_head = tensors.meta.kv_head;

    std::vector<std::uint8_t> bytes(dump_file_size(rows, cols, dtype));
    const auto header = encode_header(h);
    std::memcpy(bytes.data(), header.data(), header.size());
    const std::size_t payload = rows * cols * dtype_size(dtype);
    encode_matrix(tensors.q, dtype, bytes.data() + kDumpHeaderBytes, "Q");
    encode_matrix(tensors.k, dtype, bytes.data() + kDumpHeaderBytes + payload, "K");

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError(fmt::format("{}: cannot open for writing", path.string()));
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out)
        throw IoError(fmt::format("{}: write failed", path.string()));
}

DumpHeader read_dump_header(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError(fmt::format("{}: cannot open for reading", path.string()));
    std::array<std::uint8_t, kDumpHeaderBytes> buf{};
    in.read(reinterpret_cast<char*>(buf.data()), buf.size());
    if (in.gcount() < 4)
        throw IoError(fmt::format("{}: truncated header", path.string()));
    if (std::memcmp(buf.data(), kMagic.data(), kMagic.size()) != 0)
        throw IoError(fmt::format("{}: bad magic", path.string()));
    if (static_cast<std::size_t>(in.gcount()) < kDumpHeaderBytes)
        throw IoError(fmt::format("{}: truncated header", path.string()));
    DumpHeader h = decode_header(buf.data(), path);
    std::error_code ec;
    const auto size = fs::file_size(path, ec);
    if (ec)
        throw IoError(fmt::format("{}: {}", path.string(), ec.message()));
    const auto expected = dump_file_size(h.length, h.head_dim, h.dtype);
    if (size < expected)
        throw IoError(fmt::format("{}: truncated payload ({} of {} bytes)", path.string(), size, expected));
    if (size > expected)
        throw IoError(fmt::format("{}: {} trailing bytes after payload", path.string(), size - expected));
    return h;
}

HeadTensors read_head_dump(const fs::path& path) {
    const auto bytes = read_file(path);
    if (bytes.size() >= 4 && std::memcmp(bytes.data(), kMagic.data(), kMagic.size()) != 0)
        throw IoError(fmt::format("{}: bad magic", path.string()));
    if (bytes.size() < kDumpHeaderBytes)
        throw IoError(fmt::format("{}: truncated header", path.string()));
    const DumpHeader h = decode_header(bytes.data(), path);
    const auto expected = dump_file_size(h.length, h.head_dim, h.dtype);
    if (bytes.size() < expected)
        throw IoError(fmt::format("{}: truncated payload ({} of {} bytes)", path.string(), bytes.size(), expected));
    if (bytes.size() > expected)
        throw IoError(fmt::format("{}: {} trailing bytes after payload", path.string(), bytes.size() - expected));

    const auto rows = static_cast<Index>(h.length);
    const auto cols = static_cast<Index>(h.head_dim);
    const std::size_t payload = h.length * h.head_dim * dtype_size(h.dtype);

    HeadTensors t;
    t.q = decode_matrix(bytes.data() + kDumpHeaderBytes, rows, cols, h.dtype, path, "Q");
    t.k = decode_matrix(bytes.data() + kDumpHeaderBytes + payload, rows, cols, h.dtype, path, "K");
    t.softmax_scale = h.softmax_scale;
    t.meta.layer = h.layer;
    t.meta.query_head = h.query_head;
    t.meta.kv_head = h.kv_head;
    return t;
}

fs::path Manifest::resolve(const ManifestHead& head) const {
    const fs::path p(head.dump_path);
    return p.is_absolute() ? p : base_dir / p;
}

namespace {

void check_header_matches(const DumpHeader& h, const ManifestHead& e, const fs::path& path) {
    if (h.length != e.length || h.head_dim != e.head_dim)
        throw IoError(fmt::format("{}: header shape {}x{} does not match manifest {}x{}", path.string(),
                                  h.length, h.head_dim, e.length, e.head_dim));
    if (h.dtype != e.dtype)
        throw IoError(fmt::format("{}: header dtype {} does not match manifest {}", path.string(),
                                  to_string(h.dtype), to_string(e.dtype)));
    if (h.layer != e.layer || h.query_head != e.query_head || h.kv_head != e.kv_head)
        throw IoError(fmt::format("{}: header head identity (layer {}, q {}, kv {}) does not match manifest "
                                  "(layer {}, q {}, kv {})",
                                  path.string(), h.layer, h.query_head, h.kv_head, e.layer, e.query_head,
                                  e.kv_head));
}

template <typename T>
T require(const json& obj, const char* key, const std::string& where) {
    if (!obj.is_object() || !obj.contains(key))
        throw IoError(fmt::format("manifest: {} missing required field '{}'", where, key));
    try {
        return obj.at(key).get<T>();
    } catch (const json::exception& e) {
        throw IoError(fmt::format("manifest: {} field '{}' has wrong type: {}", where, key, e.what()));
    }
}

std::uint32_t parse_u32_key(const std::string& key, const char* what) {
    std::size_t pos = 0;
    unsigned long v = 0;
    try {
        v = std::stoul(key, &pos);
    } catch (const std::exception&) {
        pos = 0;
    }
    if (pos != key.size() || key.empty() || v > std::numeric_limits<std::uint32_t>::max())
        throw IoError(fmt::format("manifest: gqa_map {} key '{}' is not a non-negative integer", what, key));
    return static_cast<std::uint32_t>(v);
}

} // namespace

HeadTensors read_head_dump(const Manifest& manifest, const ManifestHead& expected) {
    const fs::path path = manifest.resolve(expected);
    check_header_matches(read_dump_header(path), expected, path);
    HeadTensors t = read_head_dump(path);
    t.meta.model_id = expected.model_id;
    t.meta.text_id = manifest.text_id;
    return t;
}

Manifest parse_manifest(const std::string& json_text, const fs::path& base_dir) {
    json doc;
    try {
        doc = json::parse(json_text);
    } catch (const json::parse_error& e) {
        throw IoError(fmt::format("manifest: invalid JSON: {}", e.what()));
    }
    if (!doc.is_object())
        throw IoError("manifest: top level must be an object");

    Manifest m;
    m.base_dir = base_dir;
    m.version = require<int>(doc, "version", "top level");
    if (m.version != 1)
        throw IoError(fmt::format("manifest: unsupported version {}", m.version));
    m.text_id = require<std::string>(doc, "text_id", "top level");

    const json& heads = doc.contains("heads") ? doc.at("heads") : json();
    if (!heads.is_array())
        throw IoError("manifest: 'heads' must be an array");
    for (std::size_t n = 0; n < heads.size(); ++n) {
        const json& e = heads[n];
        const std::string where = fmt::format("heads[{}]", n);
        ManifestHead h;
        h.dump_path = require<std::string>(e, "dump_path", where);
        h.model_id = require<std::string>(e, "model_id", where);
        h.layer = require<std::uint32_t>(e, "layer", where);
        h.query_head = require<std::uint32_t>(e, "query_head", where);
        h.kv_head = require<std::uint32_t>(e, "kv_head", where);
        h.length = require<std::uint64_t>(e, "L", where);
        h.head_dim = require<std::uint64_t>(e, "d_h", where);
        try {
            h.dtype = parse_dtype(require<std::string>(e, "dtype", where));
        } catch (const std::invalid_argument& ex) {
            throw IoError(fmt::format("manifest: {}: {}", where, ex.what()));
        }
        if (h.length == 0 || h.head_dim == 0)
            throw IoError(fmt::format("manifest: {} has empty shape", where));
        m.heads.push_back(std::move(h));
    }

    const json& gqa = doc.contains("gqa_map") ? doc.at("gqa_map") : json();
    if (!gqa.is_object())
        throw IoError("manifest: 'gqa_map' must be an object of layer -> {query_head: kv_head}");
    for (const auto& [layer_key, layer_map] : gqa.items()) {
        const auto layer = parse_u32_key(layer_key, "layer");
        if (!layer_map.is_object())
            throw IoError(fmt::format("manifest: gqa_map['{}'] must be an object", layer_key));
        for (const auto& [qh_key, kv] : layer_map.items()) {
            if (!kv.is_number_unsigned())
                throw IoError(fmt::format("manifest: gqa_map['{}']['{}'] must be a non-negative integer",
                                          layer_key, qh_key));
            m.gqa_map[layer][parse_u32_key(qh_key, "query head")] = kv.get<std::uint32_t>();
        }
    }

    std::set<std::tuple<std::string, std::uint32_t, std::uint32_t>> seen;
    for (const auto& h : m.heads) {
        const auto layer_it = m.gqa_map.find(h.layer);
        if (layer_it == m.gqa_map.end() || !layer_it->second.contains(h.query_head))
            throw IoError(fmt::format("manifest: gqa_map has no entry for layer {} query head {}", h.layer,
                                      h.query_head));
        if (layer_it->second.at(h.query_head) != h.kv_head)
            throw IoError(fmt::format("manifest: layer {} query head {} maps to kv head {} but entry says {}",
                                      h.layer, h.query_head, layer_it->second.at(h.query_head), h.kv_head));
        if (!seen.insert({h.model_id, h.layer, h.query_head}).second)
            throw IoError(fmt::format("manifest: duplicate entry for model {} layer {} query head {}", h.model_id,
                                      h.layer, h.query_head));
    }
    return m;
}

Manifest load_manifest(const fs::path& path) {
    std::ifstream in(path);
    if (!in)
        throw IoError(fmt::format("{}: cannot open manifest", path.string()));
    std::stringstream ss;
    ss << in.rdbuf();
    Manifest m = parse_manifest(ss.str(), path.parent_path());

    std::vector<std::string> missing;
    for (const auto& h : m.heads) {
        if (!fs::exists(m.resolve(h)))
            missing.push_back(h.dump_path);
    }
    if (!missing.empty()) {
        std::string list;
        for (const auto& p : missing)
            list += (list.empty() ? "" : ", ") + p;
        throw IoError(fmt::format("manifest: missing dump file(s): {}", list));
    }
    for (const auto& h : m.heads) {
        const auto p = m.resolve(h);
        std::optional<DumpHeader> header;
        try {
            header = read_dump_header(p);
        } catch (const IoError&) {
            // corrupt dump: reported per head when it is read
        }
        if (header)
            check_header_matches(*header, h, p);
    }
    return m;
}

std::string manifest_to_json(const Manifest& m) {
    json doc;
    doc["version"] = m.version;
    doc["text_id"] = m.text_id;
    json heads = json::array();
    for (const auto& h : m.heads) {
        heads.push_back({{"dump_path", h.dump_path},
                         {"model_id", h.model_id},
                         {"layer", h.layer},
                         {"query_head", h.query_head},
                         {"kv_head", h.kv_head},
                         {"L", h.length},
                         {"d_h", h.head_dim},
                         {"dtype", to_string(h.dtype)}});
    }
    doc["heads"] = std::move(heads);
    json gqa = json::object();
    for (const auto& [layer, qmap] : m.gqa_map) {
        json inner = json::object();
        for (const auto& [qh, kv] : qmap)
            inner[std::to_string(qh)] = kv;
        gqa[std::to_string(layer)] = std::move(inner);
    }
    doc["gqa_map"] = std::move(gqa);
    return doc.dump(2) + "\n";
}

void save_manifest(const Manifest& m, const fs::path& path) {
    std::ofstream out(path, std::ios::trunc);
    if (!out)
        throw IoError(fmt::format("{}: cannot open for writing", path.string()));
    out << manifest_to_json(m);
    if (!out)
        throw IoError(fmt::format("{}: write failed", path.string()));
}

} // namespace efield
