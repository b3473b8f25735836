#ifndef MRNET_IO_HPP
#define MRNET_IO_HPP

#include "mrnet/core.hpp"
#include "mrnet/numerics.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

namespace mrnet {

using Json = nlohmann::json;

// ---------------------------------------------------------------------------
// EmbeddingFile
//
//   "MRNE" | version u32 | dim u32 | count u64 |
//   count x ( id_len u16 | id bytes | dim x f32 )
//
// All integers and floats little-endian.
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kEmbeddingFormatVersion = 1;

struct EmbeddingRecord {
    std::string id;
    std::vector<float> values;
};

struct EmbeddingFile {
    std::uint32_t dim = 0;
    std::vector<EmbeddingRecord> records;

    void add(std::string id, const Vec& v) {
        require_shape(static_cast<std::uint32_t>(v.size()) == dim, "EmbeddingFile::add dimension");
        EmbeddingRecord r{std::move(id), std::vector<float>(static_cast<std::size_t>(v.size()))};
        for (Eigen::Index i = 0; i < v.size(); ++i) r.values[static_cast<std::size_t>(i)] = static_cast<float>(v(i));
        records.push_back(std::move(r));
    }

    Vec vector(std::size_t i) const {
        const auto& vals = records.at(i).values;
        Vec v(static_cast<Eigen::Index>(vals.size()));
        for (std::size_t k = 0; k < vals.size(); ++k) v(static_cast<Eigen::Index>(k)) = vals[k];
        return v;
    }

    /// Rows as a dense matrix, in record order.
    Mat matrix() const {
        Mat m(static_cast<Eigen::Index>(records.size()), static_cast<Eigen::Index>(dim));
        for (std::size_t i = 0; i < records.size(); ++i) {
            for (std::uint32_t k = 0; k < dim; ++k) m(static_cast<Eigen::Index>(i), k) = records[i].values[k];
        }
        return m;
    }

    std::unordered_map<std::string, std::size_t> id_index() const {
        std::unordered_map<std::string, std::size_t> idx;
        for (std::size_t i = 0; i < records.size(); ++i) idx.emplace(records[i].id, i);
        return idx;
    }
};

inline std::string encode_embeddings(const EmbeddingFile& f) {
    ByteWriter w;
    w.put_bytes("MRNE");
    w.put<std::uint32_t>(kEmbeddingFormatVersion);
    w.put<std::uint32_t>(f.dim);
    w.put<std::uint64_t>(f.records.size());
    for (const auto& r : f.records) {
        if (r.id.size() > 0xffff) fail(ErrorKind::data, "embedding id longer than 65535 bytes");
        require_shape(r.values.size() == f.dim, "embedding record dimension");
        w.put<std::uint16_t>(static_cast<std::uint16_t>(r.id.size()));
        w.put_bytes(r.id);
        for (float v : r.values) w.put<float>(v);
    }
    return w.take();
}

inline EmbeddingFile decode_embeddings(std::string_view bytes, const std::string& source = "embeddings") {
    ByteReader r(bytes, source);
    if (r.get_bytes(4) != "MRNE") fail(ErrorKind::data, source + ": bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kEmbeddingFormatVersion) {
        fail(ErrorKind::data, source + ": unsupported version " + std::to_string(version));
    }
    EmbeddingFile f;
    f.dim = r.get<std::uint32_t>();
    const auto count = r.get<std::uint64_t>();
    f.records.reserve(static_cast<std::size_t>(std::min<std::uint64_t>(count, 1u << 20)));
    for (std::uint64_t i = 0; i < count; ++i) {
        EmbeddingRecord rec;
        const auto len = r.get<std::uint16_t>();
        rec.id = std::string(r.get_bytes(len));
        rec.values.resize(f.dim);
        for (auto& v : rec.values) v = r.get<float>();
        f.records.push_back(std::move(rec));
    }
    if (!r.at_end()) fail(ErrorKind::data, source + ": trailing bytes after last record");
    return f;
}

inline void save_embeddings(const std::filesystem::path& path, const EmbeddingFile& f) {
    write_file_atomic(path, encode_embeddings(f));
}

inline EmbeddingFile load_embeddings(const std::filesystem::path& path) {
    return decode_embeddings(read_file(path), path.string());
}

// ---------------------------------------------------------------------------
// Checkpoint
//
//   "MRNC" | version u32 | manifest_len u64 | manifest JSON |
//   tensor_count u32 | per tensor: name_len u16 | name | rank u32 |
//   rank x u64 dims | row-major f32 values
// ---------------------------------------------------------------------------

inline constexpr std::uint32_t kCheckpointFormatVersion = 1;

struct NamedTensor {
    std::string name;
    Mat value;
};

struct Checkpoint {
    Json manifest = Json::object();
    std::vector<NamedTensor> tensors;

    const Mat& tensor(const std::string& name) const {
        for (const auto& t : tensors) {
            if (t.name == name) return t.value;
        }
        fail(ErrorKind::data, "checkpoint has no tensor " + name);
    }

    void add_store(const ParamStore& store) {
        for (const auto& t : store) tensors.push_back({t.name, t.value});
    }

    /// Copies every store tensor from the checkpoint, checking shapes.
    void load_into(ParamStore& store) const {
        for (auto& t : store) {
            const Mat& src = tensor(t.name);
            if (src.rows() != t.value.rows() || src.cols() != t.value.cols()) {
                fail(ErrorKind::data, "checkpoint tensor " + t.name + " has wrong shape");
            }
            t.value = src;
        }
    }
};

inline std::string encode_checkpoint(const Checkpoint& c) {
    ByteWriter w;
    w.put_bytes("MRNC");
    w.put<std::uint32_t>(kCheckpointFormatVersion);
    const std::string manifest = c.manifest.dump();
    w.put<std::uint64_t>(manifest.size());
    w.put_bytes(manifest);
    w.put<std::uint32_t>(static_cast<std::uint32_t>(c.tensors.size()));
    for (const auto& t : c.tensors) {
        w.put<std::uint16_t>(static_cast<std::uint16_t>(t.name.size()));
        w.put_bytes(t.name);
        w.put<std::uint32_t>(2);
        w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.rows()));
        w.put<std::uint64_t>(static_cast<std::uint64_t>(t.value.cols()));
        for (Eigen::Index i = 0; i < t.value.size(); ++i) w.put<float>(static_cast<float>(t.value.data()[i]));
    }
    return w.take();
}

inline Checkpoint decode_checkpoint(std::string_view bytes, const std::string& source = "checkpoint") {
    ByteReader r(bytes, source);
    if (r.get_bytes(4) != "MRNC") fail(ErrorKind::data, source + ": bad magic");
    const auto version = r.get<std::uint32_t>();
    if (version != kCheckpointFormatVersion) {
        fail(ErrorKind::data, source + ": unsupported version " + std::to_string(version));
    }
    Checkpoint c;
    const auto mlen = r.get<std::uint64_t>();
    try {
        c.manifest = Json::parse(r.get_bytes(static_cast<std::size_t>(mlen)));
    } catch (const Json::exception& e) {
        fail(ErrorKind::data, source + ": bad manifest: " + e.what());
    }
    const auto count = r.get<std::uint32_t>();
    for (std::uint32_t i = 0; i < count; ++i) {
        NamedTensor t;
        t.name = std::string(r.get_bytes(r.get<std::uint16_t>()));
        const auto rank = r.get<std::uint32_t>();
        if (rank != 2) fail(ErrorKind::data, source + ": tensor " + t.name + " has rank " + std::to_string(rank));
        const auto rows = r.get<std::uint64_t>();
        const auto cols = r.get<std::uint64_t>();
        t.value.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(cols));
        for (Eigen::Index k = 0; k < t.value.size(); ++k) t.value.data()[k] = r.get<float>();
        c.tensors.push_back(std::move(t));
    }
    if (!r.at_end()) fail(ErrorKind::data, source + ": trailing bytes");
    return c;
}

inline void save_checkpoint(const std::filesystem::path& path, const Checkpoint& c) {
    write_file_atomic(path, encode_checkpoint(c));
}

inline Checkpoint load_checkpoint(const std::filesystem::path& path) {
    return decode_checkpoint(read_file(path), path.string());
}

/// Rounds every tensor through f32, matching what a checkpoint round trip yields.
inline void round_to_f32(ParamStore& store) {
    for (auto& t : store) {
        t.value = t.value.unaryExpr([](Real v) { return static_cast<Real>(static_cast<float>(v)); });
    }
}

}  // namespace mrnet

#endif  // MRNET_IO_HPP
