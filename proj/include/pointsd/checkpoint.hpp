#pragma once

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "pointsd/nn/parameters.hpp"
#include "pointsd/synthdata.hpp"

// Named-parameter archive. `<name>.ckpt` holds a text header, one line per entry
// (`name shape dtype offset length`), a blank line, then the raw little-endian
// blobs back to back. `<name>.meta.txt` carries the stage, epoch, config hash and
// loss history.
namespace pointsd::training {

namespace fs = std::filesystem;

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct CheckpointMeta {
    std::string stage;
    std::size_t epoch = 0;
    std::string config_hash;
    std::vector<double> loss_history;
};

struct CheckpointEntry {
    std::string name;
    Shape shape;
    Tensor<float> value;
};

struct Checkpoint {
    std::vector<CheckpointEntry> entries;
    CheckpointMeta meta;

    const CheckpointEntry* find(const std::string& name) const {
        for (const auto& e : entries)
            if (e.name == name) return &e;
        return nullptr;
    }
};

inline fs::path meta_path(const fs::path& ckpt) {
    fs::path p = ckpt;
    p.replace_extension(".meta.txt");
    return p;
}

inline std::string encode_checkpoint(const nn::ParameterStore<float>& store) {
    std::string header, blob;
    std::size_t offset = 0;
    for (const auto& p : store) {
        const std::size_t length = p->value.size() * 4;
        header += p->name + " " + shape_string(p->value.shape()) + " f32 " + std::to_string(offset) + " " +
                  std::to_string(length) + "\n";
        for (float v : p->value.storage()) synthdata::detail::put_f32le(blob, v);
        offset += length;
    }
    return header + "\n" + blob;
}

inline std::string encode_meta(const CheckpointMeta& meta) {
    std::ostringstream os;
    os << "stage = " << meta.stage << "\n";
    os << "epoch = " << meta.epoch << "\n";
    os << "config_hash = " << meta.config_hash << "\n";
    os << "epoch,loss\n";
    os.precision(17);
    for (std::size_t i = 0; i < meta.loss_history.size(); ++i) os << i + 1 << "," << meta.loss_history[i] << "\n";
    return os.str();
}

inline CheckpointMeta decode_meta(const std::string& text) {
    CheckpointMeta meta;
    std::istringstream in(text);
    std::string line;
    bool csv = false;
    while (std::getline(in, line)) {
        if (line.empty()) continue;
        if (csv) {
            const auto comma = line.find(',');
            if (comma == std::string::npos) throw CheckpointError("meta: malformed loss line '" + line + "'");
            meta.loss_history.push_back(std::stod(line.substr(comma + 1)));
            continue;
        }
        if (line == "epoch,loss") {
            csv = true;
            continue;
        }
        const auto eq = line.find(" = ");
        if (eq == std::string::npos) throw CheckpointError("meta: malformed line '" + line + "'");
        const std::string key = line.substr(0, eq), value = line.substr(eq + 3);
        if (key == "stage") meta.stage = value;
        else if (key == "epoch") meta.epoch = std::stoul(value);
        else if (key == "config_hash") meta.config_hash = value;
        else throw CheckpointError("meta: unknown key '" + key + "'");
    }
    return meta;
}

inline Shape parse_shape(const std::string& s) {
    Shape shape;
    std::size_t pos = 0;
    while (pos <= s.size()) {
        const auto x = s.find('x', pos);
        const std::string part = s.substr(pos, x == std::string::npos ? std::string::npos : x - pos);
        if (part.empty() || part.find_first_not_of("0123456789") != std::string::npos) {
            throw CheckpointError("checkpoint: malformed shape '" + s + "'");
        }
        shape.push_back(std::stoul(part));
        if (x == std::string::npos) break;
        pos = x + 1;
    }
    return shape;
}

/// Parses and validates an archive: unique names, known dtype, contiguous offsets,
/// lengths matching shapes, and a blob region of exactly the declared size.
inline Checkpoint decode_checkpoint(const std::string& bytes, const std::string& origin = "checkpoint") {
    const auto end = bytes.find("\n\n");
    if (end == std::string::npos) throw CheckpointError(origin + ": header has no blank-line terminator");
    Checkpoint ck;
    std::istringstream in(bytes.substr(0, end + 1));
    std::string line;
    std::size_t expected_offset = 0;
    std::map<std::string, bool> seen;
    for (std::size_t lineno = 1; std::getline(in, line); ++lineno) {
        std::istringstream ls(line);
        std::string name, shape, dtype, extra;
        std::size_t offset = 0, length = 0;
        if (!(ls >> name >> shape >> dtype >> offset >> length) || (ls >> extra)) {
            throw CheckpointError(origin + ": malformed header line " + std::to_string(lineno));
        }
        if (seen[name]) throw CheckpointError(origin + ": duplicate entry '" + name + "'");
        seen[name] = true;
        if (dtype != "f32") throw CheckpointError(origin + ": entry '" + name + "' has unsupported dtype " + dtype);
        CheckpointEntry e;
        e.name = name;
        e.shape = parse_shape(shape);
        if (length != numel(e.shape) * 4) {
            throw CheckpointError(origin + ": entry '" + name + "' length " + std::to_string(length) +
                                  " disagrees with shape " + shape);
        }
        if (offset != expected_offset) {
            throw CheckpointError(origin + ": entry '" + name + "' offset " + std::to_string(offset) + ", expected " +
                                  std::to_string(expected_offset));
        }
        expected_offset += length;
        ck.entries.push_back(std::move(e));
    }
    const std::size_t blob_start = end + 2;
    if (bytes.size() - blob_start != expected_offset) {
        throw CheckpointError(origin + ": blob region holds " + std::to_string(bytes.size() - blob_start) +
                              " bytes, header declares " + std::to_string(expected_offset));
    }
    const auto* base = reinterpret_cast<const unsigned char*>(bytes.data()) + blob_start;
    std::size_t offset = 0;
    for (auto& e : ck.entries) {
        e.value = Tensor<float>(e.shape);
        for (auto& v : e.value.storage()) {
            v = synthdata::detail::get_f32le(base + offset);
            offset += 4;
        }
    }
    return ck;
}

inline void save_checkpoint(const nn::ParameterStore<float>& store, const CheckpointMeta& meta, const fs::path& path) {
    std::error_code ec;
    if (path.has_parent_path()) fs::create_directories(path.parent_path(), ec);
    synthdata::detail::write_atomic(path, encode_checkpoint(store));
    synthdata::detail::write_atomic(meta_path(path), encode_meta(meta));
}

inline Checkpoint load_checkpoint(const fs::path& path) {
    if (!fs::exists(path)) throw CheckpointError("missing checkpoint: " + path.string());
    Checkpoint ck = decode_checkpoint(synthdata::detail::read_file(path), path.string());
    if (fs::exists(meta_path(path))) ck.meta = decode_meta(synthdata::detail::read_file(meta_path(path)));
    return ck;
}

inline bool has_prefix(const std::string& name, const std::vector<std::string>& prefixes) {
    if (prefixes.empty()) return true;
    for (const auto& p : prefixes)
        if (name.compare(0, p.size(), p) == 0) return true;
    return false;
}

/// Copies entries into the store. Every store parameter under `prefixes` (all when
/// empty) must exist in the archive with the same shape, and every archive entry
/// under `prefixes` must exist in the store; the first offender is named.
inline void restore(nn::ParameterStore<float>& store, const Checkpoint& ck, const std::vector<std::string>& prefixes = {}) {
    for (const auto& p : store) {
        if (!has_prefix(p->name, prefixes)) continue;
        const auto* e = ck.find(p->name);
        if (!e) throw CheckpointError("checkpoint does not match model: missing entry '" + p->name + "'");
        if (e->shape != p->value.shape()) {
            throw CheckpointError("checkpoint does not match model: entry '" + p->name + "' has shape " +
                                  shape_string(e->shape) + ", model expects " + shape_string(p->value.shape()));
        }
    }
    for (const auto& e : ck.entries) {
        if (has_prefix(e.name, prefixes) && !store.find(e.name)) {
            throw CheckpointError("checkpoint does not match model: unexpected entry '" + e.name + "'");
        }
    }
    for (auto& p : store)
        if (has_prefix(p->name, prefixes)) p->value = ck.find(p->name)->value;
}

}  // namespace pointsd::training
