#pragma once

// Checkpoint archive: flat name -> record map. Model parameters and BN
// buffers are stored as CMT1 records; "config" holds the ModelConfig as
// key=value text. Round-trips are bit-exact.

#include <map>
#include <sstream>

#include "cliffm/cmt.hpp"
#include "cliffm/model.hpp"

namespace cliffm {

struct Archive {
    // std::map keeps entry order deterministic.
    std::map<std::string, std::vector<u8>> entries;

    std::vector<u8> encode() const {
        std::vector<u8> out;
        out.insert(out.end(), {'C', 'M', 'A', 'R'});
        detail::put_u64(out, 1);  // version
        detail::put_u64(out, entries.size());
        for (const auto& [name, payload] : entries) {
            detail::put_u64(out, name.size());
            out.insert(out.end(), name.begin(), name.end());
            detail::put_u64(out, payload.size());
            out.insert(out.end(), payload.begin(), payload.end());
        }
        return out;
    }

    static Archive decode(const std::vector<u8>& bytes) {
        if (bytes.size() < 20 || std::memcmp(bytes.data(), "CMAR", 4) != 0)
            throw IoError("archive: bad magic");
        size_t off = 4;
        const u64 version = detail::get_u64(bytes.data() + off);
        off += 8;
        if (version != 1) throw IoError("archive: unsupported version");
        const u64 count = detail::get_u64(bytes.data() + off);
        off += 8;
        Archive a;
        for (u64 i = 0; i < count; ++i) {
            if (bytes.size() < off + 8) throw IoError("archive: truncated");
            const u64 nlen = detail::get_u64(bytes.data() + off);
            off += 8;
            if (bytes.size() < off + nlen + 8) throw IoError("archive: truncated");
            std::string name(reinterpret_cast<const char*>(bytes.data() + off),
                             static_cast<size_t>(nlen));
            off += nlen;
            const u64 plen = detail::get_u64(bytes.data() + off);
            off += 8;
            if (bytes.size() < off + plen) throw IoError("archive: truncated");
            a.entries[name] =
                std::vector<u8>(bytes.begin() + static_cast<std::ptrdiff_t>(off),
                                bytes.begin() + static_cast<std::ptrdiff_t>(off + plen));
            off += plen;
        }
        if (off != bytes.size()) throw IoError("archive: trailing bytes");
        return a;
    }

    void save(const std::string& path) const { write_file_bytes(path, encode()); }
    static Archive load(const std::string& path) { return decode(read_file_bytes(path)); }
};

inline std::string model_config_to_text(const ModelConfig& c) {
    std::ostringstream os;
    os << "input_size=" << c.input_size << "\n";
    os << "dim=" << c.dim << "\n";
    os << "stem_width=" << c.stem_width << "\n";
    os << "num_self_blocks=" << c.num_self_blocks << "\n";
    os << "use_energy=" << (c.use_energy ? 1 : 0) << "\n";
    os << "drop_path_max=" << c.drop_path_max << "\n";
    os << "head_dropout=" << c.head_dropout << "\n";
    os << "num_classes=" << c.num_classes << "\n";
    os << "high_grid=" << c.high_grid << "\n";
    os << "low_grid=" << c.low_grid << "\n";
    return os.str();
}

inline ModelConfig model_config_from_text(const std::string& text) {
    ModelConfig c;
    std::istringstream is(text);
    std::string line;
    while (std::getline(is, line)) {
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) throw IoError("model config: malformed line '" + line + "'");
        const std::string k = line.substr(0, eq), v = line.substr(eq + 1);
        if (k == "input_size") c.input_size = std::stoi(v);
        else if (k == "dim") c.dim = std::stoll(v);
        else if (k == "stem_width") c.stem_width = std::stoll(v);
        else if (k == "num_self_blocks") c.num_self_blocks = std::stoi(v);
        else if (k == "use_energy") c.use_energy = std::stoi(v) != 0;
        else if (k == "drop_path_max") c.drop_path_max = std::stod(v);
        else if (k == "head_dropout") c.head_dropout = std::stod(v);
        else if (k == "num_classes") c.num_classes = std::stoi(v);
        else if (k == "high_grid") c.high_grid = std::stoll(v);
        else if (k == "low_grid") c.low_grid = std::stoll(v);
        else throw IoError("model config: unknown key '" + k + "'");
    }
    return c;
}

template <typename T>
void save_checkpoint(const std::string& path, CliffordM<T>& m,
                     const std::map<std::string, std::string>& extra_text = {}) {
    Archive a;
    const std::string cfg = model_config_to_text(m.cfg);
    a.entries["config"] = std::vector<u8>(cfg.begin(), cfg.end());
    for_each_param(m, [&](const std::string& name, Param<T>& p) {
        a.entries["param/" + name] = cmt_encode(p.value);
    });
    for_each_buffer(m, [&](const std::string& name, TensorT<T>& b) {
        a.entries["buffer/" + name] = cmt_encode(b);
    });
    for (const auto& [k, v] : extra_text) a.entries[k] = std::vector<u8>(v.begin(), v.end());
    a.save(path);
}

template <typename T>
CliffordM<T> load_checkpoint(const std::string& path) {
    Archive a = Archive::load(path);
    auto it = a.entries.find("config");
    if (it == a.entries.end()) throw IoError("checkpoint: missing config entry");
    ModelConfig cfg =
        model_config_from_text(std::string(it->second.begin(), it->second.end()));
    CliffordM<T> m = build_model<T>(cfg, /*seed=*/0);
    size_t used = 0;
    for_each_param(m, [&](const std::string& name, Param<T>& p) {
        auto e = a.entries.find("param/" + name);
        if (e == a.entries.end()) throw IoError("checkpoint: missing parameter " + name);
        TensorT<T> t = cmt_decode<T>(e->second);
        if (t.shape != p.value.shape)
            throw IoError("checkpoint: shape mismatch for " + name);
        p.value = std::move(t);
        used++;
    });
    for_each_buffer(m, [&](const std::string& name, TensorT<T>& b) {
        auto e = a.entries.find("buffer/" + name);
        if (e == a.entries.end()) throw IoError("checkpoint: missing buffer " + name);
        TensorT<T> t = cmt_decode<T>(e->second);
        if (t.shape != b.shape) throw IoError("checkpoint: shape mismatch for " + name);
        b = std::move(t);
        used++;
    });
    (void)used;
    return m;
}

}  // namespace cliffm
