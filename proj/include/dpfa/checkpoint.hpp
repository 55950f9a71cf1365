#pragma once

#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>

#include "dpfa/optimizer.hpp"

namespace dpfa {

// Versioned binary container: model metadata, named parameter tensors with
// shapes, optional optimizer moments, and the RNG state. Payload precision is
// recorded; loading into a model of the other precision is rejected.
inline constexpr char kCheckpointMagic[8] = {'D', 'P', 'F', 'A', 'C', 'K', 'P', 'T'};
inline constexpr uint32_t kCheckpointVersion = 1;

struct CheckpointInfo {
    uint32_t precision_bits = 0;
    int64_t epoch = 0;
    std::map<std::string, std::string> meta;
};

// Reads header and metadata only.
CheckpointInfo probe_checkpoint(const std::filesystem::path& path);

namespace detail {

template <typename V>
void write_pod(std::ostream& os, const V& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <typename V>
V read_pod(std::istream& is, const char* what) {
    V v;
    is.read(reinterpret_cast<char*>(&v), sizeof(V));
    if (!is) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
    return v;
}

inline void write_string(std::ostream& os, const std::string& s) {
    write_pod<uint32_t>(os, static_cast<uint32_t>(s.size()));
    os.write(s.data(), static_cast<std::streamsize>(s.size()));
}

inline std::string read_string(std::istream& is, const char* what) {
    const uint32_t len = read_pod<uint32_t>(is, what);
    std::string s(len, '\0');
    is.read(s.data(), len);
    if (!is) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
    return s;
}

template <typename T>
void write_payload(std::ostream& os, const std::vector<T>& v) {
    os.write(reinterpret_cast<const char*>(v.data()),
             static_cast<std::streamsize>(v.size() * sizeof(T)));
}

template <typename T>
void read_payload(std::istream& is, std::vector<T>& v, const char* what) {
    is.read(reinterpret_cast<char*>(v.data()), static_cast<std::streamsize>(v.size() * sizeof(T)));
    if (!is) throw std::runtime_error(std::string("checkpoint: truncated while reading ") + what);
}

void check_header(std::istream& is);
CheckpointInfo read_info(std::istream& is);

}  // namespace detail

template <typename T>
void save_checkpoint(const std::filesystem::path& path, const std::vector<ParamRef<T>>& params,
                     const AdamState<T>* opt, int64_t epoch, const std::string& rng_state,
                     const std::map<std::string, std::string>& meta) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("checkpoint: cannot write " + path.string());
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod<uint32_t>(os, kCheckpointVersion);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(sizeof(T) * 8));
    detail::write_pod<int64_t>(os, epoch);
    detail::write_pod<uint32_t>(os, static_cast<uint32_t>(meta.size()));
    for (const auto& [k, v] : meta) {
        detail::write_string(os, k);
        detail::write_string(os, v);
    }
    detail::write_string(os, rng_state);
    detail::write_pod<uint64_t>(os, static_cast<uint64_t>(params.size()));
    for (const auto& p : params) {
        detail::write_string(os, p.name);
        detail::write_pod<uint32_t>(os, static_cast<uint32_t>(p.tensor->shape.size()));
        for (int64_t d : p.tensor->shape) detail::write_pod<int64_t>(os, d);
        detail::write_payload(os, p.tensor->data);
    }
    detail::write_pod<uint8_t>(os, opt ? 1 : 0);
    if (opt) {
        detail::write_pod<int64_t>(os, opt->step);
        for (size_t i = 0; i < params.size(); ++i) {
            detail::write_payload(os, opt->slots[i].m);
            detail::write_payload(os, opt->slots[i].v);
        }
    }
    if (!os) throw std::runtime_error("checkpoint: write failed for " + path.string());
}

template <typename T>
struct LoadedCheckpoint {
    CheckpointInfo info;
    std::string rng_state;
    bool has_opt = false;
    AdamState<T> opt;
};

// Fills the referenced tensors in place; names and shapes must match the
// model exactly, in order.
template <typename T>
LoadedCheckpoint<T> load_checkpoint(const std::filesystem::path& path,
                                    const std::vector<ParamRef<T>>& params) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    detail::check_header(is);
    LoadedCheckpoint<T> out;
    out.info = detail::read_info(is);
    if (out.info.precision_bits != sizeof(T) * 8)
        throw std::runtime_error("checkpoint: holds " + std::to_string(out.info.precision_bits) +
                                 "-bit payloads, model expects " + std::to_string(sizeof(T) * 8));
    out.rng_state = detail::read_string(is, "rng state");
    const uint64_t count = detail::read_pod<uint64_t>(is, "parameter count");
    if (count != params.size())
        throw std::runtime_error("checkpoint: holds " + std::to_string(count) +
                                 " tensors, model has " + std::to_string(params.size()));
    for (const auto& p : params) {
        const std::string name = detail::read_string(is, "tensor name");
        if (name != p.name)
            throw std::runtime_error("checkpoint: tensor '" + name + "' where model expects '" +
                                     p.name + "'");
        const uint32_t ndim = detail::read_pod<uint32_t>(is, "tensor rank");
        Shape shape(ndim);
        for (uint32_t d = 0; d < ndim; ++d) shape[d] = detail::read_pod<int64_t>(is, "tensor extent");
        if (shape != p.tensor->shape)
            throw std::runtime_error("checkpoint: tensor '" + name + "' has shape " +
                                     shape_str(shape) + ", model expects " +
                                     shape_str(p.tensor->shape));
        detail::read_payload(is, p.tensor->data, p.name.c_str());
    }
    out.has_opt = detail::read_pod<uint8_t>(is, "optimizer flag") != 0;
    if (out.has_opt) {
        out.opt.step = detail::read_pod<int64_t>(is, "optimizer step");
        out.opt.slots.resize(params.size());
        for (size_t i = 0; i < params.size(); ++i) {
            out.opt.slots[i].m.assign(params[i].tensor->data.size(), T(0));
            out.opt.slots[i].v.assign(params[i].tensor->data.size(), T(0));
            detail::read_payload(is, out.opt.slots[i].m, "optimizer m");
            detail::read_payload(is, out.opt.slots[i].v, "optimizer v");
        }
    }
    return out;
}

}  // namespace dpfa
