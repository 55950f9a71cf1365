#include "dpfa/checkpoint.hpp"

namespace dpfa {
namespace detail {

void check_header(std::istream& is) {
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("checkpoint: bad magic, not a checkpoint file");
    const uint32_t version = read_pod<uint32_t>(is, "version");
    if (version != kCheckpointVersion)
        throw std::runtime_error("checkpoint: version " + std::to_string(version) +
                                 " unsupported, expected " + std::to_string(kCheckpointVersion));
}

CheckpointInfo read_info(std::istream& is) {
    CheckpointInfo info;
    info.precision_bits = read_pod<uint32_t>(is, "precision");
    info.epoch = read_pod<int64_t>(is, "epoch");
    const uint32_t meta_count = read_pod<uint32_t>(is, "metadata count");
    for (uint32_t i = 0; i < meta_count; ++i) {
        std::string k = read_string(is, "metadata key");
        info.meta[k] = read_string(is, "metadata value");
    }
    return info;
}

}  // namespace detail

CheckpointInfo probe_checkpoint(const std::filesystem::path& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint: cannot open " + path.string());
    detail::check_header(is);
    return detail::read_info(is);
}

}  // namespace dpfa
