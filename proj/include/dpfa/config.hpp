#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "dpfa/bf.hpp"
#include "dpfa/networks.hpp"

namespace dpfa {

// Flat `key = value` text with `#` comments.
struct KeyValueFile {
    std::map<std::string, std::string> values;

    static KeyValueFile parse(const std::string& text, const std::string& origin = "<string>");
    static KeyValueFile parse_file(const std::filesystem::path& path);

    bool has(const std::string& key) const { return values.count(key) != 0; }
    std::string get(const std::string& key, const std::string& fallback) const;
    int64_t get_int(const std::string& key, int64_t fallback) const;
    double get_double(const std::string& key, double fallback) const;
    bool get_bool(const std::string& key, bool fallback) const;
    std::vector<int64_t> get_int_list(const std::string& key, std::vector<int64_t> fallback) const;
    std::vector<double> get_double_list(const std::string& key, std::vector<double> fallback) const;
    std::vector<std::string> get_str_list(const std::string& key,
                                          std::vector<std::string> fallback) const;

    // Throws listing any key outside `known` (typo protection).
    void require_known(const std::vector<std::string>& known) const;
};

enum class TrainTask { seg, cls, bf_pretrain };

// Everything one training or evaluation run needs; validated up front.
struct RunConfig {
    uint64_t seed = 1;
    int precision = 32;  // 32 or 64

    // model
    int k = 20;
    std::vector<int64_t> widths = {64, 64, 64};
    int64_t d_pos = 0;  // 0: track the layer width
    int64_t emb_width = 1024;
    std::vector<int64_t> head_widths = {512, 256};
    std::vector<int64_t> cls_widths = {};
    double slope = 0.2;
    bool channel_softmax = false;

    // background-foreground
    BFConfig::Mode bf_mode = BFConfig::Mode::off;
    double lambda = 0.2;
    std::vector<std::string> background_classes = {"ceiling", "floor", "wall"};
    std::string net1_checkpoint;  // path, or "oracle" for ground-truth one-hot

    // optimization
    int64_t batch_size = 5;
    int64_t epochs = 100;
    double lr = 0.001;
    double decay = 0.7;
    int64_t decay_every = 20;
    double adam_beta1 = 0.9;
    double adam_beta2 = 0.999;
    double adam_epsilon = 1e-8;
    bool class_weighting = false;  // frequency-inverse weights for the seg loss
    int64_t eval_every = 1;

    // data
    std::string train_dir;
    std::string test_dir;
    double block_size = 1.0;
    int64_t points_per_block = 4096;
    int64_t min_points = 32;
    int64_t points_per_cloud = 1024;  // classification resampling size

    std::string out_dir = ".";
    std::string resume;  // checkpoint path

    static RunConfig from_kv(const KeyValueFile& kv);
    static RunConfig from_file(const std::filesystem::path& path);
    void validate() const;

    // Background class names resolved against a class table.
    std::vector<int32_t> background_ids(const std::vector<std::string>& class_table) const;
    BFConfig bf(const std::vector<std::string>& class_table) const;
};

}  // namespace dpfa
