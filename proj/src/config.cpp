#include "dpfa/config.hpp"

#include <algorithm>
#include <fstream>
#include <sstream>

namespace dpfa {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::istringstream is(s);
    std::string item;
    while (std::getline(is, item, ',')) {
        item = trim(item);
        if (!item.empty()) out.push_back(item);
    }
    return out;
}

}  // namespace

KeyValueFile KeyValueFile::parse(const std::string& text, const std::string& origin) {
    KeyValueFile kv;
    std::istringstream is(text);
    std::string line;
    int64_t lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            throw std::runtime_error(origin + ":" + std::to_string(lineno) +
                                     ": expected 'key = value', got '" + line + "'");
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": empty key");
        if (kv.values.count(key))
            throw std::runtime_error(origin + ":" + std::to_string(lineno) + ": duplicate key '" +
                                     key + "'");
        kv.values[key] = value;
    }
    return kv;
}

KeyValueFile KeyValueFile::parse_file(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw std::runtime_error("cannot open config " + path.string());
    std::ostringstream buf;
    buf << in.rdbuf();
    return parse(buf.str(), path.string());
}

std::string KeyValueFile::get(const std::string& key, const std::string& fallback) const {
    const auto it = values.find(key);
    return it == values.end() ? fallback : it->second;
}

int64_t KeyValueFile::get_int(const std::string& key, int64_t fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        const int64_t v = std::stoll(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' wants an integer, got '" + it->second + "'");
    }
}

double KeyValueFile::get_double(const std::string& key, double fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    try {
        size_t pos = 0;
        const double v = std::stod(it->second, &pos);
        if (pos != it->second.size()) throw std::invalid_argument("");
        return v;
    } catch (...) {
        throw std::runtime_error("config: key '" + key + "' wants a number, got '" + it->second + "'");
    }
}

bool KeyValueFile::get_bool(const std::string& key, bool fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    if (it->second == "true" || it->second == "1" || it->second == "on") return true;
    if (it->second == "false" || it->second == "0" || it->second == "off") return false;
    throw std::runtime_error("config: key '" + key + "' wants true/false, got '" + it->second + "'");
}

std::vector<int64_t> KeyValueFile::get_int_list(const std::string& key,
                                                std::vector<int64_t> fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::vector<int64_t> out;
    for (const auto& item : split_list(it->second)) {
        try {
            out.push_back(std::stoll(item));
        } catch (...) {
            throw std::runtime_error("config: key '" + key + "' wants integers, got '" + item + "'");
        }
    }
    return out;
}

std::vector<double> KeyValueFile::get_double_list(const std::string& key,
                                                  std::vector<double> fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    std::vector<double> out;
    for (const auto& item : split_list(it->second)) {
        try {
            out.push_back(std::stod(item));
        } catch (...) {
            throw std::runtime_error("config: key '" + key + "' wants numbers, got '" + item + "'");
        }
    }
    return out;
}

std::vector<std::string> KeyValueFile::get_str_list(const std::string& key,
                                                    std::vector<std::string> fallback) const {
    const auto it = values.find(key);
    if (it == values.end()) return fallback;
    return split_list(it->second);
}

void KeyValueFile::require_known(const std::vector<std::string>& known) const {
    for (const auto& [key, value] : values)
        if (std::find(known.begin(), known.end(), key) == known.end())
            throw std::runtime_error("config: unknown key '" + key + "'");
}

namespace {

const std::vector<std::string>& run_config_keys() {
    static const std::vector<std::string> keys = {
        "seed",          "precision",    "k",           "widths",       "d_pos",
        "emb_width",     "head_widths",  "cls_widths",  "slope",        "channel_softmax",
        "bf.mode",       "lambda",       "background",  "bf.net1",      "batch_size",
        "epochs",        "lr",           "decay",       "decay_every",  "adam_beta1",
        "adam_beta2",    "adam_epsilon", "class_weighting", "eval_every",
        "train_dir",     "test_dir",     "block_size",  "points_per_block", "min_points",
        "points_per_cloud", "out_dir",   "resume",
    };
    return keys;
}

}  // namespace

RunConfig RunConfig::from_kv(const KeyValueFile& kv) {
    kv.require_known(run_config_keys());
    RunConfig c;
    c.seed = static_cast<uint64_t>(kv.get_int("seed", static_cast<int64_t>(c.seed)));
    c.precision = static_cast<int>(kv.get_int("precision", c.precision));
    c.k = static_cast<int>(kv.get_int("k", c.k));
    c.widths = kv.get_int_list("widths", c.widths);
    c.d_pos = kv.get_int("d_pos", c.d_pos);
    c.emb_width = kv.get_int("emb_width", c.emb_width);
    c.head_widths = kv.get_int_list("head_widths", c.head_widths);
    c.cls_widths = kv.get_int_list("cls_widths", c.cls_widths);
    c.slope = kv.get_double("slope", c.slope);
    c.channel_softmax = kv.get_bool("channel_softmax", c.channel_softmax);
    c.bf_mode = bf_mode_from_name(kv.get("bf.mode", bf_mode_name(c.bf_mode)));
    c.lambda = kv.get_double("lambda", c.lambda);
    c.background_classes = kv.get_str_list("background", c.background_classes);
    c.net1_checkpoint = kv.get("bf.net1", c.net1_checkpoint);
    c.batch_size = kv.get_int("batch_size", c.batch_size);
    c.epochs = kv.get_int("epochs", c.epochs);
    c.lr = kv.get_double("lr", c.lr);
    c.decay = kv.get_double("decay", c.decay);
    c.decay_every = kv.get_int("decay_every", c.decay_every);
    c.adam_beta1 = kv.get_double("adam_beta1", c.adam_beta1);
    c.adam_beta2 = kv.get_double("adam_beta2", c.adam_beta2);
    c.adam_epsilon = kv.get_double("adam_epsilon", c.adam_epsilon);
    c.class_weighting = kv.get_bool("class_weighting", c.class_weighting);
    c.eval_every = kv.get_int("eval_every", c.eval_every);
    c.train_dir = kv.get("train_dir", c.train_dir);
    c.test_dir = kv.get("test_dir", c.test_dir);
    c.block_size = kv.get_double("block_size", c.block_size);
    c.points_per_block = kv.get_int("points_per_block", c.points_per_block);
    c.min_points = kv.get_int("min_points", c.min_points);
    c.points_per_cloud = kv.get_int("points_per_cloud", c.points_per_cloud);
    c.out_dir = kv.get("out_dir", c.out_dir);
    c.resume = kv.get("resume", c.resume);
    c.validate();
    return c;
}

RunConfig RunConfig::from_file(const std::filesystem::path& path) {
    return from_kv(KeyValueFile::parse_file(path));
}

void RunConfig::validate() const {
    if (precision != 32 && precision != 64)
        throw std::runtime_error("config: precision must be 32 or 64");
    if (k < 1) throw std::runtime_error("config: k must be >= 1");
    if (widths.empty()) throw std::runtime_error("config: widths must not be empty");
    for (int64_t w : widths)
        if (w < 1) throw std::runtime_error("config: widths must be positive");
    if (lambda < 0.0 || lambda > 1.0) throw std::runtime_error("config: lambda must be in [0, 1]");
    if (batch_size < 1) throw std::runtime_error("config: batch_size must be >= 1");
    if (epochs < 1) throw std::runtime_error("config: epochs must be >= 1");
    if (lr <= 0.0) throw std::runtime_error("config: lr must be positive");
    if (decay <= 0.0 || decay > 1.0) throw std::runtime_error("config: decay must be in (0, 1]");
    if (decay_every < 1) throw std::runtime_error("config: decay_every must be >= 1");
    if (eval_every < 1) throw std::runtime_error("config: eval_every must be >= 1");
    if (block_size <= 0.0) throw std::runtime_error("config: block_size must be positive");
    if (points_per_block < 1) throw std::runtime_error("config: points_per_block must be >= 1");
    if (points_per_cloud < 1) throw std::runtime_error("config: points_per_cloud must be >= 1");
    if (min_points < 1) throw std::runtime_error("config: min_points must be >= 1");
    if (bf_mode == BFConfig::Mode::two_stage && net1_checkpoint.empty())
        throw std::runtime_error("config: bf.mode=two_stage needs bf.net1 (a checkpoint or 'oracle')");
}

std::vector<int32_t> RunConfig::background_ids(const std::vector<std::string>& class_table) const {
    std::vector<int32_t> ids;
    for (const auto& name : background_classes) {
        const auto it = std::find(class_table.begin(), class_table.end(), name);
        if (it == class_table.end())
            throw std::runtime_error("config: background class '" + name +
                                     "' is not in the dataset class table");
        ids.push_back(static_cast<int32_t>(it - class_table.begin()));
    }
    return ids;
}

BFConfig RunConfig::bf(const std::vector<std::string>& class_table) const {
    BFConfig cfg;
    cfg.mode = bf_mode;
    cfg.lambda = lambda;
    cfg.background_classes = background_ids(class_table);
    if (cfg.mode != BFConfig::Mode::off)
        cfg.validate(static_cast<int32_t>(class_table.size()));
    return cfg;
}

}  // namespace dpfa
