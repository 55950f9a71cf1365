#include "dpfa/train.hpp"

#include <algorithm>
#include <chrono>
#include <ostream>
#include <set>
#include <sstream>

#include "dpfa/bf.hpp"
#include "dpfa/synthetic.hpp"

namespace dpfa {

namespace {

namespace fs = std::filesystem;
using Clock = std::chrono::steady_clock;

constexpr uint64_t kInitStream = 0x696e6974;
constexpr uint64_t kRunStream = 0x72756e;
constexpr uint64_t kDataStream = 0x64617461;

double ms_since(Clock::time_point t0) {
    return std::chrono::duration<double, std::milli>(Clock::now() - t0).count();
}

std::vector<fs::path> sorted_scene_files(const fs::path& dir) {
    if (!fs::is_directory(dir)) throw std::runtime_error("not a directory: " + dir.string());
    std::vector<fs::path> files;
    for (const auto& entry : fs::directory_iterator(dir))
        if (entry.is_regular_file() && entry.path().extension() == ".txt")
            files.push_back(entry.path());
    std::sort(files.begin(), files.end());
    if (files.empty()) throw std::runtime_error("no .txt scenes under " + dir.string());
    return files;
}

std::string join_names(const std::vector<std::string>& names) {
    std::string out;
    for (size_t i = 0; i < names.size(); ++i) out += (i ? "," : "") + names[i];
    return out;
}

std::vector<std::string> split_names(const std::string& joined) {
    std::vector<std::string> out;
    std::istringstream is(joined);
    std::string item;
    while (std::getline(is, item, ','))
        if (!item.empty()) out.push_back(item);
    return out;
}

std::string join_ints(const std::vector<int64_t>& v) {
    std::string out;
    for (size_t i = 0; i < v.size(); ++i) out += (i ? "," : "") + std::to_string(v[i]);
    return out;
}

std::vector<int64_t> split_ints(const std::string& joined) {
    std::vector<int64_t> out;
    for (const auto& s : split_names(joined)) out.push_back(std::stoll(s));
    return out;
}

// ---------------------------------------------------------------------------
// pipeline assembly

template <typename T>
struct SegPipeline {
    SegNetConfig net_cfg;
    SegNetParams<T> net;
    std::vector<std::string> class_table;  // dataset table (binary nets keep the source table)
    bool binary = false;                   // labels mapped to background/foreground
    BFConfig bf;                           // validated when mode != off or binary
    std::optional<SegNetParams<T>> net1;
    bool oracle = false;
    std::optional<BFHeadParams<T>> bf_head;
    std::vector<T> class_weights;  // empty unless frequency-inverse weighting is on

    int32_t label_space() const {
        return binary ? 2 : static_cast<int32_t>(class_table.size());
    }
    std::vector<int32_t> labels_for(const PointCloudBlock& block) const {
        if (!binary) return block.labels;
        return bf_label_map(block.labels, bf, static_cast<int32_t>(class_table.size()));
    }
};

template <typename T>
std::map<std::string, std::string> seg_meta(const SegPipeline<T>& pipe, const RunConfig& cfg,
                                            TrainTask task) {
    std::map<std::string, std::string> m;
    m["task"] = task == TrainTask::bf_pretrain ? "bf_pretrain" : "seg";
    m["classes"] = join_names(pipe.class_table);
    m["input_dim"] = std::to_string(pipe.net_cfg.input_dim);
    m["num_classes"] = std::to_string(pipe.net_cfg.num_classes);
    m["widths"] = join_ints(pipe.net_cfg.widths);
    m["d_pos"] = std::to_string(pipe.net_cfg.d_pos);
    m["emb_width"] = std::to_string(pipe.net_cfg.emb_width);
    m["head_widths"] = join_ints(pipe.net_cfg.head_widths);
    m["k"] = std::to_string(pipe.net_cfg.k);
    m["slope"] = std::to_string(pipe.net_cfg.slope);
    m["channel_softmax"] = pipe.net_cfg.channel_softmax ? "1" : "0";
    m["bf.mode"] = bf_mode_name(pipe.bf.mode);
    m["lambda"] = std::to_string(pipe.bf.lambda);
    m["background"] = join_names(cfg.background_classes);
    m["bf.net1"] = cfg.net1_checkpoint;
    m["block_size"] = std::to_string(cfg.block_size);
    return m;
}

SegNetConfig seg_config_from_meta(const CheckpointInfo& info) {
    SegNetConfig c;
    const auto& m = info.meta;
    c.input_dim = std::stoll(m.at("input_dim"));
    c.num_classes = std::stoll(m.at("num_classes"));
    c.widths = split_ints(m.at("widths"));
    c.d_pos = std::stoll(m.at("d_pos"));
    c.emb_width = std::stoll(m.at("emb_width"));
    c.head_widths = split_ints(m.at("head_widths"));
    c.k = static_cast<int>(std::stoll(m.at("k")));
    c.slope = std::stod(m.at("slope"));
    c.channel_softmax = m.at("channel_softmax") == "1";
    return c;
}

template <typename T>
SegNetParams<T> load_seg_net(const fs::path& ckpt, CheckpointInfo* info_out = nullptr) {
    const CheckpointInfo info = probe_checkpoint(ckpt);
    if (info.precision_bits != sizeof(T) * 8)
        throw std::runtime_error("checkpoint " + ckpt.string() + " holds " +
                                 std::to_string(info.precision_bits) + "-bit payloads");
    Rng throwaway(0);
    SegNetParams<T> net = make_seg_net<T>(seg_config_from_meta(info), throwaway);
    std::vector<ParamRef<T>> refs;
    collect_params(net, "seg", refs);
    load_checkpoint(ckpt, refs);
    if (info_out) *info_out = info;
    return net;
}

template <typename T>
SegPipeline<T> build_pipeline(const RunConfig& cfg, TrainTask task,
                              const std::vector<std::string>& class_table) {
    SegPipeline<T> pipe;
    pipe.class_table = class_table;
    pipe.binary = task == TrainTask::bf_pretrain;

    pipe.bf.mode = pipe.binary ? BFConfig::Mode::off : cfg.bf_mode;
    pipe.bf.lambda = cfg.lambda;
    if (pipe.binary || cfg.bf_mode != BFConfig::Mode::off) {
        pipe.bf.background_classes = cfg.background_ids(class_table);
        BFConfig check = pipe.bf;
        check.mode = BFConfig::Mode::regularizer;  // force the subset validation
        check.validate(static_cast<int32_t>(class_table.size()));
    }

    pipe.net_cfg.input_dim = PointCloudBlock::kFeatureWidth +
                             (pipe.bf.mode == BFConfig::Mode::two_stage ? 2 : 0);
    pipe.net_cfg.num_classes = pipe.label_space();
    pipe.net_cfg.widths = cfg.widths;
    pipe.net_cfg.d_pos = cfg.d_pos;
    pipe.net_cfg.emb_width = cfg.emb_width;
    pipe.net_cfg.head_widths = cfg.head_widths;
    pipe.net_cfg.k = cfg.k;
    pipe.net_cfg.slope = cfg.slope;
    pipe.net_cfg.channel_softmax = cfg.channel_softmax;

    Rng init(Rng::mix(cfg.seed, kInitStream));
    pipe.net = make_seg_net<T>(pipe.net_cfg, init);

    if (pipe.bf.mode == BFConfig::Mode::regularizer) {
        int64_t cat = 0;
        for (int64_t w : cfg.widths) cat += w;
        pipe.bf_head = make_bf_head<T>(cfg.emb_width + cat, static_cast<T>(cfg.slope), init);
    }
    if (pipe.bf.mode == BFConfig::Mode::two_stage) {
        if (cfg.net1_checkpoint == "oracle") {
            pipe.oracle = true;
        } else {
            pipe.net1 = load_seg_net<T>(cfg.net1_checkpoint);
            if (pipe.net1->config.num_classes != 2)
                throw std::runtime_error("two_stage: first-stage checkpoint is not binary");
        }
    }
    return pipe;
}

template <typename T>
std::vector<ParamRef<T>> pipeline_params(SegPipeline<T>& pipe) {
    std::vector<ParamRef<T>> refs;
    collect_params(pipe.net, "seg", refs);
    if (pipe.bf_head) collect_params(*pipe.bf_head, "bf", refs);
    return refs;
}

// Forward of one block through the full pipeline (two-stage augmentation
// included). Returns the seg output and, in regularizer mode, the BF logits.
template <typename T>
struct PipelineForward {
    SegForward<T> seg;
    typename Graph<T>::NodeId bf_logits = -1;
};

template <typename T>
PipelineForward<T> pipeline_forward(Graph<T>& g, SegPipeline<T>& pipe, ParamBind<T>& bind,
                                    const Tensor<T>& feats, const std::vector<int32_t>& raw_labels) {
    const auto nodes = bind_seg_net(g, pipe.net, bind, "seg");
    PipelineForward<T> out;
    if (pipe.bf.mode == BFConfig::Mode::two_stage) {
        if (pipe.oracle) {
            const auto bin = bf_label_map(raw_labels, pipe.bf,
                                          static_cast<int32_t>(pipe.class_table.size()));
            out.seg = seg_forward(g, augment_features(feats, bf_onehot<T>(bin)), nodes);
        } else {
            out.seg = two_stage_forward(g, feats, *pipe.net1, nodes);
        }
    } else {
        out.seg = seg_forward(g, feats, nodes);
    }
    if (pipe.bf.mode == BFConfig::Mode::regularizer) {
        auto head = bind_mlp(g, pipe.bf_head->head, bind, "bf");
        out.bf_logits = mlp_forward(g, head, out.seg.femb);
    }
    return out;
}

// ---------------------------------------------------------------------------
// evaluation

template <typename T>
MetricsReport evaluate_pipeline(SegPipeline<T>& pipe, const Dataset& test) {
    const int64_t c = pipe.label_space();
    std::vector<int64_t> confusion(static_cast<size_t>(c * c), 0);
    // independent recount, cross-checked against the confusion matrix
    int64_t direct_correct = 0, direct_total = 0;
    std::vector<int64_t> direct_tp(static_cast<size_t>(c), 0), direct_fp(direct_tp),
        direct_fn(direct_tp);
    std::vector<double> latencies;
    latencies.reserve(test.blocks.size());

    for (const auto& block : test.blocks) {
        const auto labels = pipe.labels_for(block);
        const Tensor<T> feats = block_features_tensor<T>(block);
        const auto t0 = Clock::now();
        Graph<T> g;
        ParamBind<T> bind;
        bind.trainable = false;
        const auto fw = pipeline_forward(g, pipe, bind, feats, block.labels);
        const Tensor<T>& logits = g.value(fw.seg.logits);
        latencies.push_back(ms_since(t0));
        for (int64_t i = 0; i < block.n; ++i) {
            int64_t pred = 0;
            for (int64_t k = 1; k < c; ++k)
                if (logits.at2(i, k) > logits.at2(i, pred)) pred = k;
            const int64_t truth = labels[static_cast<size_t>(i)];
            ++confusion[static_cast<size_t>(truth * c + pred)];
            ++direct_total;
            if (pred == truth) {
                ++direct_correct;
                ++direct_tp[static_cast<size_t>(truth)];
            } else {
                ++direct_fn[static_cast<size_t>(truth)];
                ++direct_fp[static_cast<size_t>(pred)];
            }
        }
    }

    MetricsReport report = metrics_from_confusion(std::move(confusion), c);
    // cross-check OA and IoU inputs against the per-point recount
    if (report.points != direct_total ||
        std::llround(report.oa * static_cast<double>(direct_total)) != direct_correct)
        throw std::logic_error("evaluate: confusion-derived OA disagrees with direct recount");
    for (int64_t k = 0; k < c; ++k) {
        int64_t fp = 0, fn = 0;
        for (int64_t o = 0; o < c; ++o) {
            if (o == k) continue;
            fp += report.at(o, k);
            fn += report.at(k, o);
        }
        if (report.at(k, k) != direct_tp[static_cast<size_t>(k)] ||
            fp != direct_fp[static_cast<size_t>(k)] || fn != direct_fn[static_cast<size_t>(k)])
            throw std::logic_error("evaluate: confusion-derived IoU inputs disagree with recount");
    }
    const LatencyStats lat = latency_stats(std::move(latencies));
    report.latency_mean_ms = lat.mean_ms;
    report.latency_p95_ms = lat.p95_ms;
    return report;
}

template <typename T>
std::vector<std::vector<T>> zero_grads(const std::vector<ParamRef<T>>& refs) {
    std::vector<std::vector<T>> g(refs.size());
    for (size_t i = 0; i < refs.size(); ++i) g[i].assign(refs[i].tensor->data.size(), T(0));
    return g;
}

}  // namespace

// ---------------------------------------------------------------------------
// dataset loading

Dataset load_seg_dataset(const fs::path& dir, const RunConfig& cfg) {
    Dataset ds;
    int64_t scene_idx = 0;
    for (const auto& file : sorted_scene_files(dir)) {
        LabeledCloud cloud = load_cloud(file);
        if (ds.class_table.empty())
            ds.class_table = cloud.class_table;
        else if (ds.class_table != cloud.class_table)
            throw std::runtime_error("class table of " + file.string() +
                                     " differs from the rest of the dataset");
        BlockOptions bo;
        bo.block_size = cfg.block_size;
        bo.samples = cfg.points_per_block;
        bo.min_points = cfg.min_points;
        bo.seed = Rng::mix(cfg.seed, kDataStream + static_cast<uint64_t>(scene_idx));
        for (auto& blk : split_blocks(cloud, bo)) ds.blocks.push_back(std::move(blk));
        ++scene_idx;
    }
    if (ds.blocks.empty()) throw std::runtime_error("no blocks met min_points under " + dir.string());
    return ds;
}

ClsDataset load_cls_dataset(const fs::path& dir, const RunConfig& cfg) {
    ClsDataset ds;
    int64_t idx = 0;
    for (const auto& file : sorted_scene_files(dir)) {
        LabeledCloud cloud = load_cloud(file);
        if (cloud.size() == 0) throw std::runtime_error("empty cloud: " + file.string());
        if (ds.class_table.empty())
            ds.class_table = cloud.class_table;
        else if (ds.class_table != cloud.class_table)
            throw std::runtime_error("class table of " + file.string() +
                                     " differs from the rest of the dataset");

        Rng rng(Rng::mix(cfg.seed, kDataStream + 0x1000 + static_cast<uint64_t>(idx)));
        const int64_t n = cfg.points_per_cloud;
        std::vector<int64_t> chosen(static_cast<size_t>(n));
        for (auto& cidx : chosen) cidx = rng.uniform_int(static_cast<int64_t>(cloud.size()));

        // majority label
        std::vector<int64_t> counts(ds.class_table.size(), 0);
        for (int32_t l : cloud.labels) ++counts[static_cast<size_t>(l)];
        const int32_t label = static_cast<int32_t>(
            std::max_element(counts.begin(), counts.end()) - counts.begin());

        // center and scale to the unit ball
        std::array<double, 3> centroid = {0, 0, 0};
        for (int64_t i : chosen)
            for (int a = 0; a < 3; ++a) centroid[static_cast<size_t>(a)] += cloud.coords[static_cast<size_t>(i)][static_cast<size_t>(a)];
        for (auto& v : centroid) v /= static_cast<double>(n);
        double max_norm = 1e-9;
        for (int64_t i : chosen) {
            double norm2 = 0;
            for (int a = 0; a < 3; ++a) {
                const double d = cloud.coords[static_cast<size_t>(i)][static_cast<size_t>(a)] -
                                 centroid[static_cast<size_t>(a)];
                norm2 += d * d;
            }
            max_norm = std::max(max_norm, std::sqrt(norm2));
        }

        ClsSample sample;
        sample.n = n;
        sample.label = label;
        sample.features.resize(static_cast<size_t>(n) * 6);
        for (int64_t i = 0; i < n; ++i) {
            const size_t src = static_cast<size_t>(chosen[static_cast<size_t>(i)]);
            double* f = sample.features.data() + i * 6;
            for (int a = 0; a < 3; ++a)
                f[a] = (cloud.coords[src][static_cast<size_t>(a)] - centroid[static_cast<size_t>(a)]) / max_norm;
            for (int a = 0; a < 3; ++a) f[3 + a] = cloud.colors[src][static_cast<size_t>(a)];
        }
        ds.samples.push_back(std::move(sample));
        ++idx;
    }
    return ds;
}

// ---------------------------------------------------------------------------
// segmentation training

template <typename T>
TrainResult train_seg_run(const RunConfig& cfg, TrainTask task, std::ostream& log) {
    const Dataset train = load_seg_dataset(cfg.train_dir, cfg);
    const Dataset test = load_seg_dataset(cfg.test_dir, cfg);
    if (train.class_table != test.class_table)
        throw std::runtime_error("train and test class tables differ");

    SegPipeline<T> pipe = build_pipeline<T>(cfg, task, train.class_table);
    if (cfg.class_weighting) {
        std::vector<int64_t> counts(static_cast<size_t>(pipe.label_space()), 0);
        int64_t total = 0;
        for (const auto& blk : train.blocks)
            for (int32_t l : pipe.labels_for(blk)) {
                ++counts[static_cast<size_t>(l)];
                ++total;
            }
        pipe.class_weights.resize(counts.size());
        for (size_t i = 0; i < counts.size(); ++i)
            pipe.class_weights[i] =
                counts[i] > 0 ? static_cast<T>(static_cast<double>(total) /
                                               (static_cast<double>(counts.size()) *
                                                static_cast<double>(counts[i])))
                              : T(0);
    }

    std::vector<ParamRef<T>> refs = pipeline_params(pipe);
    AdamConfig adam_cfg{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.decay,
                        cfg.decay_every};
    AdamState<T> adam;
    adam.init(refs);
    Rng run_rng(Rng::mix(cfg.seed, kRunStream));
    int64_t epoch_start = 0;

    if (!cfg.resume.empty()) {
        const auto loaded = load_checkpoint<T>(cfg.resume, refs);
        if (loaded.has_opt) adam = loaded.opt;
        run_rng.restore(loaded.rng_state);
        epoch_start = loaded.info.epoch + 1;
        log << "resumed from " << cfg.resume << " after epoch " << loaded.info.epoch << "\n";
    }

    std::map<Tensor<T>*, size_t> slot_of;
    for (size_t i = 0; i < refs.size(); ++i) slot_of[refs[i].tensor] = i;

    fs::create_directories(cfg.out_dir);
    TrainResult result;
    result.class_table = pipe.class_table;
    result.best_checkpoint = fs::path(cfg.out_dir) / "best.ckpt";
    result.last_checkpoint = fs::path(cfg.out_dir) / "last.ckpt";
    const auto meta = seg_meta(pipe, cfg, task);

    std::vector<size_t> order(train.blocks.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int64_t epoch = epoch_start; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, adam_cfg);
        run_rng.shuffle(order);

        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            auto grads = zero_grads(refs);
            for (size_t b = start; b < stop; ++b) {
                const PointCloudBlock& block = train.blocks[order[b]];
                const auto labels = pipe.labels_for(block);
                const Tensor<T> feats = block_features_tensor<T>(block);
                Graph<T> g;
                ParamBind<T> bind;
                const auto fw = pipeline_forward(g, pipe, bind, feats, block.labels);
                typename Graph<T>::NodeId loss;
                const auto* weights = pipe.class_weights.empty() ? nullptr : &pipe.class_weights;
                if (pipe.bf.mode == BFConfig::Mode::regularizer)
                    loss = bf_regularized_loss(g, fw.seg.logits, fw.bf_logits, labels, pipe.bf,
                                               weights);
                else
                    loss = g.cross_entropy(fw.seg.logits, labels, weights);
                const double loss_value = static_cast<double>(g.value(loss).data[0]);
                if (!std::isfinite(loss_value))
                    throw std::runtime_error("training loss is not finite at epoch " +
                                             std::to_string(epoch) + ", step " +
                                             std::to_string(adam.step));
                loss_sum += loss_value;
                ++loss_count;
                g.backward(loss);
                for (const auto& [tensor, node] : bind.entries) {
                    const auto& gr = g.grad(node);
                    if (gr.empty()) continue;
                    auto it = slot_of.find(tensor);
                    if (it == slot_of.end()) continue;  // frozen first-stage leaves
                    auto& acc = grads[it->second];
                    for (size_t i = 0; i < acc.size(); ++i) acc[i] += gr[i];
                }
            }
            const T inv = static_cast<T>(1.0 / static_cast<double>(stop - start));
            for (auto& gvec : grads)
                for (T& v : gvec) v *= inv;
            adam_step(refs, grads, adam, adam_cfg, lr);
        }
        const double epoch_loss = loss_sum / static_cast<double>(std::max<int64_t>(1, loss_count));
        result.epoch_losses.push_back(epoch_loss);

        const bool eval_now = ((epoch + 1) % cfg.eval_every == 0) || epoch + 1 == cfg.epochs;
        if (eval_now) {
            result.final_test = evaluate_pipeline(pipe, test);
            if (result.final_test.miou > result.best_miou) {
                result.best_miou = result.final_test.miou;
                result.best_epoch = epoch;
                result.best_test = result.final_test;
                save_checkpoint(result.best_checkpoint, refs, &adam, epoch, run_rng.state(), meta);
            }
            save_checkpoint(result.last_checkpoint, refs, &adam, epoch, run_rng.state(), meta);
            log << "epoch " << epoch << " loss " << epoch_loss << " lr " << lr << " test OA "
                << 100.0 * result.final_test.oa << "% mIoU " << 100.0 * result.final_test.miou
                << "%\n";
        } else {
            log << "epoch " << epoch << " loss " << epoch_loss << " lr " << lr << "\n";
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// classification training

namespace {

template <typename T>
Tensor<T> cls_features_tensor(const ClsSample& s) {
    Tensor<T> t({s.n, 6});
    for (size_t i = 0; i < s.features.size(); ++i) t.data[i] = static_cast<T>(s.features[i]);
    return t;
}

template <typename T>
std::map<std::string, std::string> cls_meta(const ClsNetParams<T>& net,
                                            const std::vector<std::string>& classes) {
    std::map<std::string, std::string> m;
    m["task"] = "cls";
    m["classes"] = join_names(classes);
    m["input_dim"] = std::to_string(net.config.input_dim);
    m["num_classes"] = std::to_string(net.config.num_classes);
    m["widths"] = join_ints(net.config.widths);
    m["d_pos"] = std::to_string(net.config.d_pos);
    m["cls_widths"] = join_ints(net.config.cls_widths);
    m["k"] = std::to_string(net.config.k);
    m["slope"] = std::to_string(net.config.slope);
    m["channel_softmax"] = net.config.channel_softmax ? "1" : "0";
    return m;
}

template <typename T>
MetricsReport evaluate_cls(ClsNetParams<T>& net, const ClsDataset& test) {
    const int64_t c = net.config.num_classes;
    std::vector<int64_t> confusion(static_cast<size_t>(c * c), 0);
    std::vector<double> latencies;
    for (const auto& sample : test.samples) {
        const Tensor<T> feats = cls_features_tensor<T>(sample);
        const auto t0 = Clock::now();
        Graph<T> g;
        ParamBind<T> bind;
        bind.trainable = false;
        const auto nodes = bind_cls_net(g, net, bind);
        const auto fw = cls_forward(g, feats, nodes);
        latencies.push_back(ms_since(t0));
        const Tensor<T>& probs = g.value(fw.probs);
        int64_t pred = 0;
        for (int64_t k = 1; k < c; ++k)
            if (probs.data[static_cast<size_t>(k)] > probs.data[static_cast<size_t>(pred)]) pred = k;
        ++confusion[static_cast<size_t>(sample.label * c + pred)];
    }
    MetricsReport report = metrics_from_confusion(std::move(confusion), c);
    const LatencyStats lat = latency_stats(std::move(latencies));
    report.latency_mean_ms = lat.mean_ms;
    report.latency_p95_ms = lat.p95_ms;
    return report;
}

}  // namespace

template <typename T>
TrainResult train_cls_run(const RunConfig& cfg, std::ostream& log) {
    const ClsDataset train = load_cls_dataset(cfg.train_dir, cfg);
    const ClsDataset test = load_cls_dataset(cfg.test_dir, cfg);
    if (train.class_table != test.class_table)
        throw std::runtime_error("train and test class tables differ");

    ClsNetConfig net_cfg;
    net_cfg.input_dim = 6;
    net_cfg.num_classes = static_cast<int64_t>(train.class_table.size());
    net_cfg.widths = cfg.widths;
    net_cfg.d_pos = cfg.d_pos;
    net_cfg.cls_widths = cfg.cls_widths;
    net_cfg.k = cfg.k;
    net_cfg.slope = cfg.slope;
    net_cfg.channel_softmax = cfg.channel_softmax;
    Rng init(Rng::mix(cfg.seed, kInitStream));
    ClsNetParams<T> net = make_cls_net<T>(net_cfg, init);

    std::vector<ParamRef<T>> refs;
    collect_params(net, "cls", refs);
    AdamConfig adam_cfg{cfg.lr, cfg.adam_beta1, cfg.adam_beta2, cfg.adam_epsilon, cfg.decay,
                        cfg.decay_every};
    AdamState<T> adam;
    adam.init(refs);
    Rng run_rng(Rng::mix(cfg.seed, kRunStream));
    int64_t epoch_start = 0;
    if (!cfg.resume.empty()) {
        const auto loaded = load_checkpoint<T>(cfg.resume, refs);
        if (loaded.has_opt) adam = loaded.opt;
        run_rng.restore(loaded.rng_state);
        epoch_start = loaded.info.epoch + 1;
    }

    std::map<Tensor<T>*, size_t> slot_of;
    for (size_t i = 0; i < refs.size(); ++i) slot_of[refs[i].tensor] = i;

    fs::create_directories(cfg.out_dir);
    TrainResult result;
    result.class_table = train.class_table;
    result.best_checkpoint = fs::path(cfg.out_dir) / "best.ckpt";
    result.last_checkpoint = fs::path(cfg.out_dir) / "last.ckpt";
    const auto meta = cls_meta(net, train.class_table);

    std::vector<size_t> order(train.samples.size());
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;

    for (int64_t epoch = epoch_start; epoch < cfg.epochs; ++epoch) {
        const double lr = lr_at(epoch, adam_cfg);
        run_rng.shuffle(order);
        double loss_sum = 0.0;
        int64_t loss_count = 0;
        for (size_t start = 0; start < order.size(); start += static_cast<size_t>(cfg.batch_size)) {
            const size_t stop = std::min(order.size(), start + static_cast<size_t>(cfg.batch_size));
            auto grads = zero_grads(refs);
            for (size_t b = start; b < stop; ++b) {
                const ClsSample& sample = train.samples[order[b]];
                const Tensor<T> feats = cls_features_tensor<T>(sample);
                Graph<T> g;
                ParamBind<T> bind;
                const auto nodes = bind_cls_net(g, net, bind);
                const auto fw = cls_forward(g, feats, nodes);
                const auto row = g.reshape(fw.logits, {1, net_cfg.num_classes});
                const auto loss = g.cross_entropy(row, {sample.label});
                const double loss_value = static_cast<double>(g.value(loss).data[0]);
                if (!std::isfinite(loss_value))
                    throw std::runtime_error("training loss is not finite at epoch " +
                                             std::to_string(epoch) + ", step " +
                                             std::to_string(adam.step));
                loss_sum += loss_value;
                ++loss_count;
                g.backward(loss);
                for (const auto& [tensor, node] : bind.entries) {
                    const auto& gr = g.grad(node);
                    if (gr.empty()) continue;
                    auto& acc = grads[slot_of.at(tensor)];
                    for (size_t i = 0; i < acc.size(); ++i) acc[i] += gr[i];
                }
            }
            const T inv = static_cast<T>(1.0 / static_cast<double>(stop - start));
            for (auto& gvec : grads)
                for (T& v : gvec) v *= inv;
            adam_step(refs, grads, adam, adam_cfg, lr);
        }
        const double epoch_loss = loss_sum / static_cast<double>(std::max<int64_t>(1, loss_count));
        result.epoch_losses.push_back(epoch_loss);

        const bool eval_now = ((epoch + 1) % cfg.eval_every == 0) || epoch + 1 == cfg.epochs;
        if (eval_now) {
            result.final_test = evaluate_cls(net, test);
            if (result.final_test.miou > result.best_miou) {
                result.best_miou = result.final_test.miou;
                result.best_epoch = epoch;
                result.best_test = result.final_test;
                save_checkpoint(result.best_checkpoint, refs, &adam, epoch, run_rng.state(), meta);
            }
            save_checkpoint(result.last_checkpoint, refs, &adam, epoch, run_rng.state(), meta);
            log << "epoch " << epoch << " loss " << epoch_loss << " lr " << lr << " test OA "
                << 100.0 * result.final_test.oa << "%\n";
        } else {
            log << "epoch " << epoch << " loss " << epoch_loss << " lr " << lr << "\n";
        }
    }
    return result;
}

// ---------------------------------------------------------------------------
// evaluation / prediction / bench entry points

template <typename T>
MetricsReport eval_seg_checkpoint(const fs::path& ckpt, const RunConfig& cfg, std::ostream& log) {
    CheckpointInfo info;
    SegNetParams<T> net = load_seg_net<T>(ckpt, &info);

    const Dataset test = load_seg_dataset(cfg.test_dir, cfg);
    const auto classes = split_names(info.meta.at("classes"));
    if (classes != test.class_table)
        throw std::runtime_error("checkpoint class table does not match the dataset");

    SegPipeline<T> pipe;
    pipe.net_cfg = net.config;
    pipe.net = std::move(net);
    pipe.class_table = classes;
    pipe.binary = info.meta.at("task") == "bf_pretrain";
    pipe.bf.mode = bf_mode_from_name(info.meta.at("bf.mode"));
    pipe.bf.lambda = std::stod(info.meta.at("lambda"));
    if (pipe.binary || pipe.bf.mode != BFConfig::Mode::off) {
        RunConfig names = cfg;
        names.background_classes = split_names(info.meta.at("background"));
        pipe.bf.background_classes = names.background_ids(classes);
    }
    if (pipe.bf.mode == BFConfig::Mode::two_stage) {
        const std::string net1 = info.meta.at("bf.net1");
        if (net1 == "oracle")
            pipe.oracle = true;
        else
            pipe.net1 = load_seg_net<T>(net1);
    }
    if (pipe.binary) {
        // a first-stage checkpoint stores the source table; evaluation maps labels
        pipe.class_table = test.class_table;
    }
    MetricsReport report = evaluate_pipeline(pipe, test);
    log << report.to_table(pipe.binary ? std::vector<std::string>{"background", "foreground"}
                                       : classes);
    return report;
}

template <typename T>
LabeledCloud predict_cloud(const fs::path& ckpt, const RunConfig& cfg, const LabeledCloud& cloud) {
    CheckpointInfo info;
    SegNetParams<T> net = load_seg_net<T>(ckpt, &info);
    if (info.meta.at("bf.mode") == "two_stage" || info.meta.at("task") == "bf_pretrain")
        throw std::runtime_error("predict supports plain and regularized seg checkpoints");
    const auto classes = split_names(info.meta.at("classes"));
    const double block_size = info.meta.count("block_size") ? std::stod(info.meta.at("block_size"))
                                                            : cfg.block_size;

    LabeledCloud out = cloud;
    out.class_table = classes;
    const auto blocks = prediction_blocks(cloud, block_size);
    for (const auto& pb : blocks) {
        const Tensor<T> feats = block_features_tensor<T>(pb.block);
        Graph<T> g;
        ParamBind<T> bind;
        bind.trainable = false;
        const auto nodes = bind_seg_net(g, net, bind, "seg");
        const auto fw = seg_forward(g, feats, nodes);
        const Tensor<T>& logits = g.value(fw.logits);
        const int64_t c = net.config.num_classes;
        for (int64_t i = 0; i < pb.block.n; ++i) {
            int64_t pred = 0;
            for (int64_t k = 1; k < c; ++k)
                if (logits.at2(i, k) > logits.at2(i, pred)) pred = k;
            out.labels[static_cast<size_t>(pb.sources[static_cast<size_t>(i)])] =
                static_cast<int32_t>(pred);
        }
    }
    return out;
}

std::string BenchReport::to_kv() const {
    std::ostringstream os;
    os << "bench.points=" << points << "\n";
    os << "bench.warmup=" << warmup << "\n";
    os << "bench.runs=" << runs << "\n";
    os << "bench.median_ms=" << stats.median_ms << "\n";
    os << "bench.mean_ms=" << stats.mean_ms << "\n";
    os << "bench.p95_ms=" << stats.p95_ms << "\n";
    return os.str();
}

template <typename T>
BenchReport bench_run(const RunConfig& cfg, const fs::path& ckpt_or_empty, int warmup, int runs,
                      std::ostream& log) {
    SegNetParams<T> net = [&] {
        if (!ckpt_or_empty.empty()) return load_seg_net<T>(ckpt_or_empty);
        SegNetConfig nc;
        nc.input_dim = PointCloudBlock::kFeatureWidth;
        nc.num_classes = 8;
        nc.widths = cfg.widths;
        nc.d_pos = cfg.d_pos;
        nc.emb_width = cfg.emb_width;
        nc.head_widths = cfg.head_widths;
        nc.k = cfg.k;
        nc.slope = cfg.slope;
        Rng init(Rng::mix(cfg.seed, kInitStream));
        return make_seg_net<T>(nc, init);
    }();

    PointCloudBlock block = [&]() -> PointCloudBlock {
        for (const std::string& dir : {cfg.test_dir, cfg.train_dir}) {
            if (dir.empty() || !fs::is_directory(dir)) continue;
            const Dataset ds = load_seg_dataset(dir, cfg);
            return ds.blocks.front();
        }
        SceneSpec spec = SceneSpec::with_defaults();
        spec.seed = cfg.seed;
        const LabeledCloud cloud = synthesize_scene(spec);
        BlockOptions bo;
        bo.block_size = cfg.block_size;
        bo.samples = cfg.points_per_block;
        bo.min_points = cfg.min_points;
        bo.seed = cfg.seed;
        auto blocks = split_blocks(cloud, bo);
        if (blocks.empty()) throw std::runtime_error("bench: no block available");
        return blocks.front();
    }();

    const Tensor<T> feats = block_features_tensor<T>(block);
    auto forward_once = [&] {
        Graph<T> g;
        ParamBind<T> bind;
        bind.trainable = false;
        const auto nodes = bind_seg_net(g, net, bind, "seg");
        (void)seg_forward(g, feats, nodes);
    };

    BenchReport report;
    report.points = block.n;
    report.warmup = warmup;
    report.runs = runs;
    for (int i = 0; i < warmup; ++i) forward_once();
    std::vector<double> times;
    times.reserve(static_cast<size_t>(runs));
    for (int i = 0; i < runs; ++i) {
        const auto t0 = Clock::now();
        forward_once();
        times.push_back(ms_since(t0));
    }
    report.stats = latency_stats(std::move(times));
    log << report.to_kv();
    return report;
}

// ---------------------------------------------------------------------------
// precision dispatch

TrainResult train_seg_any(const RunConfig& cfg, TrainTask task, std::ostream& log) {
    return cfg.precision == 64 ? train_seg_run<double>(cfg, task, log)
                               : train_seg_run<float>(cfg, task, log);
}

TrainResult train_cls_any(const RunConfig& cfg, std::ostream& log) {
    return cfg.precision == 64 ? train_cls_run<double>(cfg, log) : train_cls_run<float>(cfg, log);
}

MetricsReport eval_seg_any(const fs::path& ckpt, const RunConfig& cfg, std::ostream& log) {
    const auto info = probe_checkpoint(ckpt);
    return info.precision_bits == 64 ? eval_seg_checkpoint<double>(ckpt, cfg, log)
                                     : eval_seg_checkpoint<float>(ckpt, cfg, log);
}

LabeledCloud predict_any(const fs::path& ckpt, const RunConfig& cfg, const LabeledCloud& cloud) {
    const auto info = probe_checkpoint(ckpt);
    return info.precision_bits == 64 ? predict_cloud<double>(ckpt, cfg, cloud)
                                     : predict_cloud<float>(ckpt, cfg, cloud);
}

BenchReport bench_any(const RunConfig& cfg, const fs::path& ckpt_or_empty, int warmup, int runs,
                      std::ostream& log) {
    uint32_t bits = static_cast<uint32_t>(cfg.precision);
    if (!ckpt_or_empty.empty()) bits = probe_checkpoint(ckpt_or_empty).precision_bits;
    return bits == 64 ? bench_run<double>(cfg, ckpt_or_empty, warmup, runs, log)
                      : bench_run<float>(cfg, ckpt_or_empty, warmup, runs, log);
}

template TrainResult train_seg_run<float>(const RunConfig&, TrainTask, std::ostream&);
template TrainResult train_seg_run<double>(const RunConfig&, TrainTask, std::ostream&);
template TrainResult train_cls_run<float>(const RunConfig&, std::ostream&);
template TrainResult train_cls_run<double>(const RunConfig&, std::ostream&);
template MetricsReport eval_seg_checkpoint<float>(const fs::path&, const RunConfig&, std::ostream&);
template MetricsReport eval_seg_checkpoint<double>(const fs::path&, const RunConfig&, std::ostream&);
template LabeledCloud predict_cloud<float>(const fs::path&, const RunConfig&, const LabeledCloud&);
template LabeledCloud predict_cloud<double>(const fs::path&, const RunConfig&, const LabeledCloud&);
template BenchReport bench_run<float>(const RunConfig&, const fs::path&, int, int, std::ostream&);
template BenchReport bench_run<double>(const RunConfig&, const fs::path&, int, int, std::ostream&);

}  // namespace dpfa
