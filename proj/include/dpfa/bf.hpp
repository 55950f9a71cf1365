#pragma once

#include <set>

#include "dpfa/networks.hpp"

namespace dpfa {

// Background-foreground exploitation: a binary partition of the class set
// (structural scene elements vs everything else), used either as a frozen
// first-stage network whose one-hot output augments the input, or as an
// auxiliary loss mixed in with weight lambda.
struct BFConfig {
    enum class Mode { off, regularizer, two_stage };

    std::vector<int32_t> background_classes;  // class ids
    double lambda = 0.2;
    Mode mode = Mode::off;

    void validate(int32_t num_classes) const {
        if (lambda < 0.0 || lambda > 1.0)
            throw std::invalid_argument("bf: lambda must be in [0, 1], got " + std::to_string(lambda));
        if (mode == Mode::off) return;
        if (background_classes.empty())
            throw std::invalid_argument("bf: background class set is empty");
        std::set<int32_t> uniq(background_classes.begin(), background_classes.end());
        for (int32_t c : background_classes)
            if (c < 0 || c >= num_classes)
                throw std::invalid_argument("bf: background class id " + std::to_string(c) +
                                            " out of range [0, " + std::to_string(num_classes) + ")");
        if (static_cast<int32_t>(uniq.size()) >= num_classes)
            throw std::invalid_argument("bf: background set must be a proper subset of the classes");
    }
};

inline const char* bf_mode_name(BFConfig::Mode m) {
    switch (m) {
        case BFConfig::Mode::off: return "off";
        case BFConfig::Mode::regularizer: return "regularizer";
        case BFConfig::Mode::two_stage: return "two_stage";
    }
    return "off";
}

inline BFConfig::Mode bf_mode_from_name(const std::string& s) {
    if (s == "off") return BFConfig::Mode::off;
    if (s == "regularizer") return BFConfig::Mode::regularizer;
    if (s == "two_stage") return BFConfig::Mode::two_stage;
    throw std::invalid_argument("bf: unknown mode '" + s + "' (off|regularizer|two_stage)");
}

// 0 for background classes, 1 for foreground.
inline std::vector<int32_t> bf_label_map(const std::vector<int32_t>& labels, const BFConfig& cfg,
                                         int32_t num_classes) {
    std::set<int32_t> bg(cfg.background_classes.begin(), cfg.background_classes.end());
    std::vector<int32_t> out(labels.size());
    for (size_t i = 0; i < labels.size(); ++i) {
        if (labels[i] < 0 || labels[i] >= num_classes)
            throw std::out_of_range("bf_label_map: class id " + std::to_string(labels[i]) +
                                    " out of range [0, " + std::to_string(num_classes) + ")");
        out[i] = bg.count(labels[i]) ? 0 : 1;
    }
    return out;
}

// Auxiliary binary head on the shared per-point features.
template <typename T>
struct BFHeadParams {
    Mlp<T> head;  // femb width -> 2
};

template <typename T>
BFHeadParams<T> make_bf_head(int64_t femb_width, T slope, Rng& rng) {
    return {make_mlp<T>({femb_width, 2}, false, slope, rng)};
}

template <typename T>
void collect_params(BFHeadParams<T>& p, const std::string& prefix, std::vector<ParamRef<T>>& out) {
    collect_params(p.head, prefix, out);
}

// (1 - lambda) * CE(seg_logits, labels) + lambda * CE(bf_logits, bf labels).
// Both heads sit on the same backbone, so backbone gradients combine.
template <typename T>
typename Graph<T>::NodeId bf_regularized_loss(Graph<T>& g, typename Graph<T>::NodeId seg_logits,
                                              typename Graph<T>::NodeId bf_logits,
                                              const std::vector<int32_t>& labels, const BFConfig& cfg,
                                              const std::vector<T>* class_weights = nullptr) {
    const int32_t num_classes = static_cast<int32_t>(g.value(seg_logits).shape[1]);
    cfg.validate(num_classes);
    const auto seg_loss = g.cross_entropy(seg_logits, labels, class_weights);
    const auto bf_loss = g.cross_entropy(bf_logits, bf_label_map(labels, cfg, num_classes));
    const T lambda = static_cast<T>(cfg.lambda);
    return g.add(g.scale(seg_loss, T(1) - lambda), g.scale(bf_loss, lambda));
}

// One-hot [N, 2] rows: background -> [1, 0], foreground -> [0, 1].
template <typename T>
Tensor<T> bf_onehot(const std::vector<int32_t>& bf_labels) {
    Tensor<T> out({static_cast<int64_t>(bf_labels.size()), 2});
    for (size_t i = 0; i < bf_labels.size(); ++i)
        out.at2(static_cast<int64_t>(i), bf_labels[i] == 0 ? 0 : 1) = T(1);
    return out;
}

// Hard argmax of first-stage binary logits, one-hot encoded.
template <typename T>
Tensor<T> bf_onehot_from_logits(const Tensor<T>& logits) {
    if (logits.ndim() != 2 || logits.shape[1] != 2)
        throw std::invalid_argument("bf: want binary logits [N, 2], got " + shape_str(logits.shape));
    std::vector<int32_t> hard(static_cast<size_t>(logits.shape[0]));
    for (int64_t i = 0; i < logits.shape[0]; ++i)
        hard[static_cast<size_t>(i)] = logits.at2(i, 1) > logits.at2(i, 0) ? 1 : 0;
    return bf_onehot<T>(hard);
}

// Appends the one-hot columns to each point's feature row.
template <typename T>
Tensor<T> augment_features(const Tensor<T>& block, const Tensor<T>& onehot) {
    if (block.ndim() != 2 || onehot.ndim() != 2 || block.shape[0] != onehot.shape[0])
        throw std::invalid_argument("bf: cannot append " + shape_str(onehot.shape) + " to " +
                                    shape_str(block.shape));
    const int64_t n = block.shape[0];
    const int64_t d = block.shape[1];
    const int64_t e = onehot.shape[1];
    Tensor<T> out({n, d + e});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < d; ++c) out.at2(i, c) = block.at2(i, c);
        for (int64_t c = 0; c < e; ++c) out.at2(i, d + c) = onehot.at2(i, c);
    }
    return out;
}

// Two-stage pipeline: the first network's hard binary prediction is appended
// to the input features of the second. The one-hot enters as a constant, so
// no gradient can reach the first network even when its parameters are bound
// as trainable leaves (pass `net1_bind` to observe that).
template <typename T>
SegForward<T> two_stage_forward(Graph<T>& g, const Tensor<T>& block, SegNetParams<T>& net1,
                                const SegNetNodes<T>& net2, ParamBind<T>* net1_bind = nullptr) {
    if (net1.config.num_classes != 2)
        throw std::invalid_argument("two_stage: first network must have 2 classes, has " +
                                    std::to_string(net1.config.num_classes));
    ParamBind<T> frozen;
    frozen.trainable = false;
    ParamBind<T>& bind1 = net1_bind ? *net1_bind : frozen;
    const auto nodes1 = bind_seg_net(g, net1, bind1, "net1");
    const auto out1 = seg_forward(g, block, nodes1);
    const Tensor<T> onehot = bf_onehot_from_logits(g.value(out1.logits));
    return seg_forward(g, augment_features(block, onehot), net2);
}

}  // namespace dpfa
