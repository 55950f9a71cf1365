#pragma once

#include "dpfa/fa_layer.hpp"

namespace dpfa {

// Columns [lo, hi) of a [N, D] tensor.
template <typename T>
Tensor<T> slice_cols(const Tensor<T>& t, int64_t lo, int64_t hi) {
    if (t.ndim() != 2 || lo < 0 || hi > t.shape[1] || lo >= hi)
        throw std::invalid_argument("slice_cols: bad range [" + std::to_string(lo) + ", " +
                                    std::to_string(hi) + ") for " + shape_str(t.shape));
    Tensor<T> out({t.shape[0], hi - lo});
    for (int64_t r = 0; r < t.shape[0]; ++r)
        for (int64_t c = lo; c < hi; ++c) out.at2(r, c - lo) = t.at2(r, c);
    return out;
}

struct SegNetConfig {
    int64_t input_dim = 9;
    int64_t num_classes = 13;
    std::vector<int64_t> widths = {64, 64, 64};
    int64_t d_pos = 0;  // 0: same as the layer width
    int64_t emb_width = 1024;
    std::vector<int64_t> head_widths = {512, 256};
    int k = 20;
    double slope = 0.2;
    bool channel_softmax = false;
};

// Three stacked FA layers; concatenated per-point features are max-pooled
// into a global embedding, re-broadcast, and classified per point.
template <typename T>
struct SegNetParams {
    SegNetConfig config;
    std::vector<FALayerParams<T>> fa;
    Mlp<T> psi_emb;   // sum(widths) -> emb_width, activated
    Mlp<T> seg_head;  // emb_width + sum(widths) -> ... -> C
};

template <typename T>
SegNetParams<T> make_seg_net(const SegNetConfig& cfg, Rng& rng) {
    if (cfg.widths.empty()) throw std::invalid_argument("seg net: need at least one FA width");
    if (cfg.num_classes < 2) throw std::invalid_argument("seg net: need at least two classes");
    SegNetParams<T> p;
    p.config = cfg;
    const T slope = static_cast<T>(cfg.slope);
    int64_t d_in = cfg.input_dim;
    int64_t cat = 0;
    for (int64_t w : cfg.widths) {
        const int64_t d_pos = cfg.d_pos > 0 ? cfg.d_pos : w;
        p.fa.push_back(make_fa_layer<T>(d_in, w, d_pos, slope, rng));
        p.fa.back().channel_softmax = cfg.channel_softmax;
        d_in = w;
        cat += w;
    }
    p.psi_emb = make_mlp<T>({cat, cfg.emb_width}, true, slope, rng);
    std::vector<int64_t> head_dims = {cfg.emb_width + cat};
    head_dims.insert(head_dims.end(), cfg.head_widths.begin(), cfg.head_widths.end());
    head_dims.push_back(cfg.num_classes);
    p.seg_head = make_mlp<T>(head_dims, false, slope, rng);
    return p;
}

template <typename T>
void collect_params(SegNetParams<T>& p, const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (size_t l = 0; l < p.fa.size(); ++l)
        collect_params(p.fa[l], prefix + ".fa" + std::to_string(l), out);
    collect_params(p.psi_emb, prefix + ".emb", out);
    collect_params(p.seg_head, prefix + ".head", out);
}

template <typename T>
struct SegNetNodes {
    std::vector<FALayerNodes<T>> fa;
    MlpNodes<T> psi_emb, seg_head;
    int k = 20;
};

template <typename T>
SegNetNodes<T> bind_seg_net(Graph<T>& g, SegNetParams<T>& p, ParamBind<T>& bind,
                            const std::string& prefix = "seg") {
    SegNetNodes<T> n;
    for (size_t l = 0; l < p.fa.size(); ++l)
        n.fa.push_back(bind_fa_layer(g, p.fa[l], bind, prefix + ".fa" + std::to_string(l)));
    n.psi_emb = bind_mlp(g, p.psi_emb, bind, prefix + ".emb");
    n.seg_head = bind_mlp(g, p.seg_head, bind, prefix + ".head");
    n.k = p.config.k;
    return n;
}

template <typename T>
struct SegForward {
    typename Graph<T>::NodeId logits;  // [N, C]
    typename Graph<T>::NodeId femb;    // [N, emb + sum(widths)], the shared per-point features
    std::vector<NeighborGraph> graphs;
};

// `block` holds one point per row, raw coordinates in columns 0..2. The first
// layer's KNN runs on those coordinates, later layers on the previous
// layer's output features.
template <typename T>
SegForward<T> seg_forward(Graph<T>& g, const Tensor<T>& block, const SegNetNodes<T>& net) {
    if (block.ndim() != 2 || block.shape[1] < 3)
        throw std::invalid_argument("seg_forward: want block[N, 3+M], got " + shape_str(block.shape));
    const int64_t n = block.shape[0];
    const Tensor<T> coords = slice_cols(block, 0, 3);

    SegForward<T> r;
    auto features = g.constant(block, "input");
    std::vector<typename Graph<T>::NodeId> outs;
    Tensor<T> search = coords;
    for (const auto& layer : net.fa) {
        FAOut<T> fa = fa_forward(g, coords, features, layer, net.k, search);
        features = fa.out;
        outs.push_back(fa.out);
        r.graphs.push_back(std::move(fa.graph));
        search = g.value(features);
    }
    const auto cat = outs.size() > 1 ? g.concat(outs, 1) : outs[0];
    const auto global = g.reduce_max(cat, 0);
    const auto emb = mlp_forward(g, net.psi_emb, global);
    const auto tiled = g.repeat_rows(emb, n);
    r.femb = g.concat({cat, tiled}, 1);
    r.logits = mlp_forward(g, net.seg_head, r.femb);
    return r;
}

struct ClsNetConfig {
    int64_t input_dim = 6;
    int64_t num_classes = 40;
    std::vector<int64_t> widths = {64, 128, 256};
    int64_t d_pos = 0;
    std::vector<int64_t> cls_widths = {};  // hidden widths of psi_cls, usually none
    int k = 20;
    double slope = 0.2;
    bool channel_softmax = false;
};

// Classification variant: a per-point linear shortcut and the concatenated FA
// features are max-pooled separately, summed, and classified.
template <typename T>
struct ClsNetParams {
    ClsNetConfig config;
    std::vector<FALayerParams<T>> fa;
    Mlp<T> psi_ccut;  // input_dim -> sum(widths), linear shortcut
    Mlp<T> psi_cls;   // sum(widths) -> C
};

template <typename T>
ClsNetParams<T> make_cls_net(const ClsNetConfig& cfg, Rng& rng) {
    if (cfg.widths.empty()) throw std::invalid_argument("cls net: need at least one FA width");
    ClsNetParams<T> p;
    p.config = cfg;
    const T slope = static_cast<T>(cfg.slope);
    int64_t d_in = cfg.input_dim;
    int64_t cat = 0;
    for (int64_t w : cfg.widths) {
        const int64_t d_pos = cfg.d_pos > 0 ? cfg.d_pos : w;
        p.fa.push_back(make_fa_layer<T>(d_in, w, d_pos, slope, rng));
        p.fa.back().channel_softmax = cfg.channel_softmax;
        d_in = w;
        cat += w;
    }
    p.psi_ccut = make_mlp<T>({cfg.input_dim, cat}, false, slope, rng);
    std::vector<int64_t> cls_dims = {cat};
    cls_dims.insert(cls_dims.end(), cfg.cls_widths.begin(), cfg.cls_widths.end());
    cls_dims.push_back(cfg.num_classes);
    p.psi_cls = make_mlp<T>(cls_dims, false, slope, rng);
    return p;
}

template <typename T>
void collect_params(ClsNetParams<T>& p, const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (size_t l = 0; l < p.fa.size(); ++l)
        collect_params(p.fa[l], prefix + ".fa" + std::to_string(l), out);
    collect_params(p.psi_ccut, prefix + ".ccut", out);
    collect_params(p.psi_cls, prefix + ".cls", out);
}

template <typename T>
struct ClsNetNodes {
    std::vector<FALayerNodes<T>> fa;
    MlpNodes<T> psi_ccut, psi_cls;
    int k = 20;
};

template <typename T>
ClsNetNodes<T> bind_cls_net(Graph<T>& g, ClsNetParams<T>& p, ParamBind<T>& bind,
                            const std::string& prefix = "cls") {
    ClsNetNodes<T> n;
    for (size_t l = 0; l < p.fa.size(); ++l)
        n.fa.push_back(bind_fa_layer(g, p.fa[l], bind, prefix + ".fa" + std::to_string(l)));
    n.psi_ccut = bind_mlp(g, p.psi_ccut, bind, prefix + ".ccut");
    n.psi_cls = bind_mlp(g, p.psi_cls, bind, prefix + ".cls");
    n.k = p.config.k;
    return n;
}

template <typename T>
struct ClsForward {
    typename Graph<T>::NodeId logits;  // [C], before softmax
    typename Graph<T>::NodeId probs;   // [C], sums to 1
    std::vector<NeighborGraph> graphs;
};

template <typename T>
ClsForward<T> cls_forward(Graph<T>& g, const Tensor<T>& cloud, const ClsNetNodes<T>& net) {
    if (cloud.ndim() != 2 || cloud.shape[1] < 3)
        throw std::invalid_argument("cls_forward: want cloud[N, 3+M], got " + shape_str(cloud.shape));
    const Tensor<T> coords = slice_cols(cloud, 0, 3);

    ClsForward<T> r;
    auto features = g.constant(cloud, "input");
    const auto input = features;
    std::vector<typename Graph<T>::NodeId> outs;
    Tensor<T> search = coords;
    for (const auto& layer : net.fa) {
        FAOut<T> fa = fa_forward(g, coords, features, layer, net.k, search);
        features = fa.out;
        outs.push_back(fa.out);
        r.graphs.push_back(std::move(fa.graph));
        search = g.value(features);
    }
    const auto cat = outs.size() > 1 ? g.concat(outs, 1) : outs[0];
    const auto pooled = g.reduce_max(cat, 0);
    const auto shortcut = g.reduce_max(mlp_forward(g, net.psi_ccut, input), 0);
    r.logits = mlp_forward(g, net.psi_cls, g.add(pooled, shortcut));
    r.probs = g.softmax(r.logits, 0);
    return r;
}

}  // namespace dpfa
