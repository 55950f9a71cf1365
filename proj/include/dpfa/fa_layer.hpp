#pragma once

#include "dpfa/knn.hpp"
#include "dpfa/mlp.hpp"

namespace dpfa {

// Feature Aggregation layer: positional + feature encoding of a dynamic
// K-neighborhood, attention pooling over the neighbor axis, and a linear
// shortcut added to the pooled result.
template <typename T>
struct FALayerParams {
    Mlp<T> psi_pos;  // 10 -> d_pos, activated
    Mlp<T> psi_att;  // d_pos + 2*d_in -> d_out, linear (softmax follows)
    Mlp<T> psi_cut;  // d_in -> d_out, linear shortcut
    int64_t d_in = 0;
    int64_t d_out = 0;
    int64_t d_pos = 0;
    bool channel_softmax = false;  // ablation: normalize over channels instead of neighbors
};

template <typename T>
FALayerParams<T> make_fa_layer(int64_t d_in, int64_t d_out, int64_t d_pos, T slope, Rng& rng) {
    FALayerParams<T> p;
    p.d_in = d_in;
    p.d_out = d_out;
    p.d_pos = d_pos;
    p.psi_pos = make_mlp<T>({10, d_pos}, true, slope, rng);
    p.psi_att = make_mlp<T>({d_pos + 2 * d_in, d_out}, false, slope, rng);
    p.psi_cut = make_mlp<T>({d_in, d_out}, false, slope, rng);
    return p;
}

template <typename T>
void collect_params(FALayerParams<T>& p, const std::string& prefix, std::vector<ParamRef<T>>& out) {
    collect_params(p.psi_pos, prefix + ".pos", out);
    collect_params(p.psi_att, prefix + ".att", out);
    collect_params(p.psi_cut, prefix + ".cut", out);
}

template <typename T>
struct FALayerNodes {
    MlpNodes<T> psi_pos, psi_att, psi_cut;
    bool channel_softmax = false;
};

template <typename T>
FALayerNodes<T> bind_fa_layer(Graph<T>& g, FALayerParams<T>& p, ParamBind<T>& bind,
                              const std::string& name) {
    FALayerNodes<T> n;
    n.psi_pos = bind_mlp(g, p.psi_pos, bind, name + ".pos");
    n.psi_att = bind_mlp(g, p.psi_att, bind, name + ".att");
    n.psi_cut = bind_mlp(g, p.psi_cut, bind, name + ".cut");
    n.channel_softmax = p.channel_softmax;
    return n;
}

// c_i^j = psi_pos(query ++ neighbor ++ relative ++ distance), width 10 in.
template <typename T>
typename Graph<T>::NodeId positional_encode(Graph<T>& g, const NeighborGeometry<T>& geo,
                                            const MlpNodes<T>& psi_pos) {
    const auto q = g.constant(geo.query_coords);
    const auto nb = g.constant(geo.neighbor_coords);
    const auto rel = g.constant(geo.rel_pos);
    const auto dist = g.constant(geo.dist);
    const auto packed = g.concat({q, nb, rel, dist}, 2);
    return mlp_forward(g, psi_pos, packed);
}

// e_i^j = f_i ++ f_{idx(i,j)}: query features tiled over the K slots,
// concatenated with the gathered neighbor features.
template <typename T>
typename Graph<T>::NodeId feature_encode(Graph<T>& g, typename Graph<T>::NodeId features,
                                         const NeighborGraph& ng) {
    IndexTable self(ng.indices.rows, ng.indices.cols);
    for (int64_t i = 0; i < self.rows; ++i)
        for (int64_t j = 0; j < self.cols; ++j) self.at(i, j) = static_cast<int32_t>(i);
    const auto query = g.gather_rows(features, std::move(self));
    const auto neighbors = g.gather_rows(features, ng.indices);
    return g.concat({query, neighbors}, 2);
}

// Q_i^j = c_i^j ++ e_i^j
template <typename T>
typename Graph<T>::NodeId encode_neighbors(Graph<T>& g, const NeighborGeometry<T>& geo,
                                           typename Graph<T>::NodeId features,
                                           const NeighborGraph& ng, const FALayerNodes<T>& nodes) {
    const auto c = positional_encode(g, geo, nodes.psi_pos);
    const auto e = feature_encode(g, features, ng);
    return g.concat({c, e}, 2);
}

// R = psi_att(Q); weights = softmax over the neighbor axis (per channel);
// output F'_i = sum_j R ⊙ weights.
template <typename T>
typename Graph<T>::NodeId attention_pool(Graph<T>& g, typename Graph<T>::NodeId q,
                                         const MlpNodes<T>& psi_att, bool channel_softmax = false) {
    const auto r = mlp_forward(g, psi_att, q);
    const auto scores = g.softmax(r, channel_softmax ? 2 : 1);
    const auto weighted = g.hadamard(r, scores);
    return g.reduce_sum(weighted, 1);
}

template <typename T>
struct FAOut {
    typename Graph<T>::NodeId out;
    NeighborGraph graph;
};

// One FA layer. `search` is the space the KNN runs in: the raw coordinates
// for the first layer, the previous layer's output features afterwards.
// Neighbor indices are constants; no gradient flows through the search.
template <typename T>
FAOut<T> fa_forward(Graph<T>& g, const Tensor<T>& coords, typename Graph<T>::NodeId features,
                    const FALayerNodes<T>& nodes, int k, const Tensor<T>& search) {
    NeighborGraph ng = knn(search, k);
    const NeighborGeometry<T> geo = neighbor_geometry(coords, ng);
    const auto q = encode_neighbors(g, geo, features, ng, nodes);
    const auto pooled = attention_pool(g, q, nodes.psi_att, nodes.channel_softmax);
    const auto shortcut = mlp_forward(g, nodes.psi_cut, features);
    return {g.add(pooled, shortcut), std::move(ng)};
}

}  // namespace dpfa
