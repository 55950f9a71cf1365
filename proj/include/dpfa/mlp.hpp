#pragma once

#include "dpfa/graph.hpp"
#include "dpfa/rng.hpp"

namespace dpfa {

template <typename T>
struct Dense {
    Tensor<T> w;  // [in, out]
    Tensor<T> b;  // [out]
};

// Stack of linear maps with leaky-ReLU between layers. `output_activation`
// controls whether the last layer is activated too.
template <typename T>
struct Mlp {
    std::vector<Dense<T>> layers;
    T slope = T(0.2);
    bool output_activation = false;

    int64_t in_dim() const { return layers.front().w.shape[0]; }
    int64_t out_dim() const { return layers.back().w.shape[1]; }
};

// Glorot-uniform weights, zero bias.
template <typename T>
Mlp<T> make_mlp(const std::vector<int64_t>& dims, bool output_activation, T slope, Rng& rng) {
    if (dims.size() < 2) throw std::invalid_argument("make_mlp: need at least [in, out] dims");
    Mlp<T> m;
    m.slope = slope;
    m.output_activation = output_activation;
    for (size_t l = 0; l + 1 < dims.size(); ++l) {
        Dense<T> d;
        d.w = Tensor<T>({dims[l], dims[l + 1]});
        d.b = Tensor<T>({dims[l + 1]});
        const double a = std::sqrt(6.0 / static_cast<double>(dims[l] + dims[l + 1]));
        for (T& v : d.w.data) v = static_cast<T>(rng.uniform(-a, a));
        m.layers.push_back(std::move(d));
    }
    return m;
}

// Named reference to one learnable tensor; the flat view the optimizer and
// checkpointing work on.
template <typename T>
struct ParamRef {
    std::string name;
    Tensor<T>* tensor;
};

template <typename T>
void collect_params(Mlp<T>& m, const std::string& prefix, std::vector<ParamRef<T>>& out) {
    for (size_t l = 0; l < m.layers.size(); ++l) {
        out.push_back({prefix + ".w" + std::to_string(l), &m.layers[l].w});
        out.push_back({prefix + ".b" + std::to_string(l), &m.layers[l].b});
    }
}

// Records which graph leaf each parameter tensor was bound to, so gradients
// can be read back after backward().
template <typename T>
struct ParamBind {
    using NodeId = typename Graph<T>::NodeId;
    std::vector<std::pair<Tensor<T>*, NodeId>> entries;
    bool trainable = true;

    NodeId bind(Graph<T>& g, Tensor<T>& t, const std::string& name) {
        Tensor<T> v = t;
        v.requires_grad = trainable;
        v.grad.clear();
        const NodeId id = g.leaf(std::move(v), name);
        entries.push_back({&t, id});
        return id;
    }
};

template <typename T>
struct MlpNodes {
    using NodeId = typename Graph<T>::NodeId;
    std::vector<std::pair<NodeId, NodeId>> layers;  // (w, b)
    T slope = T(0.2);
    bool output_activation = false;
};

template <typename T>
MlpNodes<T> bind_mlp(Graph<T>& g, Mlp<T>& m, ParamBind<T>& bind, const std::string& name) {
    MlpNodes<T> nodes;
    nodes.slope = m.slope;
    nodes.output_activation = m.output_activation;
    for (size_t l = 0; l < m.layers.size(); ++l) {
        const auto w = bind.bind(g, m.layers[l].w, name + ".w" + std::to_string(l));
        const auto b = bind.bind(g, m.layers[l].b, name + ".b" + std::to_string(l));
        nodes.layers.push_back({w, b});
    }
    return nodes;
}

template <typename T>
typename Graph<T>::NodeId mlp_forward(Graph<T>& g, const MlpNodes<T>& m,
                                      typename Graph<T>::NodeId x) {
    auto h = x;
    for (size_t l = 0; l < m.layers.size(); ++l) {
        h = g.linear(h, m.layers[l].first, m.layers[l].second);
        if (l + 1 < m.layers.size() || m.output_activation) h = g.leaky_relu(h, m.slope);
    }
    return h;
}

}  // namespace dpfa
