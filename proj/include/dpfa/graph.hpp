#pragma once

#include <cstring>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <utility>

#include "dpfa/tensor.hpp"

namespace dpfa {

// Reverse-mode tape. Ops execute eagerly; each call appends one node holding
// the output value, the input ids and a backward closure. backward() walks
// the tape once in reverse insertion order. Tensors are treated as immutable
// once their node exists; one Graph instance belongs to one worker.
template <typename T>
class Graph {
public:
    using NodeId = int32_t;

    struct Node {
        const char* op;
        std::string label;  // leaf/diagnostic name, may be empty
        std::vector<NodeId> inputs;
        Tensor<T> out;
        std::function<void(Graph&, NodeId)> back;  // null for leaves
    };

    NodeId leaf(Tensor<T> value, std::string name = {}) {
        return push("leaf", std::move(name), {}, std::move(value), nullptr);
    }

    NodeId constant(Tensor<T> value, std::string name = {}) {
        value.requires_grad = false;
        return push("const", std::move(name), {}, std::move(value), nullptr);
    }

    const Tensor<T>& value(NodeId id) const { return nodes_[static_cast<size_t>(id)].out; }
    Tensor<T>& tensor(NodeId id) { return nodes_[static_cast<size_t>(id)].out; }
    const std::vector<T>& grad(NodeId id) const {
        return nodes_[static_cast<size_t>(id)].out.grad;
    }
    const char* op_name(NodeId id) const { return nodes_[static_cast<size_t>(id)].op; }
    size_t size() const { return nodes_.size(); }

    // y[..., o] = sum_i x[..., i] * W[i, o] + b[o]
    NodeId linear(NodeId x, NodeId w, NodeId b) {
        const Tensor<T>& xv = value(x);
        const Tensor<T>& wv = value(w);
        const Tensor<T>& bv = value(b);
        if (xv.ndim() < 1 || wv.ndim() != 2 || bv.ndim() != 1)
            throw std::invalid_argument("linear: want x[..., D_in], W[D_in, D_out], b[D_out]; got x " +
                                        shape_str(xv.shape) + ", W " + shape_str(wv.shape) + ", b " +
                                        shape_str(bv.shape));
        const int64_t d_in = xv.shape.back();
        const int64_t d_out = wv.shape[1];
        if (wv.shape[0] != d_in || bv.shape[0] != d_out)
            throw std::invalid_argument("linear: x " + shape_str(xv.shape) + " incompatible with W " +
                                        shape_str(wv.shape) + ", b " + shape_str(bv.shape));
        const int64_t rows = xv.size() / d_in;
        Shape out_shape = xv.shape;
        out_shape.back() = d_out;
        Tensor<T> y(out_shape);

        const T* xd = xv.data.data();
        const T* wd = wv.data.data();
        const T* bd = bv.data.data();
        T* yd = y.data.data();
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < rows; ++r) {
            T* yr = yd + r * d_out;
            std::memcpy(yr, bd, static_cast<size_t>(d_out) * sizeof(T));
            const T* xr = xd + r * d_in;
            for (int64_t i = 0; i < d_in; ++i) {
                const T xi = xr[i];
                const T* wi = wd + i * d_out;
                for (int64_t o = 0; o < d_out; ++o) yr[o] += xi * wi[o];
            }
        }

        return push("linear", {}, {x, w, b}, std::move(y),
                    [d_in, d_out, rows](Graph& g, NodeId self) {
                        Node& n = g.node(self);
                        const std::vector<T>& dy = n.out.grad;
                        const Tensor<T>& xv = g.value(n.inputs[0]);
                        const Tensor<T>& wv = g.value(n.inputs[1]);
                        if (g.wants_grad(n.inputs[0])) {
                            std::vector<T>& dx = g.grad_buf(n.inputs[0]);
#pragma omp parallel for schedule(static)
                            for (int64_t r = 0; r < rows; ++r) {
                                const T* dyr = dy.data() + r * d_out;
                                T* dxr = dx.data() + r * d_in;
                                for (int64_t i = 0; i < d_in; ++i) {
                                    const T* wi = wv.data.data() + i * d_out;
                                    T acc = 0;
                                    for (int64_t o = 0; o < d_out; ++o) acc += dyr[o] * wi[o];
                                    dxr[i] += acc;
                                }
                            }
                        }
                        if (g.wants_grad(n.inputs[1])) {
                            std::vector<T>& dw = g.grad_buf(n.inputs[1]);
#pragma omp parallel for schedule(static)
                            for (int64_t i = 0; i < d_in; ++i) {
                                T* dwi = dw.data() + i * d_out;
                                for (int64_t r = 0; r < rows; ++r) {
                                    const T xi = xv.data[static_cast<size_t>(r * d_in + i)];
                                    const T* dyr = dy.data() + r * d_out;
                                    for (int64_t o = 0; o < d_out; ++o) dwi[o] += xi * dyr[o];
                                }
                            }
                        }
                        if (g.wants_grad(n.inputs[2])) {
                            std::vector<T>& db = g.grad_buf(n.inputs[2]);
                            for (int64_t r = 0; r < rows; ++r) {
                                const T* dyr = dy.data() + r * d_out;
                                for (int64_t o = 0; o < d_out; ++o) db[static_cast<size_t>(o)] += dyr[o];
                            }
                        }
                    });
    }

    NodeId leaky_relu(NodeId x, T slope) {
        if (slope < T(0) || slope >= T(1))
            throw std::invalid_argument("leaky_relu: slope must be in [0, 1)");
        const Tensor<T>& xv = value(x);
        Tensor<T> y(xv.shape);
        for (size_t i = 0; i < xv.data.size(); ++i) {
            const T v = xv.data[i];
            y.data[i] = v >= T(0) ? v : slope * v;
        }
        return push("leaky_relu", {}, {x}, std::move(y), [slope](Graph& g, NodeId self) {
            Node& n = g.node(self);
            if (!g.wants_grad(n.inputs[0])) return;
            const Tensor<T>& xv = g.value(n.inputs[0]);
            std::vector<T>& dx = g.grad_buf(n.inputs[0]);
            const std::vector<T>& dy = n.out.grad;
            for (size_t i = 0; i < dx.size(); ++i)
                dx[i] += dy[i] * (xv.data[i] >= T(0) ? T(1) : slope);
        });
    }

    // Max-subtracted softmax along `axis`.
    NodeId softmax(NodeId x, int axis) {
        const Tensor<T>& xv = value(x);
        const AxisSplit s = split_axis(xv.shape, axis);
        Tensor<T> y(xv.shape);
        const T* xd = xv.data.data();
        T* yd = y.data.data();
#pragma omp parallel for schedule(static)
        for (int64_t o = 0; o < s.outer; ++o) {
            for (int64_t in = 0; in < s.inner; ++in) {
                const int64_t base = o * s.n * s.inner + in;
                T m = xd[base];
                for (int64_t k = 1; k < s.n; ++k) m = std::max(m, xd[base + k * s.inner]);
                T denom = 0;
                for (int64_t k = 0; k < s.n; ++k) {
                    const T e = std::exp(xd[base + k * s.inner] - m);
                    yd[base + k * s.inner] = e;
                    denom += e;
                }
                for (int64_t k = 0; k < s.n; ++k) yd[base + k * s.inner] /= denom;
            }
        }
        return push("softmax", {}, {x}, std::move(y), [s](Graph& g, NodeId self) {
            Node& n = g.node(self);
            if (!g.wants_grad(n.inputs[0])) return;
            std::vector<T>& dx = g.grad_buf(n.inputs[0]);
            const std::vector<T>& dy = n.out.grad;
            const std::vector<T>& yv = n.out.data;
#pragma omp parallel for schedule(static)
            for (int64_t o = 0; o < s.outer; ++o) {
                for (int64_t in = 0; in < s.inner; ++in) {
                    const int64_t base = o * s.n * s.inner + in;
                    T dot = 0;
                    for (int64_t k = 0; k < s.n; ++k)
                        dot += dy[static_cast<size_t>(base + k * s.inner)] *
                               yv[static_cast<size_t>(base + k * s.inner)];
                    for (int64_t k = 0; k < s.n; ++k) {
                        const size_t p = static_cast<size_t>(base + k * s.inner);
                        dx[p] += yv[p] * (dy[p] - dot);
                    }
                }
            }
        });
    }

    NodeId concat(const std::vector<NodeId>& xs, int axis) {
        if (xs.empty()) throw std::invalid_argument("concat: no inputs");
        const Shape& first = value(xs[0]).shape;
        Shape out_shape = first;
        int64_t total = 0;
        for (NodeId id : xs) {
            const Shape& sh = value(id).shape;
            if (sh.size() != first.size())
                throw std::invalid_argument("concat: rank mismatch between " + shape_str(first) +
                                            " and " + shape_str(sh));
            for (size_t d = 0; d < sh.size(); ++d)
                if (static_cast<int>(d) != axis && sh[d] != first[d])
                    throw std::invalid_argument("concat: shapes " + shape_str(first) + " and " +
                                                shape_str(sh) + " differ off axis " +
                                                std::to_string(axis));
            total += split_axis(sh, axis).n;
        }
        out_shape[static_cast<size_t>(axis)] = total;
        Tensor<T> y(out_shape);
        const AxisSplit so = split_axis(out_shape, axis);
        int64_t offset = 0;
        std::vector<int64_t> extents;
        extents.reserve(xs.size());
        for (NodeId id : xs) {
            const Tensor<T>& xv = value(id);
            const int64_t ni = split_axis(xv.shape, axis).n;
            extents.push_back(ni);
            for (int64_t o = 0; o < so.outer; ++o) {
                const T* src = xv.data.data() + o * ni * so.inner;
                T* dst = y.data.data() + (o * so.n + offset) * so.inner;
                std::memcpy(dst, src, static_cast<size_t>(ni * so.inner) * sizeof(T));
            }
            offset += ni;
        }
        return push("concat", {}, xs, std::move(y),
                    [so, extents](Graph& g, NodeId self) {
                        Node& n = g.node(self);
                        const std::vector<T>& dy = n.out.grad;
                        int64_t offset = 0;
                        for (size_t i = 0; i < n.inputs.size(); ++i) {
                            const int64_t ni = extents[i];
                            if (g.wants_grad(n.inputs[i])) {
                                std::vector<T>& dx = g.grad_buf(n.inputs[i]);
                                for (int64_t o = 0; o < so.outer; ++o) {
                                    const T* src = dy.data() + (o * so.n + offset) * so.inner;
                                    T* dst = dx.data() + o * ni * so.inner;
                                    for (int64_t k = 0; k < ni * so.inner; ++k) dst[k] += src[k];
                                }
                            }
                            offset += ni;
                        }
                    });
    }

    // out[r, k, :] = x[idx(r, k), :]; backward scatter-adds row gradients.
    NodeId gather_rows(NodeId x, IndexTable idx) {
        const Tensor<T>& xv = value(x);
        if (xv.ndim() != 2)
            throw std::invalid_argument("gather_rows: want x[N, D], got " + shape_str(xv.shape));
        const int64_t n = xv.shape[0];
        const int64_t d = xv.shape[1];
        for (int32_t i : idx.v)
            if (i < 0 || i >= n)
                throw std::out_of_range("gather_rows: index " + std::to_string(i) +
                                        " out of range [0, " + std::to_string(n) + ")");
        Tensor<T> y({idx.rows, idx.cols, d});
#pragma omp parallel for schedule(static)
        for (int64_t r = 0; r < idx.rows; ++r) {
            for (int64_t k = 0; k < idx.cols; ++k) {
                const T* src = xv.data.data() + static_cast<int64_t>(idx.at(r, k)) * d;
                T* dst = y.data.data() + (r * idx.cols + k) * d;
                std::memcpy(dst, src, static_cast<size_t>(d) * sizeof(T));
            }
        }
        return push("gather_rows", {}, {x}, std::move(y),
                    [idx = std::move(idx), d](Graph& g, NodeId self) {
                        Node& n = g.node(self);
                        if (!g.wants_grad(n.inputs[0])) return;
                        std::vector<T>& dx = g.grad_buf(n.inputs[0]);
                        const std::vector<T>& dy = n.out.grad;
                        // sequential: rows may repeat, scatter order is fixed
                        for (int64_t r = 0; r < idx.rows; ++r) {
                            for (int64_t k = 0; k < idx.cols; ++k) {
                                T* dst = dx.data() + static_cast<int64_t>(idx.at(r, k)) * d;
                                const T* src = dy.data() + (r * idx.cols + k) * d;
                                for (int64_t c = 0; c < d; ++c) dst[c] += src[c];
                            }
                        }
                    });
    }

    // Reduces `axis` away. Ties route the gradient to the lowest index.
    NodeId reduce_max(NodeId x, int axis) {
        const Tensor<T>& xv = value(x);
        const AxisSplit s = split_axis(xv.shape, axis);
        Shape out_shape;
        for (size_t d = 0; d < xv.shape.size(); ++d)
            if (static_cast<int>(d) != axis) out_shape.push_back(xv.shape[d]);
        Tensor<T> y(out_shape);
        std::vector<int32_t> argmax(static_cast<size_t>(s.outer * s.inner), 0);
#pragma omp parallel for schedule(static)
        for (int64_t o = 0; o < s.outer; ++o) {
            for (int64_t in = 0; in < s.inner; ++in) {
                const int64_t base = o * s.n * s.inner + in;
                T best = xv.data[static_cast<size_t>(base)];
                int32_t bi = 0;
                for (int64_t k = 1; k < s.n; ++k) {
                    const T v = xv.data[static_cast<size_t>(base + k * s.inner)];
                    if (v > best) {
                        best = v;
                        bi = static_cast<int32_t>(k);
                    }
                }
                y.data[static_cast<size_t>(o * s.inner + in)] = best;
                argmax[static_cast<size_t>(o * s.inner + in)] = bi;
            }
        }
        return push("reduce_max", {}, {x}, std::move(y),
                    [s, argmax = std::move(argmax)](Graph& g, NodeId self) {
                        Node& n = g.node(self);
                        if (!g.wants_grad(n.inputs[0])) return;
                        std::vector<T>& dx = g.grad_buf(n.inputs[0]);
                        const std::vector<T>& dy = n.out.grad;
                        for (int64_t o = 0; o < s.outer; ++o)
                            for (int64_t in = 0; in < s.inner; ++in) {
                                const size_t lane = static_cast<size_t>(o * s.inner + in);
                                dx[static_cast<size_t>(o * s.n * s.inner + argmax[lane] * s.inner +
                                                       in)] += dy[lane];
                            }
                    });
    }

    NodeId reduce_sum(NodeId x, int axis) {
        const Tensor<T>& xv = value(x);
        const AxisSplit s = split_axis(xv.shape, axis);
        Shape out_shape;
        for (size_t d = 0; d < xv.shape.size(); ++d)
            if (static_cast<int>(d) != axis) out_shape.push_back(xv.shape[d]);
        Tensor<T> y(out_shape);
#pragma omp parallel for schedule(static)
        for (int64_t o = 0; o < s.outer; ++o) {
            for (int64_t in = 0; in < s.inner; ++in) {
                const int64_t base = o * s.n * s.inner + in;
                T acc = 0;
                for (int64_t k = 0; k < s.n; ++k) acc += xv.data[static_cast<size_t>(base + k * s.inner)];
                y.data[static_cast<size_t>(o * s.inner + in)] = acc;
            }
        }
        return push("reduce_sum", {}, {x}, std::move(y), [s](Graph& g, NodeId self) {
            Node& n = g.node(self);
            if (!g.wants_grad(n.inputs[0])) return;
            std::vector<T>& dx = g.grad_buf(n.inputs[0]);
            const std::vector<T>& dy = n.out.grad;
            for (int64_t o = 0; o < s.outer; ++o)
                for (int64_t in = 0; in < s.inner; ++in) {
                    const T dv = dy[static_cast<size_t>(o * s.inner + in)];
                    const int64_t base = o * s.n * s.inner + in;
                    for (int64_t k = 0; k < s.n; ++k) dx[static_cast<size_t>(base + k * s.inner)] += dv;
                }
        });
    }

    NodeId sum_all(NodeId x) {
        const Tensor<T>& xv = value(x);
        T acc = 0;
        for (T v : xv.data) acc += v;
        return push("sum", {}, {x}, Tensor<T>::scalar(acc), [](Graph& g, NodeId self) {
            Node& n = g.node(self);
            if (!g.wants_grad(n.inputs[0])) return;
            std::vector<T>& dx = g.grad_buf(n.inputs[0]);
            const T dv = n.out.grad[0];
            for (T& v : dx) v += dv;
        });
    }

    NodeId hadamard(NodeId a, NodeId b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (av.shape != bv.shape)
            throw std::invalid_argument("hadamard: shape mismatch " + shape_str(av.shape) + " vs " +
                                        shape_str(bv.shape));
        Tensor<T> y(av.shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] * bv.data[i];
        return push("hadamard", {}, {a, b}, std::move(y), [](Graph& g, NodeId self) {
            Node& n = g.node(self);
            const std::vector<T>& dy = n.out.grad;
            if (g.wants_grad(n.inputs[0])) {
                std::vector<T>& da = g.grad_buf(n.inputs[0]);
                const std::vector<T>& bd = g.value(n.inputs[1]).data;
                for (size_t i = 0; i < da.size(); ++i) da[i] += dy[i] * bd[i];
            }
            if (g.wants_grad(n.inputs[1])) {
                std::vector<T>& db = g.grad_buf(n.inputs[1]);
                const std::vector<T>& ad = g.value(n.inputs[0]).data;
                for (size_t i = 0; i < db.size(); ++i) db[i] += dy[i] * ad[i];
            }
        });
    }

    NodeId add(NodeId a, NodeId b) {
        const Tensor<T>& av = value(a);
        const Tensor<T>& bv = value(b);
        if (av.shape != bv.shape)
            throw std::invalid_argument("add: shape mismatch " + shape_str(av.shape) + " vs " +
                                        shape_str(bv.shape));
        Tensor<T> y(av.shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = av.data[i] + bv.data[i];
        return push("add", {}, {a, b}, std::move(y), [](Graph& g, NodeId self) {
            Node& n = g.node(self);
            const std::vector<T>& dy = n.out.grad;
            for (int k = 0; k < 2; ++k)
                if (g.wants_grad(n.inputs[static_cast<size_t>(k)])) {
                    std::vector<T>& d = g.grad_buf(n.inputs[static_cast<size_t>(k)]);
                    for (size_t i = 0; i < d.size(); ++i) d[i] += dy[i];
                }
        });
    }

    NodeId scale(NodeId x, T c) {
        const Tensor<T>& xv = value(x);
        Tensor<T> y(xv.shape);
        for (size_t i = 0; i < y.data.size(); ++i) y.data[i] = c * xv.data[i];
        return push("scale", {}, {x}, std::move(y), [c](Graph& g, NodeId self) {
            Node& n = g.node(self);
            if (!g.wants_grad(n.inputs[0])) return;
            std::vector<T>& dx = g.grad_buf(n.inputs[0]);
            const std::vector<T>& dy = n.out.grad;
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += c * dy[i];
        });
    }

    NodeId reshape(NodeId x, Shape shape) {
        const Tensor<T>& xv = value(x);
        if (numel(shape) != xv.size())
            throw std::invalid_argument("reshape: " + shape_str(xv.shape) + " to " +
                                        shape_str(shape) + " changes element count");
        Tensor<T> y(std::move(shape), xv.data);
        return push("reshape", {}, {x}, std::move(y), [](Graph& g, NodeId self) {
            Node& n = g.node(self);
            if (!g.wants_grad(n.inputs[0])) return;
            std::vector<T>& dx = g.grad_buf(n.inputs[0]);
            const std::vector<T>& dy = n.out.grad;
            for (size_t i = 0; i < dx.size(); ++i) dx[i] += dy[i];
        });
    }

    // Tiles a vector [D] into [n, D]; backward sums over the tiled rows.
    NodeId repeat_rows(NodeId x, int64_t n) {
        const Tensor<T>& xv = value(x);
        if (xv.ndim() != 1)
            throw std::invalid_argument("repeat_rows: want a vector, got " + shape_str(xv.shape));
        const int64_t d = xv.shape[0];
        Tensor<T> y({n, d});
        for (int64_t r = 0; r < n; ++r)
            std::memcpy(y.data.data() + r * d, xv.data.data(), static_cast<size_t>(d) * sizeof(T));
        return push("repeat_rows", {}, {x}, std::move(y), [n, d](Graph& g, NodeId self) {
            Node& nd = g.node(self);
            if (!g.wants_grad(nd.inputs[0])) return;
            std::vector<T>& dx = g.grad_buf(nd.inputs[0]);
            const std::vector<T>& dy = nd.out.grad;
            for (int64_t r = 0; r < n; ++r)
                for (int64_t c = 0; c < d; ++c) dx[static_cast<size_t>(c)] += dy[static_cast<size_t>(r * d + c)];
        });
    }

    // Weighted mean of -log softmax(logits)[label]; log-sum-exp stabilized.
    // With class weights w, the loss is sum_i w[y_i] * l_i / sum_i w[y_i].
    NodeId cross_entropy(NodeId logits, std::vector<int32_t> labels,
                         const std::vector<T>* class_weights = nullptr) {
        const Tensor<T>& lv = value(logits);
        if (lv.ndim() != 2)
            throw std::invalid_argument("cross_entropy: want logits[N, C], got " +
                                        shape_str(lv.shape));
        const int64_t n = lv.shape[0];
        const int64_t c = lv.shape[1];
        if (static_cast<int64_t>(labels.size()) != n)
            throw std::invalid_argument("cross_entropy: " + std::to_string(labels.size()) +
                                        " labels for " + std::to_string(n) + " rows");
        for (int32_t y : labels)
            if (y < 0 || y >= c)
                throw std::out_of_range("cross_entropy: label " + std::to_string(y) +
                                        " out of range [0, " + std::to_string(c) + ")");
        std::vector<T> weights;
        if (class_weights) {
            if (static_cast<int64_t>(class_weights->size()) != c)
                throw std::invalid_argument("cross_entropy: want " + std::to_string(c) +
                                            " class weights, got " +
                                            std::to_string(class_weights->size()));
            weights = *class_weights;
        }
        T wsum = 0;
        T loss = 0;
        for (int64_t i = 0; i < n; ++i) {
            const T* row = lv.data.data() + i * c;
            T m = row[0];
            for (int64_t k = 1; k < c; ++k) m = std::max(m, row[k]);
            T denom = 0;
            for (int64_t k = 0; k < c; ++k) denom += std::exp(row[k] - m);
            const T li = std::log(denom) + m - row[labels[static_cast<size_t>(i)]];
            const T wi = weights.empty() ? T(1) : weights[static_cast<size_t>(labels[static_cast<size_t>(i)])];
            loss += wi * li;
            wsum += wi;
        }
        loss /= wsum;
        return push("cross_entropy", {}, {logits}, Tensor<T>::scalar(loss),
                    [labels = std::move(labels), weights = std::move(weights), n, c,
                     wsum](Graph& g, NodeId self) {
                        Node& nd = g.node(self);
                        if (!g.wants_grad(nd.inputs[0])) return;
                        std::vector<T>& dl = g.grad_buf(nd.inputs[0]);
                        const Tensor<T>& lv = g.value(nd.inputs[0]);
                        const T up = nd.out.grad[0];
#pragma omp parallel for schedule(static)
                        for (int64_t i = 0; i < n; ++i) {
                            const T* row = lv.data.data() + i * c;
                            T m = row[0];
                            for (int64_t k = 1; k < c; ++k) m = std::max(m, row[k]);
                            T denom = 0;
                            for (int64_t k = 0; k < c; ++k) denom += std::exp(row[k] - m);
                            const int32_t y = labels[static_cast<size_t>(i)];
                            const T wi = weights.empty() ? T(1) : weights[static_cast<size_t>(y)];
                            const T scale = up * wi / wsum;
                            T* drow = dl.data() + i * c;
                            for (int64_t k = 0; k < c; ++k) {
                                const T p = std::exp(row[k] - m) / denom;
                                drow[k] += scale * (p - (k == y ? T(1) : T(0)));
                            }
                        }
                    });
    }

    // Seeds the (scalar) root with 1 and walks the tape backwards once.
    void backward(NodeId root) {
        Node& r = node(root);
        if (r.out.size() != 1)
            throw std::invalid_argument("backward: root must be scalar, got " +
                                        shape_str(r.out.shape));
        r.out.ensure_grad();
        r.out.grad[0] = T(1);
        for (NodeId id = root; id >= 0; --id) {
            Node& n = node(id);
            if (n.back && !n.out.grad.empty() && n.out.requires_grad) n.back(*this, id);
        }
    }

    // First node (insertion order) holding a non-finite value, if any.
    std::optional<std::pair<NodeId, std::string>> find_nonfinite() const {
        for (size_t i = 0; i < nodes_.size(); ++i)
            if (!nodes_[i].out.all_finite())
                return std::make_pair(static_cast<NodeId>(i),
                                      std::string(nodes_[i].op) +
                                          (nodes_[i].label.empty() ? "" : " '" + nodes_[i].label + "'"));
        return std::nullopt;
    }

    Node& node(NodeId id) { return nodes_[static_cast<size_t>(id)]; }

private:
    bool wants_grad(NodeId id) { return node(id).out.requires_grad; }
    std::vector<T>& grad_buf(NodeId id) {
        Node& n = node(id);
        n.out.ensure_grad();
        return n.out.grad;
    }

    NodeId push(const char* op, std::string label, std::vector<NodeId> inputs, Tensor<T> out,
                std::function<void(Graph&, NodeId)> back) {
        if (!out.requires_grad)
            for (NodeId id : inputs)
                if (node(id).out.requires_grad) {
                    out.requires_grad = true;
                    break;
                }
#ifndef NDEBUG
        if (back && !out.all_finite())
            throw std::runtime_error("non-finite output of op '" + std::string(op) + "' (node " +
                                     std::to_string(nodes_.size()) + ")");
#endif
        nodes_.push_back(Node{op, std::move(label), std::move(inputs), std::move(out), std::move(back)});
        return static_cast<NodeId>(nodes_.size() - 1);
    }

    std::vector<Node> nodes_;
};

}  // namespace dpfa
