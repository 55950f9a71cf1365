#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dpfa/grad_check.hpp"
#include "dpfa/networks.hpp"
#include "oracles.hpp"

using dpfa::ClsNetConfig;
using dpfa::Graph;
using dpfa::ParamBind;
using dpfa::SegNetConfig;
using dpfa::Shape;
using dpfa::Tensor;

namespace {

template <typename T>
Tensor<T> random_block(int64_t n, int64_t width, dpfa::Rng& rng) {
    Tensor<T> t({n, width});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < 3; ++c) t.at2(i, c) = static_cast<T>(rng.uniform(0.0, 2.0));
        for (int64_t c = 3; c < width; ++c) t.at2(i, c) = static_cast<T>(rng.uniform(0.0, 1.0));
    }
    return t;
}

template <typename T>
Tensor<T> permute_rows(const Tensor<T>& t, const std::vector<int64_t>& perm) {
    Tensor<T> out(t.shape);
    for (int64_t i = 0; i < t.shape[0]; ++i)
        for (int64_t c = 0; c < t.shape[1]; ++c)
            out.at2(i, c) = t.at2(perm[static_cast<size_t>(i)], c);
    return out;
}

template <typename T>
Tensor<T> run_seg(dpfa::SegNetParams<T>& net, const Tensor<T>& block) {
    Graph<T> g;
    ParamBind<T> bind;
    bind.trainable = false;
    const auto nodes = bind_seg_net(g, net, bind, "seg");
    return g.value(dpfa::seg_forward(g, block, nodes).logits);
}

template <typename T>
Tensor<T> run_cls(dpfa::ClsNetParams<T>& net, const Tensor<T>& cloud) {
    Graph<T> g;
    ParamBind<T> bind;
    bind.trainable = false;
    const auto nodes = bind_cls_net(g, net, bind);
    return g.value(dpfa::cls_forward(g, cloud, nodes).probs);
}

// Rebuilds graph-node views of a seg net whose parameters come from leaf ids,
// in collect_params order (single-linear psi maps assumed).
dpfa::SegNetNodes<double> seg_nodes_from_ids(Graph<double>& g,
                                             const std::vector<Graph<double>::NodeId>& ids,
                                             size_t base, const SegNetConfig& cfg) {
    dpfa::SegNetNodes<double> nodes;
    size_t p = base;
    for (size_t l = 0; l < cfg.widths.size(); ++l) {
        dpfa::FALayerNodes<double> fa;
        fa.psi_pos.layers = {{ids[p], ids[p + 1]}};
        fa.psi_pos.output_activation = true;
        fa.psi_att.layers = {{ids[p + 2], ids[p + 3]}};
        fa.psi_cut.layers = {{ids[p + 4], ids[p + 5]}};
        p += 6;
        nodes.fa.push_back(fa);
    }
    nodes.psi_emb.layers = {{ids[p], ids[p + 1]}};
    nodes.psi_emb.output_activation = true;
    p += 2;
    for (size_t l = 0; l + 1 < cfg.head_widths.size() + 2; ++l) {
        nodes.seg_head.layers.push_back({ids[p], ids[p + 1]});
        p += 2;
    }
    nodes.k = cfg.k;
    return nodes;
}

}  // namespace

TEST_CASE("seg logits shape and configuration errors") {
    SegNetConfig cfg;
    cfg.input_dim = 9;
    cfg.num_classes = 5;
    cfg.widths = {8, 8, 8};
    cfg.emb_width = 16;
    cfg.head_widths = {12};
    cfg.k = 4;
    dpfa::Rng rng(3);
    auto net = dpfa::make_seg_net<float>(cfg, rng);

    dpfa::Rng data(5);
    const auto block = random_block<float>(20, 9, data);
    const auto logits = run_seg(net, block);
    CHECK(logits.shape == Shape{20, 5});

    const auto narrow = random_block<float>(20, 7, data);
    CHECK_THROWS(run_seg(net, narrow));
}

TEST_CASE("seg logits are permutation equivariant at 32-bit") {
    SegNetConfig cfg;
    cfg.input_dim = 9;
    cfg.num_classes = 4;
    cfg.widths = {8, 8, 8};
    cfg.emb_width = 16;
    cfg.head_widths = {12};
    cfg.k = 5;
    dpfa::Rng rng(7);
    auto net = dpfa::make_seg_net<float>(cfg, rng);

    dpfa::Rng data(11);
    const int64_t n = 24;
    const auto block = random_block<float>(n, 9, data);
    const auto base = run_seg(net, block);

    dpfa::Rng permrng(13);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int64_t> perm(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        permrng.shuffle(perm);
        const auto moved = run_seg(net, permute_rows(block, perm));
        for (int64_t i = 0; i < n; ++i)
            for (int64_t c = 0; c < 4; ++c)
                CHECK(moved.at2(i, c) ==
                      doctest::Approx(base.at2(perm[static_cast<size_t>(i)], c)).epsilon(1e-5));
    }
}

TEST_CASE("duplicated input points get identical logit rows") {
    SegNetConfig cfg;
    cfg.input_dim = 9;
    cfg.num_classes = 3;
    cfg.widths = {8, 8};
    cfg.emb_width = 12;
    cfg.head_widths = {};
    cfg.k = 4;
    dpfa::Rng rng(17);
    auto net = dpfa::make_seg_net<float>(cfg, rng);

    dpfa::Rng data(19);
    auto block = random_block<float>(12, 9, data);
    for (int64_t c = 0; c < 9; ++c) block.at2(7, c) = block.at2(2, c);  // duplicate point 2 as 7

    const auto logits = run_seg(net, block);
    for (int64_t c = 0; c < 3; ++c)
        CHECK(logits.at2(7, c) == doctest::Approx(logits.at2(2, c)).epsilon(1e-6));
}

TEST_CASE("miniature seg network gradient vs finite differences") {
    SegNetConfig cfg;
    cfg.input_dim = 6;
    cfg.num_classes = 3;
    cfg.widths = {8, 8, 8};
    cfg.d_pos = 8;
    cfg.emb_width = 16;
    cfg.head_widths = {};
    cfg.k = 4;
    dpfa::Rng rng(23);
    auto net = dpfa::make_seg_net<double>(cfg, rng);
    std::vector<dpfa::ParamRef<double>> refs;
    collect_params(net, "seg", refs);

    dpfa::Rng data(29);
    const int64_t n = 12;
    std::vector<Tensor<double>> inputs = {random_block<double>(n, 6, data)};
    for (const auto& r : refs) inputs.push_back(*r.tensor);
    std::vector<int32_t> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = static_cast<int32_t>(data.uniform_int(3));

    dpfa::GradCheckBuild<double> build = [&](Graph<double>& g,
                                             const std::vector<Graph<double>::NodeId>& ids) {
        const auto nodes = seg_nodes_from_ids(g, ids, 1, cfg);
        // mirror seg_forward, but with the input as a differentiable leaf
        const Tensor<double> coords = dpfa::slice_cols(g.value(ids[0]), 0, 3);
        auto features = ids[0];
        std::vector<Graph<double>::NodeId> outs;
        Tensor<double> search = coords;
        for (const auto& layer : nodes.fa) {
            const auto fa = dpfa::fa_forward(g, coords, features, layer, nodes.k, search);
            features = fa.out;
            outs.push_back(fa.out);
            search = g.value(features);
        }
        const auto cat = g.concat(outs, 1);
        const auto emb = dpfa::mlp_forward(g, nodes.psi_emb, g.reduce_max(cat, 0));
        const auto femb = g.concat({cat, g.repeat_rows(emb, n)}, 1);
        return g.cross_entropy(dpfa::mlp_forward(g, nodes.seg_head, femb), labels);
    };
    const auto report = dpfa::grad_check<double>(build, inputs, 1e-5);
    CHECK(report.checked > 1000);
    CHECK(report.max_rel_err < 1e-4);
}

TEST_CASE("cls probabilities are a distribution and permutation invariant") {
    ClsNetConfig cfg;
    cfg.input_dim = 6;
    cfg.num_classes = 5;
    cfg.widths = {8, 12, 16};
    cfg.k = 4;
    dpfa::Rng rng(31);
    auto net = dpfa::make_cls_net<float>(cfg, rng);

    dpfa::Rng data(37);
    const int64_t n = 30;
    const auto cloud = random_block<float>(n, 6, data);
    const auto base = run_cls(net, cloud);
    CHECK(base.shape == Shape{5});
    double sum = 0;
    for (float v : base.data) sum += v;
    CHECK(std::abs(sum - 1.0) < 1e-6);

    dpfa::Rng permrng(41);
    for (int trial = 0; trial < 20; ++trial) {
        std::vector<int64_t> perm(static_cast<size_t>(n));
        for (int64_t i = 0; i < n; ++i) perm[static_cast<size_t>(i)] = i;
        permrng.shuffle(perm);
        const auto moved = run_cls(net, permute_rows(cloud, perm));
        for (int64_t c = 0; c < 5; ++c)
            CHECK(moved.data[static_cast<size_t>(c)] ==
                  doctest::Approx(base.data[static_cast<size_t>(c)]).epsilon(1e-5));
    }
}

TEST_CASE("single-point cloud stays finite through self padding") {
    ClsNetConfig cfg;
    cfg.input_dim = 6;
    cfg.num_classes = 4;
    cfg.widths = {8, 8, 8};
    cfg.k = 6;
    dpfa::Rng rng(43);
    auto net = dpfa::make_cls_net<float>(cfg, rng);
    dpfa::Rng data(47);
    const auto lone = random_block<float>(1, 6, data);
    const auto probs = run_cls(net, lone);
    double sum = 0;
    for (float v : probs.data) {
        CHECK(std::isfinite(v));
        sum += v;
    }
    CHECK(std::abs(sum - 1.0) < 1e-6);
}

TEST_CASE("seg net invariants on widths") {
    SegNetConfig cfg;
    cfg.widths = {64, 64, 64};
    cfg.num_classes = 13;
    dpfa::Rng rng(53);
    auto net = dpfa::make_seg_net<float>(cfg, rng);
    CHECK(net.psi_emb.in_dim() == 64 * 3);
    CHECK(net.psi_emb.out_dim() == 1024);
    CHECK(net.seg_head.in_dim() == 1024 + 64 * 3);
    CHECK(net.seg_head.out_dim() == 13);

    ClsNetConfig ccfg;
    dpfa::Rng rng2(59);
    auto cnet = dpfa::make_cls_net<float>(ccfg, rng2);
    CHECK(cnet.psi_ccut.out_dim() == 64 + 128 + 256);
    CHECK(cnet.psi_cls.in_dim() == 448);
}
