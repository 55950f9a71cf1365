#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "dpfa/bf.hpp"
#include "dpfa/synthetic.hpp"

using dpfa::BFConfig;
using dpfa::Graph;
using dpfa::ParamBind;
using dpfa::SegNetConfig;
using dpfa::Tensor;

namespace {

BFConfig default_bf(BFConfig::Mode mode = BFConfig::Mode::regularizer, double lambda = 0.2) {
    BFConfig cfg;
    cfg.mode = mode;
    cfg.lambda = lambda;
    cfg.background_classes = {0, 1, 2};  // ceiling, floor, wall
    return cfg;
}

Tensor<double> random_block(int64_t n, int64_t width, dpfa::Rng& rng) {
    Tensor<double> t({n, width});
    for (int64_t i = 0; i < n; ++i) {
        for (int64_t c = 0; c < 3; ++c) t.at2(i, c) = rng.uniform(0.0, 2.0);
        for (int64_t c = 3; c < width; ++c) t.at2(i, c) = rng.uniform(0.0, 1.0);
    }
    return t;
}

}  // namespace

TEST_CASE("bf label map sends background to 0 and foreground to 1") {
    const auto& table = dpfa::synthetic_class_table();
    const int32_t num_classes = static_cast<int32_t>(table.size());
    const BFConfig cfg = default_bf();

    const int32_t ceiling = 0;
    const int32_t tbl = 3;  // a furniture class
    const auto mapped = dpfa::bf_label_map({ceiling, tbl}, cfg, num_classes);
    CHECK(mapped == std::vector<int32_t>{0, 1});

    CHECK(dpfa::bf_label_map({}, cfg, num_classes).empty());
    CHECK_THROWS_AS(dpfa::bf_label_map({99}, cfg, num_classes), std::out_of_range);

    // every class lands in exactly one side of the partition
    std::vector<int32_t> all(static_cast<size_t>(num_classes));
    for (int32_t i = 0; i < num_classes; ++i) all[static_cast<size_t>(i)] = i;
    const auto sides = dpfa::bf_label_map(all, cfg, num_classes);
    int bg = 0, fg = 0;
    for (int32_t s : sides) (s == 0 ? bg : fg)++;
    CHECK(bg == 3);
    CHECK(fg == num_classes - 3);
}

TEST_CASE("bf config validation") {
    BFConfig cfg = default_bf();
    CHECK_NOTHROW(cfg.validate(8));
    cfg.lambda = 1.5;
    CHECK_THROWS(cfg.validate(8));
    cfg.lambda = 0.2;
    cfg.background_classes = {};
    CHECK_THROWS(cfg.validate(8));
    cfg.background_classes = {0, 1, 2, 3};
    CHECK_THROWS(cfg.validate(4));  // must be a proper subset
    CHECK_THROWS(dpfa::bf_mode_from_name("bogus"));
}

TEST_CASE("regularized loss hits the lambda endpoints exactly and is linear in lambda") {
    dpfa::Rng rng(5);
    const int64_t n = 10, c = 8;
    Tensor<double> seg_logits({n, c});
    Tensor<double> bf_logits({n, 2});
    for (double& v : seg_logits.data) v = rng.normal();
    for (double& v : bf_logits.data) v = rng.normal();
    std::vector<int32_t> labels(static_cast<size_t>(n));
    for (auto& l : labels) l = static_cast<int32_t>(rng.uniform_int(c));

    auto loss_at = [&](double lambda) {
        Graph<double> g;
        const auto s = g.leaf(seg_logits);
        const auto b = g.leaf(bf_logits);
        return g.value(dpfa::bf_regularized_loss(g, s, b, labels, default_bf(BFConfig::Mode::regularizer, lambda)))
            .data[0];
    };
    auto ce = [&](bool bf) {
        Graph<double> g;
        if (bf)
            return g.value(g.cross_entropy(g.leaf(bf_logits),
                                           dpfa::bf_label_map(labels, default_bf(), c)))
                .data[0];
        return g.value(g.cross_entropy(g.leaf(seg_logits), labels)).data[0];
    };

    const double l_seg = ce(false);
    const double l_bf = ce(true);
    CHECK(loss_at(0.0) == l_seg);  // exact endpoint identities
    CHECK(loss_at(1.0) == l_bf);
    for (double lambda : {0.25, 0.5}) {
        const double expect = l_seg + lambda * (l_bf - l_seg);
        CHECK(std::abs(loss_at(lambda) - expect) < 1e-6);
    }
}

TEST_CASE("regularized loss direct arithmetic case") {
    // engineered logits: peaked seg rows -> L_seg ~ 0; uniform bf rows -> ln 2
    const int64_t n = 4;
    Tensor<double> seg_logits({n, 8});
    for (int64_t i = 0; i < n; ++i) seg_logits.at2(i, 3) = 1e6;
    const Tensor<double> bf_logits({n, 2});
    const std::vector<int32_t> labels(static_cast<size_t>(n), 3);

    Graph<double> g;
    const auto loss = dpfa::bf_regularized_loss(g, g.leaf(seg_logits), g.leaf(bf_logits), labels,
                                                default_bf(BFConfig::Mode::regularizer, 0.5));
    CHECK(g.value(loss).data[0] == doctest::Approx(0.5 * std::log(2.0)));
}

TEST_CASE("one-hot encoding follows the class-id order") {
    Tensor<double> logits({2, 2});
    logits.at2(0, 0) = 2.0;  // background wins
    logits.at2(0, 1) = -1.0;
    logits.at2(1, 0) = -3.0;  // foreground wins
    logits.at2(1, 1) = 0.5;
    const auto onehot = dpfa::bf_onehot_from_logits(logits);
    CHECK(onehot.at2(0, 0) == 1.0);
    CHECK(onehot.at2(0, 1) == 0.0);
    CHECK(onehot.at2(1, 0) == 0.0);
    CHECK(onehot.at2(1, 1) == 1.0);

    const auto from_labels = dpfa::bf_onehot<double>({0, 1, 1});
    CHECK(from_labels.at2(0, 0) == 1.0);
    CHECK(from_labels.at2(2, 1) == 1.0);
}

TEST_CASE("augmented features widen by two and keep the original columns") {
    dpfa::Rng rng(7);
    const auto block = random_block(6, 9, rng);
    const auto onehot = dpfa::bf_onehot<double>({0, 1, 0, 1, 0, 1});
    const auto wide = dpfa::augment_features(block, onehot);
    CHECK(wide.shape == dpfa::Shape{6, 11});
    for (int64_t i = 0; i < 6; ++i) {
        for (int64_t c = 0; c < 9; ++c) CHECK(wide.at2(i, c) == block.at2(i, c));
        CHECK(wide.at2(i, 9) == (i % 2 == 0 ? 1.0 : 0.0));
        CHECK(wide.at2(i, 10) == (i % 2 == 0 ? 0.0 : 1.0));
    }
    CHECK_THROWS(dpfa::augment_features(block, dpfa::bf_onehot<double>({0, 1})));
}

TEST_CASE("two-stage pipeline blocks every gradient into the first network") {
    dpfa::Rng rng(11);
    SegNetConfig c1;
    c1.input_dim = 9;
    c1.num_classes = 2;
    c1.widths = {6, 6};
    c1.emb_width = 8;
    c1.head_widths = {};
    c1.k = 3;
    auto net1 = dpfa::make_seg_net<double>(c1, rng);

    SegNetConfig c2 = c1;
    c2.input_dim = 11;
    c2.num_classes = 5;
    auto net2 = dpfa::make_seg_net<double>(c2, rng);

    dpfa::Rng data(13);
    const auto block = random_block(14, 9, data);
    std::vector<int32_t> labels(14);
    for (auto& l : labels) l = static_cast<int32_t>(data.uniform_int(5));

    Graph<double> g;
    ParamBind<double> bind2;
    const auto nodes2 = bind_seg_net(g, net2, bind2, "net2");
    ParamBind<double> bind1;  // trainable on purpose: gradients must still be zero
    const auto fw = dpfa::two_stage_forward(g, block, net1, nodes2, &bind1);
    CHECK(g.value(fw.logits).shape == dpfa::Shape{14, 5});

    g.backward(g.cross_entropy(fw.logits, labels));
    for (const auto& [tensor, node] : bind1.entries) {
        (void)tensor;
        const auto& grad = g.grad(node);
        bool zero = true;
        for (double v : grad) zero &= (v == 0.0);
        CHECK(zero);
    }
    // and the second network does learn: at least one non-zero gradient
    bool any = false;
    for (const auto& [tensor, node] : bind2.entries) {
        (void)tensor;
        for (double v : g.grad(node)) any |= (v != 0.0);
    }
    CHECK(any);

    // first network must be binary
    CHECK_THROWS(dpfa::two_stage_forward(g, block, net2, nodes2));
}

TEST_CASE("bf head off reproduces vanilla outputs bit-identically") {
    dpfa::Rng rng(17);
    SegNetConfig cfg;
    cfg.input_dim = 9;
    cfg.num_classes = 6;
    cfg.widths = {8, 8};
    cfg.emb_width = 12;
    cfg.head_widths = {10};
    cfg.k = 4;
    auto net = dpfa::make_seg_net<double>(cfg, rng);
    auto bf_head = dpfa::make_bf_head<double>(12 + 16, 0.2, rng);

    dpfa::Rng data(19);
    const auto block = random_block(16, 9, data);

    auto vanilla = [&] {
        Graph<double> g;
        ParamBind<double> bind;
        const auto nodes = bind_seg_net(g, net, bind, "seg");
        return g.value(dpfa::seg_forward(g, block, nodes).logits).data;
    }();
    auto with_head = [&] {
        Graph<double> g;
        ParamBind<double> bind;
        const auto nodes = bind_seg_net(g, net, bind, "seg");
        const auto fw = dpfa::seg_forward(g, block, nodes);
        auto head = bind_mlp(g, bf_head.head, bind, "bf");
        (void)dpfa::mlp_forward(g, head, fw.femb);  // auxiliary branch attached
        return g.value(fw.logits).data;
    }();
    CHECK(vanilla == with_head);
}
