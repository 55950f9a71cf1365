#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "dpfa/dataset_gen.hpp"
#include "dpfa/train.hpp"

using dpfa::AdamConfig;
using dpfa::AdamState;
using dpfa::KeyValueFile;
using dpfa::ParamRef;
using dpfa::RunConfig;
using dpfa::Tensor;

namespace {

namespace fs = std::filesystem;

fs::path temp_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / "dpfa_train_tests" / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

// Tiny but learnable dataset: 3 train / 2 test scenes.
fs::path tiny_dataset() {
    static const fs::path dir = [] {
        const fs::path d = temp_dir("tiny_ds");
        dpfa::DatasetSpec spec;
        spec.seed = 99;
        spec.train_scenes = 3;
        spec.test_scenes = 2;
        spec.room_min = 1.6;
        spec.room_max = 1.8;
        spec.room_height = 2.2;
        spec.boxes_min = 2;
        spec.boxes_max = 3;
        spec.cylinders_min = 1;
        spec.cylinders_max = 2;
        spec.background_density = 150;
        spec.foreground_density = 250;
        std::ostringstream sink;
        dpfa::generate_dataset(spec, d, sink);
        return d;
    }();
    return dir;
}

RunConfig tiny_config(const fs::path& out) {
    RunConfig cfg;
    cfg.seed = 7;
    cfg.k = 4;
    cfg.widths = {6, 6};
    cfg.d_pos = 6;
    cfg.emb_width = 8;
    cfg.head_widths = {};
    cfg.epochs = 3;
    cfg.batch_size = 4;
    cfg.lr = 0.005;
    cfg.points_per_block = 64;
    cfg.min_points = 16;
    cfg.train_dir = (tiny_dataset() / "train").string();
    cfg.test_dir = (tiny_dataset() / "test").string();
    cfg.out_dir = out.string();
    return cfg;
}

std::string file_bytes(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

}  // namespace

TEST_CASE("paper defaults: batch size 5, neighborhood 20, lr schedule") {
    const RunConfig defaults;
    CHECK(defaults.batch_size == 5);
    CHECK(defaults.k == 20);
    CHECK(defaults.lr == 0.001);
    CHECK(defaults.decay == 0.7);
    CHECK(defaults.decay_every == 20);
    CHECK(defaults.widths == std::vector<int64_t>{64, 64, 64});
}

TEST_CASE("staircase learning rate") {
    const AdamConfig cfg;
    CHECK(dpfa::lr_at(0, cfg) == doctest::Approx(0.001));
    CHECK(dpfa::lr_at(19, cfg) == doctest::Approx(0.001));
    CHECK(dpfa::lr_at(20, cfg) == doctest::Approx(0.0007));
    CHECK(dpfa::lr_at(40, cfg) == doctest::Approx(0.00049));
    CHECK_THROWS(dpfa::lr_at(-1, cfg));
    // non-increasing, piecewise constant
    double prev = 1.0;
    for (int64_t e = 0; e < 100; ++e) {
        const double lr = dpfa::lr_at(e, cfg);
        CHECK(lr <= prev + 1e-15);
        if (e % 20 != 0) CHECK(lr == doctest::Approx(prev));
        prev = lr;
    }
}

TEST_CASE("adam: zero gradient leaves parameters unchanged") {
    Tensor<double> p = Tensor<double>::from({3}, {1.0, -2.0, 0.5});
    std::vector<ParamRef<double>> refs = {{"p", &p}};
    AdamState<double> state;
    state.init(refs);
    adam_step(refs, {std::vector<double>(3, 0.0)}, state, AdamConfig{}, 0.001);
    CHECK(p.data == std::vector<double>{1.0, -2.0, 0.5});
}

TEST_CASE("adam: first bias-corrected step moves by about minus lr") {
    Tensor<double> p = Tensor<double>::scalar(0.0);
    std::vector<ParamRef<double>> refs = {{"p", &p}};
    AdamState<double> state;
    state.init(refs);
    adam_step(refs, {{1.0}}, state, AdamConfig{}, 0.001);
    // hand-rolled single step: m-hat = 1, v-hat = 1 -> step = lr / (1 + eps)
    CHECK(p.data[0] == doctest::Approx(-0.001 / (1.0 + 1e-8)).epsilon(1e-12));
    CHECK(state.step == 1);
}

TEST_CASE("adam trajectories are bit-identical across identical runs") {
    auto run = [] {
        dpfa::Rng rng(3);
        Tensor<double> p({8});
        for (double& v : p.data) v = rng.normal();
        std::vector<ParamRef<double>> refs = {{"p", &p}};
        AdamState<double> state;
        state.init(refs);
        for (int step = 0; step < 50; ++step) {
            std::vector<double> g(8);
            for (double& v : g) v = rng.normal();
            adam_step(refs, {g}, state, AdamConfig{}, 0.01);
        }
        return p.data;
    };
    CHECK(run() == run());
}

TEST_CASE("adam rejects non-finite gradients naming the parameter") {
    Tensor<double> p = Tensor<double>::scalar(0.0);
    std::vector<ParamRef<double>> refs = {{"layer.w0", &p}};
    AdamState<double> state;
    state.init(refs);
    try {
        adam_step(refs, {{std::numeric_limits<double>::quiet_NaN()}}, state, AdamConfig{}, 0.001);
        FAIL("expected an error");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("layer.w0") != std::string::npos);
    }
}

TEST_CASE("metrics from hand-computed confusion matrices") {
    // perfect predictions
    const auto perfect = dpfa::metrics_from_confusion({5, 0, 0, 7}, 2);
    CHECK(perfect.oa == 1.0);
    CHECK(perfect.miou == 1.0);

    const auto mixed = dpfa::metrics_from_confusion({50, 10, 10, 30}, 2);
    CHECK(mixed.oa == doctest::Approx(0.8));
    CHECK(mixed.per_class_iou[0] == doctest::Approx(50.0 / 70.0));
    CHECK(mixed.per_class_iou[1] == doctest::Approx(30.0 / 50.0));
    CHECK(mixed.miou == doctest::Approx(0.5 * (5.0 / 7.0 + 3.0 / 5.0)));

    // class 2 absent from truth and prediction: skipped from the mean
    const auto absent = dpfa::metrics_from_confusion({4, 0, 0, 0, 6, 0, 0, 0, 0}, 3);
    CHECK(absent.iou_valid[2] == 0);
    CHECK(absent.miou == 1.0);

    CHECK_THROWS(dpfa::metrics_from_confusion({1, 2, 3}, 2));
}

TEST_CASE("checkpoints round-trip parameters, optimizer and rng state") {
    dpfa::Rng rng(11);
    Tensor<float> a({4, 3});
    Tensor<float> b({3});
    for (float& v : a.data) v = static_cast<float>(rng.normal());
    for (float& v : b.data) v = static_cast<float>(rng.normal());
    std::vector<ParamRef<float>> refs = {{"m.w0", &a}, {"m.b0", &b}};
    AdamState<float> state;
    state.init(refs);
    state.step = 17;
    state.slots[0].m[2] = 0.25f;

    const auto path = temp_dir("ckpt") / "model.ckpt";
    dpfa::save_checkpoint<float>(path, refs, &state, 42, "rngstate", {{"task", "seg"}});

    Tensor<float> a2({4, 3});
    Tensor<float> b2({3});
    std::vector<ParamRef<float>> refs2 = {{"m.w0", &a2}, {"m.b0", &b2}};
    const auto loaded = dpfa::load_checkpoint<float>(path, refs2);
    CHECK(a2.data == a.data);
    CHECK(b2.data == b.data);
    CHECK(loaded.info.epoch == 42);
    CHECK(loaded.rng_state == "rngstate");
    CHECK(loaded.opt.step == 17);
    CHECK(loaded.opt.slots[0].m[2] == 0.25f);
    CHECK(loaded.info.meta.at("task") == "seg");
    CHECK(dpfa::probe_checkpoint(path).precision_bits == 32);

    // step-0 optimizer round-trips too
    AdamState<float> fresh;
    fresh.init(refs);
    dpfa::save_checkpoint<float>(path, refs, &fresh, 0, "s", {});
    CHECK(dpfa::load_checkpoint<float>(path, refs2).opt.step == 0);
}

TEST_CASE("checkpoint mismatches are named") {
    Tensor<float> a({2, 2});
    std::vector<ParamRef<float>> refs = {{"m.w0", &a}};
    const auto path = temp_dir("ckpt_bad") / "model.ckpt";
    dpfa::save_checkpoint<float>(path, refs, nullptr, 0, "s", {});

    Tensor<float> wrong({3, 2});
    std::vector<ParamRef<float>> wrong_shape = {{"m.w0", &wrong}};
    try {
        dpfa::load_checkpoint<float>(path, wrong_shape);
        FAIL("expected shape mismatch");
    } catch (const std::runtime_error& e) {
        const std::string msg = e.what();
        CHECK(msg.find("m.w0") != std::string::npos);
        CHECK(msg.find("[3, 2]") != std::string::npos);
    }

    Tensor<float> other({2, 2});
    std::vector<ParamRef<float>> wrong_name = {{"other.w0", &other}};
    CHECK_THROWS(dpfa::load_checkpoint<float>(path, wrong_name));

    Tensor<double> dbl({2, 2});
    std::vector<ParamRef<double>> wrong_precision = {{"m.w0", &dbl}};
    CHECK_THROWS(dpfa::load_checkpoint<double>(path, wrong_precision));

    // truncation and bad magic
    const auto stub = temp_dir("ckpt_bad") / "trunc.ckpt";
    std::ofstream(stub, std::ios::binary) << "DPFACKPT";
    CHECK_THROWS(dpfa::load_checkpoint<float>(stub, refs));
    const auto nomagic = temp_dir("ckpt_bad") / "nomagic.ckpt";
    std::ofstream(nomagic, std::ios::binary) << "NOTACKPTxxxxxxxxxxxxxxxx";
    CHECK_THROWS(dpfa::load_checkpoint<float>(nomagic, refs));
}

TEST_CASE("config parsing: comments, lists, unknown keys, validation") {
    const auto kv = KeyValueFile::parse("# comment\nseed = 5\nwidths = 8, 8\nlr = 0.01\n");
    CHECK(kv.get_int("seed", 0) == 5);
    CHECK(kv.get_int_list("widths", {}) == std::vector<int64_t>{8, 8});
    CHECK_THROWS(KeyValueFile::parse("novalue\n"));
    CHECK_THROWS(KeyValueFile::parse("a = 1\na = 2\n"));

    KeyValueFile bad;
    bad.values["definitely_not_a_key"] = "1";
    CHECK_THROWS(RunConfig::from_kv(bad));

    KeyValueFile two_stage;
    two_stage.values["bf.mode"] = "two_stage";
    CHECK_THROWS(RunConfig::from_kv(two_stage));  // needs bf.net1

    KeyValueFile bad_lambda;
    bad_lambda.values["lambda"] = "1.5";
    CHECK_THROWS(RunConfig::from_kv(bad_lambda));
}

TEST_CASE("seeded training runs are deterministic and resumable") {
    auto cfg_a = tiny_config(temp_dir("run_a"));
    const auto a = dpfa::train_seg_run<float>(cfg_a, dpfa::TrainTask::seg, std::cout);

    auto cfg_c = tiny_config(temp_dir("run_c"));
    const auto c = dpfa::train_seg_run<float>(cfg_c, dpfa::TrainTask::seg, std::cout);
    CHECK(a.final_test.to_kv() == c.final_test.to_kv());
    CHECK(a.epoch_losses == c.epoch_losses);
    CHECK(file_bytes(a.last_checkpoint) == file_bytes(c.last_checkpoint));

    // stop after two epochs, resume for the third: identical trajectory
    auto cfg_b = tiny_config(temp_dir("run_b"));
    cfg_b.epochs = 2;
    const auto b_short = dpfa::train_seg_run<float>(cfg_b, dpfa::TrainTask::seg, std::cout);
    cfg_b.epochs = 3;
    cfg_b.resume = b_short.last_checkpoint.string();
    const auto b = dpfa::train_seg_run<float>(cfg_b, dpfa::TrainTask::seg, std::cout);
    CHECK(file_bytes(a.last_checkpoint) == file_bytes(b.last_checkpoint));
    CHECK(a.final_test.to_kv() == b.final_test.to_kv());
}

TEST_CASE("evaluating the saved checkpoint reproduces the final report") {
    auto cfg = tiny_config(temp_dir("run_eval"));
    cfg.epochs = 2;
    const auto result = dpfa::train_seg_run<float>(cfg, dpfa::TrainTask::seg, std::cout);
    std::ostringstream sink;
    const auto report = dpfa::eval_seg_checkpoint<float>(result.last_checkpoint, cfg, sink);
    CHECK(report.oa == result.final_test.oa);
    CHECK(report.miou == result.final_test.miou);
    CHECK(report.confusion == result.final_test.confusion);
}

TEST_CASE("bf pretraining yields a binary checkpoint usable as a first stage") {
    auto cfg = tiny_config(temp_dir("run_bf1"));
    cfg.epochs = 2;
    const auto net1 = dpfa::train_seg_run<float>(cfg, dpfa::TrainTask::bf_pretrain, std::cout);
    CHECK(net1.final_test.num_classes == 2);

    auto cfg2 = tiny_config(temp_dir("run_two_stage"));
    cfg2.epochs = 2;
    cfg2.bf_mode = dpfa::BFConfig::Mode::two_stage;
    cfg2.net1_checkpoint = net1.last_checkpoint.string();
    const auto two = dpfa::train_seg_run<float>(cfg2, dpfa::TrainTask::seg, std::cout);
    CHECK(two.final_test.num_classes == 8);

    // oracle-driven two-stage works without any checkpoint
    auto cfg3 = tiny_config(temp_dir("run_oracle"));
    cfg3.epochs = 2;
    cfg3.bf_mode = dpfa::BFConfig::Mode::two_stage;
    cfg3.net1_checkpoint = "oracle";
    const auto oracle = dpfa::train_seg_run<float>(cfg3, dpfa::TrainTask::seg, std::cout);
    CHECK(oracle.final_test.points > 0);
}

TEST_CASE("bf regularizer mode trains end to end") {
    auto cfg = tiny_config(temp_dir("run_bfreg"));
    cfg.epochs = 2;
    cfg.bf_mode = dpfa::BFConfig::Mode::regularizer;
    cfg.lambda = 0.3;
    const auto result = dpfa::train_seg_run<float>(cfg, dpfa::TrainTask::seg, std::cout);
    CHECK(result.final_test.points > 0);
    CHECK(std::isfinite(result.epoch_losses.back()));
}

TEST_CASE("class-table mismatches abort before training") {
    const auto alt = temp_dir("alt_table");
    dpfa::LabeledCloud odd;
    odd.class_table = {"p", "q"};
    odd.coords.assign(64, {0.5, 0.5, 0.5});
    odd.colors.assign(64, {0.5, 0.5, 0.5});
    odd.labels.assign(64, 0);
    dpfa::save_cloud(odd, alt / "scene.txt");

    auto cfg = tiny_config(temp_dir("run_mismatch"));
    cfg.test_dir = alt.string();
    CHECK_THROWS(dpfa::train_seg_run<float>(cfg, dpfa::TrainTask::seg, std::cout));
}

TEST_CASE("training aborts when the loss goes non-finite") {
    auto cfg = tiny_config(temp_dir("run_nan"));
    cfg.lr = 1e18;  // blows the parameters up within an epoch
    cfg.epochs = 2;
    try {
        dpfa::train_seg_run<float>(cfg, dpfa::TrainTask::seg, std::cout);
        FAIL("expected divergence to be detected");
    } catch (const std::runtime_error& e) {
        CHECK(std::string(e.what()).find("epoch") != std::string::npos);
    }
}

TEST_CASE("classification training runs end to end deterministically") {
    auto cfg = tiny_config(temp_dir("run_cls"));
    cfg.epochs = 2;
    cfg.widths = {6, 6};
    cfg.points_per_cloud = 96;
    const auto a = dpfa::train_cls_run<float>(cfg, std::cout);
    CHECK(a.final_test.points == 2);  // two test clouds
    auto cfg_b = tiny_config(temp_dir("run_cls_b"));
    cfg_b.epochs = 2;
    cfg_b.widths = {6, 6};
    cfg_b.points_per_cloud = 96;
    const auto b = dpfa::train_cls_run<float>(cfg_b, std::cout);
    CHECK(a.final_test.to_kv() == b.final_test.to_kv());
}

TEST_CASE("prediction labels every point of a cloud") {
    auto cfg = tiny_config(temp_dir("run_predict"));
    cfg.epochs = 1;
    const auto result = dpfa::train_seg_run<float>(cfg, dpfa::TrainTask::seg, std::cout);

    const auto scene = dpfa::load_cloud(fs::path(cfg.test_dir) / "scene_000.txt");
    const auto labeled = dpfa::predict_cloud<float>(result.last_checkpoint, cfg, scene);
    CHECK(labeled.size() == scene.size());
    CHECK(labeled.class_table == scene.class_table);
    for (int32_t l : labeled.labels) {
        CHECK(l >= 0);
        CHECK(l < 8);
    }
}

TEST_CASE("bench reports positive forward latency") {
    auto cfg = tiny_config(temp_dir("run_bench"));
    std::ostringstream sink;
    const auto report = dpfa::bench_run<float>(cfg, {}, 1, 5, sink);
    CHECK(report.points == 64);
    CHECK(report.stats.median_ms > 0.0);
    CHECK(report.stats.p95_ms >= report.stats.median_ms);
    CHECK(sink.str().find("bench.median_ms=") != std::string::npos);
}
