#include <iostream>

#include <CLI11.hpp>

#include "dpfa/dataset_gen.hpp"
#include "dpfa/train.hpp"

namespace {

dpfa::RunConfig load_run_config(const std::string& config_path, const std::string& out_override,
                                const std::string& resume_override, int64_t seed_override) {
    dpfa::RunConfig cfg = dpfa::RunConfig::from_file(config_path);
    if (!out_override.empty()) cfg.out_dir = out_override;
    if (!resume_override.empty()) cfg.resume = resume_override;
    if (seed_override >= 0) cfg.seed = static_cast<uint64_t>(seed_override);
    return cfg;
}

void print_result(const dpfa::TrainResult& result, bool binary) {
    const auto names = binary ? std::vector<std::string>{"background", "foreground"}
                              : result.class_table;
    std::cout << "final:\n" << result.final_test.to_table(names);
    std::cout << result.final_test.to_kv();
    if (result.best_epoch >= 0)
        std::cout << "best.epoch=" << result.best_epoch << "\nbest.miou=" << result.best_miou
                  << "\n";
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"point-cloud segmentation and classification with dynamic KNN feature "
                 "aggregation and attention pooling"};
    app.require_subcommand(1);

    std::string spec_path, out_dir, config_path, checkpoint, resume, input_path, output_path;
    int64_t seed_override = -1;
    int bench_runs = 30, bench_warmup = 5;

    auto* gen = app.add_subcommand("gen-synthetic", "generate a synthetic scene dataset");
    gen->add_option("--spec", spec_path, "dataset spec file (key = value)")->required();
    gen->add_option("--out", out_dir, "output dataset directory")->required();
    gen->add_option("--seed", seed_override, "override the spec seed");

    auto add_train_options = [&](CLI::App* cmd) {
        cmd->add_option("--config", config_path, "run config file (key = value)")->required();
        cmd->add_option("--out", out_dir, "override out_dir");
        cmd->add_option("--resume", resume, "resume from a checkpoint");
        cmd->add_option("--seed", seed_override, "override the config seed");
    };
    auto* train_seg = app.add_subcommand("train-seg", "train the semantic segmentation network");
    add_train_options(train_seg);
    auto* train_cls = app.add_subcommand("train-cls", "train the object classification network");
    add_train_options(train_cls);
    auto* bf_pretrain =
        app.add_subcommand("bf-pretrain", "train the binary background/foreground first stage");
    add_train_options(bf_pretrain);

    auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test split");
    eval->add_option("--config", config_path, "run config file")->required();
    eval->add_option("--checkpoint", checkpoint, "checkpoint to evaluate")->required();

    auto* predict = app.add_subcommand("predict", "label a point cloud file");
    predict->add_option("--checkpoint", checkpoint, "segmentation checkpoint")->required();
    predict->add_option("--input", input_path, "input cloud (.txt)")->required();
    predict->add_option("--output", output_path, "output labeled cloud (.txt)")->required();

    auto* bench = app.add_subcommand("bench", "forward latency of a single block");
    bench->add_option("--config", config_path, "run config file")->required();
    bench->add_option("--checkpoint", checkpoint, "optional checkpoint (fresh weights otherwise)");
    bench->add_option("--runs", bench_runs, "timed runs (median reported)");
    bench->add_option("--warmup", bench_warmup, "warmup runs");

    CLI11_PARSE(app, argc, argv);

    try {
        if (gen->parsed()) {
            dpfa::DatasetSpec spec = dpfa::DatasetSpec::from_file(spec_path);
            if (seed_override >= 0) spec.seed = static_cast<uint64_t>(seed_override);
            dpfa::generate_dataset(spec, out_dir, std::cout);
        } else if (train_seg->parsed()) {
            const auto cfg = load_run_config(config_path, out_dir, resume, seed_override);
            print_result(dpfa::train_seg_any(cfg, dpfa::TrainTask::seg, std::cout), false);
        } else if (bf_pretrain->parsed()) {
            const auto cfg = load_run_config(config_path, out_dir, resume, seed_override);
            print_result(dpfa::train_seg_any(cfg, dpfa::TrainTask::bf_pretrain, std::cout), true);
        } else if (train_cls->parsed()) {
            const auto cfg = load_run_config(config_path, out_dir, resume, seed_override);
            print_result(dpfa::train_cls_any(cfg, std::cout), false);
        } else if (eval->parsed()) {
            const auto cfg = dpfa::RunConfig::from_file(config_path);
            const auto report = dpfa::eval_seg_any(checkpoint, cfg, std::cout);
            std::cout << report.to_kv();
        } else if (predict->parsed()) {
            dpfa::RunConfig cfg;  // block size comes from the checkpoint
            const auto cloud = dpfa::load_cloud(input_path);
            const auto labeled = dpfa::predict_any(checkpoint, cfg, cloud);
            dpfa::save_cloud(labeled, output_path);
            std::cout << "wrote " << labeled.size() << " labeled points to " << output_path << "\n";
        } else if (bench->parsed()) {
            const auto cfg = dpfa::RunConfig::from_file(config_path);
            dpfa::bench_any(cfg, checkpoint, bench_warmup, bench_runs, std::cout);
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
