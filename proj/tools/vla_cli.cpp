#include <filesystem>
#include <fstream>
#include <iomanip>
#include <iostream>

#include "CLI11.hpp"
#include "vla/dataset.hpp"
#include "vla/eval.hpp"
#include "vla/model.hpp"
#include "vla/trainer.hpp"

namespace fs = std::filesystem;

int main(int argc, char** argv) {
    CLI::App app{"Toy vision-language-action benchmark"};
    app.require_subcommand(1);

    // gen-demos
    auto* gen = app.add_subcommand("gen-demos", "Generate oracle demonstrations");
    std::string gen_task;
    int gen_n = 50;
    uint64_t gen_seed = 1;
    std::string gen_out = "demos.jsonl";
    gen->add_option("--task", gen_task, "Task name")->required();
    gen->add_option("--n", gen_n, "Number of demonstrations");
    gen->add_option("--seed", gen_seed, "Base seed");
    gen->add_option("--out", gen_out, "Output JSONL path");

    // train
    auto* train_cmd = app.add_subcommand("train", "Train a policy from a config file");
    std::string train_config, train_resume, train_log;
    train_cmd->add_option("--config", train_config, "INI config path")->required();
    train_cmd->add_option("--resume", train_resume, "Checkpoint to resume from");
    train_cmd->add_option("--log", train_log, "Training log path (overrides config)");

    // eval
    auto* eval_cmd = app.add_subcommand("eval", "Evaluate a checkpoint on a task");
    std::string ev_ckpt, ev_task, ev_perturb, ev_out;
    int ev_episodes = 50;
    uint64_t ev_seed = 1000000;
    bool ev_merged = true;
    eval_cmd->add_option("--checkpoint", ev_ckpt, "Checkpoint path")->required();
    eval_cmd->add_option("--task", ev_task, "Task name")->required();
    eval_cmd->add_option("--episodes", ev_episodes, "Episode count");
    eval_cmd->add_option("--seed", ev_seed, "Base evaluation seed");
    eval_cmd->add_option("--perturb", ev_perturb, "Perturbation kind");
    eval_cmd->add_option("--out", ev_out, "Append a result row to this CSV");
    eval_cmd->add_flag("--merged,!--adapted", ev_merged,
                       "Merge adapters before evaluation (default) or keep them attached");

    // bench-latency
    auto* bench_cmd = app.add_subcommand("bench-latency", "Per-action latency benchmark");
    std::string bn_ckpt, bn_head, bn_out;
    int bn_n = 100;
    bench_cmd->add_option("--checkpoint", bn_ckpt, "Checkpoint path")->required();
    bench_cmd->add_option("--head", bn_head, "Expected head type (diffusion|ar|mlp)");
    bench_cmd->add_option("--n", bn_n, "Measurement count");
    bench_cmd->add_option("--out", bn_out, "Append a result row to this CSV");

    // report
    auto* report_cmd = app.add_subcommand("report", "Aggregate result CSVs into a report");
    std::string rp_in, rp_out;
    report_cmd->add_option("--in", rp_in, "Directory of result CSVs")->required();
    report_cmd->add_option("--out", rp_out, "Output directory")->required();

    CLI11_PARSE(app, argc, argv);

    try {
        if (*gen) {
            auto stats = vla::generate_demos(gen_task, gen_n, gen_seed, gen_out);
            std::cout << "wrote " << stats.written << " demos to " << gen_out << " ("
                      << stats.regenerated << " failed rollouts regenerated)\n";
        } else if (*train_cmd) {
            auto cfg = vla::load_train_config(train_config);
            if (!train_log.empty()) cfg.log_file = train_log;
            auto result = cfg.log_file.empty() ? vla::train(cfg, &std::cerr, train_resume)
                                               : vla::train(cfg, nullptr, train_resume);
            std::cout << "checkpoint " << result.checkpoint_path << "\nloss first-decile "
                      << result.first_decile_loss << " last-decile " << result.last_decile_loss
                      << "\nfrozen-hash " << std::hex << result.frozen_hash_before << " -> "
                      << result.frozen_hash_after << std::dec
                      << (result.frozen_hash_before == result.frozen_hash_after ? " (unchanged)"
                                                                                : " (CHANGED)")
                      << "\n";
        } else if (*eval_cmd) {
            auto model = vla::load_checkpoint(ev_ckpt, /*merge=*/ev_merged);
            auto res = vla::evaluate(*model, ev_task, ev_episodes, ev_seed, ev_perturb);
            std::cout << res.head << " " << res.task << " [" << res.perturbation << "] success "
                      << res.successes << "/" << res.episodes << " = " << res.success_rate;
            if (ev_task == "stack_cubes") std::cout << " mode-distance " << res.mode_distance;
            std::cout << "\n";
            if (!ev_out.empty()) {
                const bool fresh = !fs::exists(ev_out);
                std::ofstream out(ev_out, std::ios::app | std::ios::binary);
                if (fresh) out << vla::result_csv_header() << '\n';
                auto counts = model->count_parameters();
                vla::ResultRow row;
                row.head = res.head;
                row.task = res.task;
                row.perturbation = res.perturbation;
                row.episodes = res.episodes;
                row.success = res.success_rate;
                row.params_total = counts.total;
                row.params_trainable = counts.trainable;
                out << vla::result_csv_row(row) << '\n';
            }
        } else if (*bench_cmd) {
            auto model = vla::load_checkpoint(bn_ckpt, /*merge=*/true);
            const std::string head = vla::head_type_name(model->config().head);
            if (!bn_head.empty() && bn_head != head) {
                throw std::runtime_error("checkpoint head is '" + head + "', not '" + bn_head +
                                         "'");
            }
            auto stats = vla::bench_latency(*model, bn_n);
            std::cout << head << " latency per action: median " << stats.median_ms_per_action
                      << " ms, p95 " << stats.p95_ms_per_action << " ms\nper chunk: median "
                      << stats.median_ms_per_chunk << " ms, p95 " << stats.p95_ms_per_chunk
                      << " ms\nforward passes per chunk: " << stats.backbone_passes_per_chunk
                      << " backbone + " << stats.denoiser_passes_per_chunk << " denoiser = "
                      << stats.forward_passes_per_chunk << "\n";
            if (!bn_out.empty()) {
                const bool fresh = !fs::exists(bn_out);
                std::ofstream out(bn_out, std::ios::app | std::ios::binary);
                if (fresh) out << vla::result_csv_header() << '\n';
                auto counts = model->count_parameters();
                vla::ResultRow row;
                row.head = head;
                row.task = "latency";
                row.episodes = 0;
                row.params_total = counts.total;
                row.params_trainable = counts.trainable;
                row.latency_ms = stats.median_ms_per_action;
                row.forward_passes = stats.forward_passes_per_chunk;
                out << vla::result_csv_row(row) << '\n';
            }
        } else if (*report_cmd) {
            vla::write_report(rp_in, rp_out);
            std::cout << "report written to " << rp_out << "\n";
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
