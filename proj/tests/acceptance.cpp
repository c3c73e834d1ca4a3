// Acceptance suite: ten structural/behavioral criteria, one PASS/FAIL line
// each. Exit code is the number of failed criteria.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "vla/dataset.hpp"
#include "vla/eval.hpp"
#include "vla/model.hpp"
#include "vla/trainer.hpp"

using namespace vla;
namespace fs = std::filesystem;

namespace {

std::string g_work = "acceptance_work";
std::string g_cli;
int g_failures = 0;

void report(int id, bool pass, const std::string& detail) {
    std::printf("[%s] criterion %d: %s\n", pass ? "PASS" : "FAIL", id, detail.c_str());
    std::fflush(stdout);
    if (!pass) ++g_failures;
}

double elapsed_s(const std::chrono::steady_clock::time_point& t0) {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

std::string fmt(double v) {
    std::ostringstream os;
    os.precision(4);
    os << v;
    return os.str();
}

// ---- 1: LoRA merge equivalence ----
void criterion_1() {
    double worst = 0.0;
    Rng rng(1001);
    for (int inst = 0; inst < 50; ++inst) {
        const int d = 8 + rng.uniform_int(24), k = 8 + rng.uniform_int(24);
        const int r = 1 + rng.uniform_int(std::min(d, k) - 1);
        auto ad = LoraAdapter::attach(Tensor::randn({d, k}, rng), r, 16.0, rng);
        for (auto& v : ad.b()->data) v = rng.normal();

        std::vector<TensorPtr> inputs, adapted;
        for (int i = 0; i < 100; ++i) {
            inputs.push_back(Tensor::randn({2, k}, rng));
            adapted.push_back(ad.forward(inputs.back()));
        }
        ad.merge();
        for (int i = 0; i < 100; ++i) {
            auto merged = ad.forward(inputs[i]);
            for (size_t j = 0; j < merged->data.size(); ++j) {
                const double a = adapted[i]->data[j], m = merged->data[j];
                const double rel =
                    std::abs(a - m) / std::max(1.0, std::max(std::abs(a), std::abs(m)));
                worst = std::max(worst, rel);
            }
        }
    }
    report(1, worst <= 1e-10,
           "LoRA merge equivalence, 50 adapters x 100 inputs, max rel dev " + fmt(worst) +
               " (<= 1e-10)");
}

// ---- 2: trainable-parameter budget ----
void criterion_2() {
    ModelConfig cfg;  // reference config, lora_rank=0 -> auto
    auto vocab = Vocabulary::build(instruction_corpus());
    PolicyModel model(cfg, vocab);
    const double frac = model.transformer_trainable_fraction();
    const auto counts = model.count_parameters();
    const double total_frac = double(counts.trainable) / counts.total;
    std::printf("      rank %d, transformer-relative fraction %.5f, "
                "head-inclusive %lld/%lld = %.5f\n",
                model.lora_rank(), frac, static_cast<long long>(counts.trainable),
                static_cast<long long>(counts.total), total_frac);
    report(2, frac >= 0.04 && frac <= 0.06,
           "auto rank " + std::to_string(model.lora_rank()) + " gives trainable fraction " +
               fmt(frac) + " in [0.04, 0.06]");
}

// ---- 3: gradient correctness through the full diffusion loss ----
void criterion_3() {
    ModelConfig cfg;
    cfg.backbone.d_model = 8;
    cfg.backbone.num_layers = 1;
    cfg.backbone.num_heads = 2;
    cfg.backbone.patch_size = 8;
    cfg.backbone.image_size = 8;
    cfg.backbone.max_text_len = 3;
    cfg.backbone.num_cameras = 1;
    cfg.backbone.ffn_hidden = 8;
    cfg.pooled_tokens = 2;
    cfg.cond_width = 8;
    cfg.horizon = 1;
    cfg.diffusion_T = 10;
    cfg.diffusion_K = 2;
    cfg.denoiser_hidden = 8;
    cfg.time_embed_dim = 4;
    cfg.lora_rank = 2;
    auto vocab = Vocabulary::build(instruction_corpus());

    double worst = 0.0;
    for (uint64_t seed = 1; seed <= 20; ++seed) {
        cfg.init_seed = 100 + seed;
        PolicyModel model(cfg, vocab);
        Rng rng(seed);
        // live adapters + head so every path carries gradient
        for (auto& p : model.lora_parameters())
            for (auto& v : p->data) v = rng.normal() * 0.1;
        for (auto& v : model.denoiser().w_out->data) v = rng.normal() * 0.1;

        Observation obs;
        obs.images.emplace_back(8 * 8 * 3);
        for (auto& v : obs.images[0]) v = rng.uniform();
        obs.proprio.assign(kActionDim, 0.3);
        obs.instruction = "place the red ball into the blue bin";
        std::vector<double> a0(cfg.horizon * kActionDim, 0.2);

        std::vector<TensorPtr> params = model.lora_parameters();
        for (auto& p : model.head_parameters()) params.push_back(p);

        auto forward = [&]() {
            Rng loss_rng(7 * seed);  // same t/eps draw on every rebuild
            auto cond = model.condition_observation(obs);
            return diffusion_sample_loss(model.denoiser(), cond, a0, model.schedule(), loss_rng);
        };
        worst = std::max(worst, finite_diff_check(forward, params));
    }
    report(3, worst <= 1e-4,
           "finite differences through backbone+adapters+conditioning+denoiser, 20 seeds, "
           "max rel err " + fmt(worst) + " (<= 1e-4)");
}

// ---- 4: DDPM process correctness ----
void criterion_4() {
    auto s = NoiseSchedule::squared_cosine(100);
    bool ok = true;
    std::string detail;

    // (a) Monte Carlo moments at t in {1, T/2, T}
    Rng rng(42);
    const std::vector<double> a0 = {0.4};
    double worst_moment = 0.0;
    for (int t : {1, 50, 100}) {
        const int n = 100000;
        double sum = 0.0, sumsq = 0.0;
        std::vector<double> eps(1);
        for (int i = 0; i < n; ++i) {
            eps[0] = rng.normal();
            const double x = q_sample(a0, t, eps, s)[0];
            sum += x;
            sumsq += x * x;
        }
        const double mean = sum / n, var = sumsq / n - mean * mean;
        const double mean_ref = std::sqrt(s.alpha_bar[t]) * a0[0];
        const double var_ref = 1.0 - s.alpha_bar[t];
        worst_moment = std::max(worst_moment,
                                std::abs(mean - mean_ref) / std::max(1.0, std::abs(mean_ref)));
        worst_moment = std::max(worst_moment, std::abs(var - var_ref) / var_ref);
    }
    ok = ok && worst_moment <= 0.01;

    // (b) reconstruct(q_sample) identity over all t
    double worst_rec = 0.0;
    std::vector<double> chunk(28), eps(28);
    for (auto& v : chunk) v = rng.uniform(-1.0, 1.0);
    for (int t = 1; t <= 100; ++t) {
        for (auto& v : eps) v = rng.normal();
        auto rec = reconstruct_a0(q_sample(chunk, t, eps, s), t, eps, s);
        for (size_t i = 0; i < chunk.size(); ++i)
            worst_rec = std::max(worst_rec, std::abs(rec[i] - chunk[i]));
    }
    ok = ok && worst_rec <= 1e-9;

    // (c) reverse sampling with a perfect-noise oracle
    double worst_recov = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
        std::vector<double> target(14);
        for (auto& v : target) v = rng.uniform(-0.9, 0.9);
        NoisePredictor oracle = [&](const std::vector<double>& x_t, int t) {
            std::vector<double> e(x_t.size());
            const double sa = std::sqrt(s.alpha_bar[t]), sb = std::sqrt(1.0 - s.alpha_bar[t]);
            for (size_t i = 0; i < x_t.size(); ++i) e[i] = (x_t[i] - sa * target[i]) / sb;
            return e;
        };
        Rng srng(500 + trial);
        auto out = sample_actions(oracle, 14, s, 10, srng);
        for (size_t i = 0; i < target.size(); ++i)
            worst_recov = std::max(worst_recov, std::abs(out[i] - target[i]));
    }
    ok = ok && worst_recov <= 1e-6;

    report(4, ok,
           "DDPM moments dev " + fmt(worst_moment) + " (<= 0.01), reconstruct dev " +
               fmt(worst_rec) + " (<= 1e-9), oracle recovery dev " + fmt(worst_recov) +
               " (<= 1e-6)");
}

// ---- 5: latency structure ----
void criterion_5() {
    auto vocab = Vocabulary::build(instruction_corpus());
    ModelConfig cfg;  // reference config

    cfg.head = HeadType::diffusion;
    PolicyModel diffusion(cfg, vocab);
    diffusion.merge_lora();

    cfg.head = HeadType::ar;
    PolicyModel ar(cfg, vocab);  // same init_seed: identical backbone weights
    ar.ar_head().mark_trained();  // greedy decode cost is weight-independent
    ar.merge_lora();

    // (a) exact pass counts, observed through the forward counter
    EnvConfig env_cfg;
    SimEnv env(task_names()[0], env_cfg);
    Observation obs = env.reset(7);

    ar.backbone().reset_forward_count();
    ar.predict_chunk(obs, 1);
    const int64_t ar_passes = ar.backbone().forward_count();

    diffusion.backbone().reset_forward_count();
    int64_t denoiser_calls = 0;
    {
        auto cond = diffusion.condition_observation(obs);
        NoisePredictor counting = [&](const std::vector<double>& a_t, int t) {
            ++denoiser_calls;
            auto a = Tensor::from_data({1, static_cast<int>(a_t.size())},
                                       std::vector<double>(a_t));
            return diffusion.denoiser().forward(a, t, cond)->data;
        };
        Rng srng(3);
        sample_actions(counting, cfg.horizon * kActionDim, diffusion.schedule(), cfg.diffusion_K,
                       srng);
    }
    const int64_t diff_passes = diffusion.backbone().forward_count() + denoiser_calls;
    const bool counts_ok = ar_passes == 112 && diff_passes == 11;

    // (b) measured per-action latency ratio
    auto sd = bench_latency(diffusion, 100, 10);
    auto sa = bench_latency(ar, 100, 10);
    const double ratio = sa.median_ms_per_action / sd.median_ms_per_action;

    // (c) AR latency linear in H*7
    auto fit = ar_latency_sweep(ar, {1, 2, 4, 8, 16}, 3);

    std::printf("      AR %lld passes/chunk, diffusion %lld; per-action median %.2f ms vs "
                "%.2f ms (ratio %.2f); AR sweep R^2 %.5f\n",
                static_cast<long long>(ar_passes), static_cast<long long>(diff_passes),
                sa.median_ms_per_action, sd.median_ms_per_action, ratio, fit.r2);
    report(5, counts_ok && ratio >= 3.0 && fit.r2 >= 0.95,
           "pass counts 112/11, AR:diffusion per-action ratio " + fmt(ratio) +
               " (>= 3), linearity R^2 " + fmt(fit.r2) + " (>= 0.95)");
}

// ---- 6+8: multi-task benchmark and freeze integrity ----
struct BenchmarkOutcome {
    bool trained = false;
    TrainResult result;
    std::string checkpoint;
};

BenchmarkOutcome run_standard_benchmark() {
    BenchmarkOutcome out;
    const std::vector<std::string> tasks = {"place_ball", "stack_cubes", "close_drawer"};
    TrainConfig cfg;
    cfg.steps = 3000;
    cfg.batch_size = 16;
    cfg.seed = 1;
    for (const auto& t : tasks) {
        const std::string path = g_work + "/demos_" + t + ".jsonl";
        if (!fs::exists(path)) generate_demos(t, 50, 1, path);
        cfg.datasets.push_back(path);
    }
    cfg.out_checkpoint = g_work + "/diffusion.ckpt";
    out.checkpoint = cfg.out_checkpoint;
    if (fs::exists(cfg.out_checkpoint)) {
        // benchmark checkpoint left by a previous acceptance run in the same
        // work dir: compare its stored base weights against a fresh init of
        // the same config, which training must not have touched
        auto stored = load_checkpoint(cfg.out_checkpoint, /*merge=*/false);
        PolicyModel fresh(stored->config(), stored->backbone().vocab());
        out.result.frozen_hash_before = frozen_weight_hash(fresh);
        out.result.frozen_hash_after = frozen_weight_hash(*stored);
        out.trained = true;
        return out;
    }
    std::ofstream log(g_work + "/train.log");
    out.result = train(cfg, &log);
    out.trained = true;
    return out;
}

void criterion_6_and_8() {
    const auto t0 = std::chrono::steady_clock::now();
    auto bench = run_standard_benchmark();
    auto model = load_checkpoint(bench.checkpoint, /*merge=*/true);

    auto pb = evaluate(*model, "place_ball", 50);
    auto sc = evaluate(*model, "stack_cubes", 50);
    auto cd = evaluate(*model, "close_drawer", 50);
    std::printf("      success: place_ball %.2f, close_drawer %.2f, stack_cubes %.2f "
                "(mode distance %.3f); train+eval %.0f s\n",
                pb.success_rate, cd.success_rate, sc.success_rate, sc.mode_distance,
                elapsed_s(t0));
    report(6,
           pb.success_rate >= 0.80 && cd.success_rate >= 0.80 && sc.success_rate >= 0.60,
           "multi-task benchmark: place_ball " + fmt(pb.success_rate) +
               " (>= 0.80), close_drawer " + fmt(cd.success_rate) + " (>= 0.80), stack_cubes " +
               fmt(sc.success_rate) + " (>= 0.60), 50 episodes each");
    report(8, bench.result.frozen_hash_before == bench.result.frozen_hash_after,
           "frozen backbone hash unchanged by training");

    // criterion 9 reporting reuses this checkpoint
}

// ---- 7: diffusion-vs-MLP head gap on the bimodal task ----
void criterion_7() {
    const std::string demos = g_work + "/demos_stack_cubes.jsonl";
    if (!fs::exists(demos)) generate_demos("stack_cubes", 50, 1, demos);

    auto train_head = [&](HeadType head, const std::string& ckpt) {
        TrainConfig cfg;
        cfg.model.head = head;
        cfg.steps = 1200;
        cfg.batch_size = 16;
        cfg.seed = 2;
        cfg.datasets = {demos};
        cfg.out_checkpoint = ckpt;
        if (!fs::exists(ckpt)) {
            std::ofstream log(g_work + "/train_" + head_type_name(head) + ".log");
            train(cfg, &log);
        }
        return load_checkpoint(ckpt, /*merge=*/true);
    };
    auto diff_model = train_head(HeadType::diffusion, g_work + "/stack_diffusion.ckpt");
    auto mlp_model = train_head(HeadType::mlp, g_work + "/stack_mlp.ckpt");

    auto rd = evaluate(*diff_model, "stack_cubes", 50);
    auto rm = evaluate(*mlp_model, "stack_cubes", 50);
    const double gap = rd.success_rate - rm.success_rate;
    const double dist_ratio = rm.mode_distance / std::max(1e-9, rd.mode_distance);
    std::printf("      stack_cubes success: diffusion %.2f vs mlp %.2f (gap %.2f); "
                "mode distance: mlp %.3f vs diffusion %.3f (ratio %.1f)\n",
                rd.success_rate, rm.success_rate, gap, rm.mode_distance, rd.mode_distance,
                dist_ratio);
    report(7, gap >= 0.30 && dist_ratio >= 2.0,
           "diffusion-over-MLP gap " + fmt(gap) + " (>= 0.30), mode-distance ratio " +
               fmt(dist_ratio) + " (>= 2.0)");
}

// ---- 9: perturbation harness soundness ----
void criterion_9() {
    bool ok = true;
    std::string bad;
    for (const auto& task : task_names()) {
        for (const auto& kind : perturbation_kinds()) {
            auto r = evaluate_oracle(task, 200, 3000000, kind);
            if (r.success_rate != 1.0) {
                ok = false;
                bad += " " + task + "/" + kind + "=" + fmt(r.success_rate);
            }
        }
    }
    report(9, ok,
           ok ? "oracle success 1.00 under all 5 perturbation kinds x 4 tasks x 200 seeds"
              : "oracle dropped below 1.00:" + bad);

    // reported, not asserted: trained clean-vs-perturbed deltas
    const std::string ckpt = g_work + "/diffusion.ckpt";
    if (fs::exists(ckpt)) {
        auto model = load_checkpoint(ckpt, /*merge=*/true);
        auto clean = evaluate(*model, "place_ball", 20);
        std::printf("      trained place_ball deltas vs clean %.2f:", clean.success_rate);
        for (const auto& kind : perturbation_kinds()) {
            auto r = evaluate(*model, "place_ball", 20, 1000000, kind);
            std::printf(" %s %+0.2f", kind.c_str(), r.success_rate - clean.success_rate);
        }
        std::printf(" (reported only)\n");
    }
}

// ---- 10: end-to-end determinism through the CLI ----
int run_cmd(const std::string& cmd) { return std::system(cmd.c_str()); }

bool same_bytes(const fs::path& a, const fs::path& b) {
    std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
    if (!fa || !fb) return false;
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    return !ca.empty() && ca == cb;
}

void criterion_10() {
    if (g_cli.empty()) {
        report(10, false, "determinism pipeline skipped: --cli not provided");
        return;
    }
    const std::string smoke =
        "[model]\n"
        "d_model=32\nnum_layers=2\nnum_heads=2\nffn_hidden=64\nhead=diffusion\nlora_rank=auto\n"
        "[train]\n"
        "steps=500\nbatch_size=4\nlr_head=1e-3\nlr_lora=1e-4\nseed=5\nout_checkpoint=smoke.ckpt\n"
        "[data]\n"
        "datasets=demos.jsonl\n";

    auto run_pipeline = [&](const std::string& dir) -> bool {
        fs::remove_all(dir);
        fs::create_directories(dir);
        {
            std::ofstream cfg(dir + "/smoke.ini");
            cfg << smoke;
        }
        const std::string cd = "cd " + dir + " && " + g_cli;
        if (run_cmd(cd + " gen-demos --task place_ball --n 8 --seed 21 --out demos.jsonl"
                    " > gen.out 2>&1") != 0) return false;
        if (run_cmd(cd + " train --config smoke.ini --log train.log > train.out 2>&1") != 0)
            return false;
        if (run_cmd(cd + " eval --checkpoint smoke.ckpt --task place_ball --episodes 5"
                    " --out rows.csv > eval.out 2>&1") != 0) return false;
        if (run_cmd("mkdir -p " + dir + "/rows && cp " + dir + "/rows.csv " + dir + "/rows/") != 0)
            return false;
        return run_cmd(cd + " report --in rows --out report > report.out 2>&1") == 0;
    };

    const std::string a = g_work + "/det_a", b = g_work + "/det_b";
    const bool ran = run_pipeline(a) && run_pipeline(b);
    bool ok = ran;
    std::string diffs;
    if (ran) {
        for (const std::string f : {"demos.jsonl", "smoke.ckpt", "rows.csv",
                                    "report/results.csv", "report/summary.txt",
                                    "report/plot_data.csv"}) {
            if (!same_bytes(a + "/" + f, b + "/" + f)) {
                ok = false;
                diffs += " " + f;
            }
        }
    }
    report(10, ok,
           ok ? "gen-demos -> train(500 steps) -> eval -> report twice: all artifacts "
                "byte-identical"
              : (ran ? "artifacts differ:" + diffs : "pipeline run failed (see det_a/det_b)"));
}

}  // namespace

int main(int argc, char** argv) {
    for (int i = 1; i + 1 < argc; i += 2) {
        const std::string flag = argv[i];
        if (flag == "--work-dir") g_work = argv[i + 1];
        else if (flag == "--cli") g_cli = argv[i + 1];
    }
    fs::create_directories(g_work);
    std::printf("work dir: %s\n", g_work.c_str());

    criterion_1();
    criterion_2();
    criterion_3();
    criterion_4();
    criterion_5();
    criterion_6_and_8();
    criterion_7();
    criterion_9();
    criterion_10();

    std::printf("%d/10 criteria passed\n", 10 - g_failures);
    return g_failures;
}
