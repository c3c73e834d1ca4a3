#include <cstdio>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "vla/trainer.hpp"

using namespace vla;

namespace {

ModelConfig tiny_model(HeadType head = HeadType::diffusion) {
    ModelConfig cfg;
    cfg.backbone.d_model = 16;
    cfg.backbone.num_layers = 2;
    cfg.backbone.num_heads = 2;
    cfg.backbone.patch_size = 8;
    cfg.backbone.image_size = 16;
    cfg.backbone.max_text_len = 4;
    cfg.backbone.ffn_hidden = 32;
    cfg.cond_width = 24;
    cfg.horizon = 4;
    cfg.exec_horizon = 2;
    cfg.diffusion_T = 20;
    cfg.diffusion_K = 5;
    cfg.denoiser_hidden = 32;
    cfg.time_embed_dim = 8;
    cfg.mlp_hidden = 32;
    cfg.lora_rank = 2;
    cfg.head = head;
    return cfg;
}

std::vector<std::vector<Demonstration>> tiny_tasks() {
    EnvConfig env;
    env.image_size = 16;
    std::vector<std::vector<Demonstration>> tasks;
    for (const std::string task : {"place_ball", "close_drawer"}) {
        std::vector<Demonstration> demos;
        for (uint64_t s = 1; s <= 2; ++s) demos.push_back(run_oracle_episode(task, s, env));
        tasks.push_back(std::move(demos));
    }
    return tasks;
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("ini configs round-trip and reject unknown content") {
    TempFile tmp("/tmp/vla_test_train.ini");
    {
        std::ofstream out(tmp.path);
        out << "# comment\n[model]\nd_model=16\nhead=mlp\nlora_rank=auto\n"
            << "[train]\nsteps=7\nbatch_size=2\nlr_head=0.01\nseed=3\nout_checkpoint=x.ckpt\n"
            << "[data]\ndatasets=a.jsonl, b.jsonl\n";
    }
    auto cfg = load_train_config(tmp.path);
    CHECK(cfg.model.backbone.d_model == 16);
    CHECK(cfg.model.head == HeadType::mlp);
    CHECK(cfg.model.lora_rank == 0);  // auto
    CHECK(cfg.steps == 7);
    CHECK(cfg.batch_size == 2);
    CHECK(cfg.lr_head == 0.01);
    CHECK(cfg.seed == 3);
    CHECK(cfg.datasets == std::vector<std::string>{"a.jsonl", "b.jsonl"});

    {
        std::ofstream out(tmp.path);
        out << "[train]\nnot_a_key=1\n";
    }
    CHECK_THROWS(load_train_config(tmp.path));
    {
        std::ofstream out(tmp.path);
        out << "[mystery]\nsteps=1\n";
    }
    CHECK_THROWS(load_train_config(tmp.path));
}

TEST_CASE("training leaves frozen weights untouched and checkpoints the result") {
    TempFile ckpt("/tmp/vla_test_train.ckpt");
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.steps = 8;
    cfg.batch_size = 2;
    cfg.seed = 1;
    cfg.datasets = {"unused"};
    cfg.out_checkpoint = ckpt.path;

    auto tasks = tiny_tasks();
    auto result = train_on(cfg, tasks);
    CHECK(result.frozen_hash_before == result.frozen_hash_after);
    CHECK(result.checkpoint_path == ckpt.path);

    int total = 0;
    for (int c : result.task_sample_counts) {
        CHECK(c > 0);  // every task sampled
        total += c;
    }
    CHECK(total == cfg.steps * cfg.batch_size);

    auto model = load_checkpoint(ckpt.path);
    CHECK(model->stats_ready);
    CHECK(model->config().head == HeadType::diffusion);
}

TEST_CASE("training is deterministic: identical checkpoint bytes") {
    TempFile a("/tmp/vla_test_train_a.ckpt"), b("/tmp/vla_test_train_b.ckpt");
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.steps = 5;
    cfg.batch_size = 2;
    cfg.seed = 7;
    cfg.datasets = {"unused"};
    auto tasks = tiny_tasks();

    cfg.out_checkpoint = a.path;
    train_on(cfg, tasks);
    cfg.out_checkpoint = b.path;
    train_on(cfg, tasks);

    std::ifstream fa(a.path, std::ios::binary), fb(b.path, std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(!ca.empty());
    CHECK(ca == cb);
}

TEST_CASE("the loss trend is reported and decreases on a long-enough mlp run") {
    TempFile ckpt("/tmp/vla_test_train_mlp.ckpt");
    TrainConfig cfg;
    cfg.model = tiny_model(HeadType::mlp);
    cfg.steps = 60;
    cfg.batch_size = 4;
    cfg.seed = 2;
    cfg.datasets = {"unused"};
    cfg.out_checkpoint = ckpt.path;

    auto result = train_on(cfg, tiny_tasks());
    CHECK(result.last_decile_loss < result.first_decile_loss);
}

TEST_CASE("resuming initializes from a previous checkpoint") {
    TempFile first("/tmp/vla_test_resume1.ckpt"), second("/tmp/vla_test_resume2.ckpt");
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.steps = 4;
    cfg.batch_size = 2;
    cfg.seed = 3;
    cfg.datasets = {"unused"};
    cfg.out_checkpoint = first.path;
    auto tasks = tiny_tasks();
    train_on(cfg, tasks);

    cfg.out_checkpoint = second.path;
    cfg.steps = 2;
    auto result = train_on(cfg, tasks, nullptr, first.path);
    CHECK(result.checkpoint_path == second.path);
    auto resumed = load_checkpoint(second.path);
    CHECK(resumed->config().backbone.d_model == 16);
}

TEST_CASE("bad train configs are rejected up front") {
    TrainConfig cfg;
    cfg.model = tiny_model();
    cfg.datasets = {};
    CHECK_THROWS(cfg.validate());
    cfg.datasets = {"x"};
    cfg.batch_size = 0;
    CHECK_THROWS(cfg.validate());
    cfg.batch_size = 1;
    cfg.lr_head = 0.0;
    CHECK_THROWS(cfg.validate());
}

TEST_CASE("ar training marks the head usable for decoding") {
    TempFile ckpt("/tmp/vla_test_train_ar.ckpt");
    TrainConfig cfg;
    cfg.model = tiny_model(HeadType::ar);
    cfg.model.ar_bins = 16;
    cfg.steps = 2;
    cfg.batch_size = 1;
    cfg.seed = 4;
    cfg.datasets = {"unused"};
    cfg.out_checkpoint = ckpt.path;
    train_on(cfg, tiny_tasks());
    auto model = load_checkpoint(ckpt.path);
    CHECK(model->ar_head().trained());
}
