#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "vla/model.hpp"
#include "vla/simenv.hpp"

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
    cfg.backbone.num_cameras = 2;
    cfg.backbone.ffn_hidden = 32;
    cfg.pooled_tokens = 4;
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

Observation sample_observation(uint64_t seed) {
    SimEnv env("place_ball", [] {
        EnvConfig c;
        c.image_size = 16;
        return c;
    }());
    return env.reset(seed);
}

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() { std::remove(path.c_str()); }
};

}  // namespace

TEST_CASE("model config text round-trips and rejects unknown keys") {
    auto cfg = tiny_model(HeadType::ar);
    cfg.lora_alpha = 8.0;
    auto text = serialize_model_config(cfg);
    auto parsed = parse_model_config_text(text);
    CHECK(serialize_model_config(parsed) == text);
    CHECK(parsed.head == HeadType::ar);
    CHECK(parsed.backbone.d_model == 16);
    CHECK_THROWS(parse_model_config_text("nonsense_key=1\n"));
}

TEST_CASE("checkpoints restore byte-identical behavior") {
    TempFile tmp("/tmp/vla_test_model.ckpt");
    auto vocab = Vocabulary::build(instruction_corpus());
    PolicyModel model(tiny_model(), vocab);
    // give the trainable weights live content
    Rng rng(5);
    for (auto& p : model.lora_parameters())
        for (auto& v : p->data) v = rng.normal() * 0.05;
    for (auto& p : model.head_parameters())
        for (auto& v : p->data) v += rng.normal() * 0.05;
    model.action_stats = NormStats{std::vector<double>(7, 0.1), std::vector<double>(7, 0.9)};
    model.proprio_stats = NormStats{std::vector<double>(7, 0.0), std::vector<double>(7, 1.0)};
    model.stats_ready = true;

    save_checkpoint(model, tmp.path);
    auto loaded = load_checkpoint(tmp.path, /*merge=*/false);

    auto obs = sample_observation(3);
    auto a = model.predict_chunk(obs, 99);
    auto b = loaded->predict_chunk(obs, 99);
    REQUIRE(a.size() == b.size());
    for (size_t h = 0; h < a.size(); ++h) CHECK(a[h] == b[h]);  // bitwise

    CHECK(frozen_weight_hash(model) == frozen_weight_hash(*loaded));
    CHECK(loaded->action_stats.offset == model.action_stats.offset);
}

TEST_CASE("merge-at-load preserves predictions within 1e-10") {
    TempFile tmp("/tmp/vla_test_model_merge.ckpt");
    auto vocab = Vocabulary::build(instruction_corpus());
    PolicyModel model(tiny_model(), vocab);
    Rng rng(6);
    for (auto& p : model.lora_parameters())
        for (auto& v : p->data) v = rng.normal() * 0.05;
    save_checkpoint(model, tmp.path);

    auto adapted = load_checkpoint(tmp.path, /*merge=*/false);
    auto merged = load_checkpoint(tmp.path, /*merge=*/true);
    CHECK_FALSE(adapted->merged());
    CHECK(merged->merged());

    auto obs = sample_observation(4);
    auto cond_a = adapted->condition_observation(obs);
    auto cond_m = merged->condition_observation(obs);
    for (size_t i = 0; i < cond_a->data.size(); ++i) {
        const double rel = std::abs(cond_a->data[i] - cond_m->data[i]) /
                           std::max(1.0, std::abs(cond_a->data[i]));
        CHECK(rel <= 1e-10);
    }
}

TEST_CASE("checkpoint corruption and truncation are detected") {
    TempFile tmp("/tmp/vla_test_model_bad.ckpt");
    auto vocab = Vocabulary::build(instruction_corpus());
    PolicyModel model(tiny_model(), vocab);
    save_checkpoint(model, tmp.path);

    std::ifstream in(tmp.path, std::ios::binary);
    std::string bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    in.close();

    {  // flip one payload byte -> checksum failure
        std::string corrupt = bytes;
        corrupt[corrupt.size() / 2] ^= 0x40;
        std::ofstream out(tmp.path, std::ios::binary);
        out.write(corrupt.data(), static_cast<std::streamsize>(corrupt.size()));
    }
    CHECK_THROWS(load_checkpoint(tmp.path));

    {  // drop the tail -> truncation failure
        std::ofstream out(tmp.path, std::ios::binary);
        out.write(bytes.data(), static_cast<std::streamsize>(bytes.size() / 2));
    }
    CHECK_THROWS(load_checkpoint(tmp.path));

    {  // wrong magic
        std::string wrong = bytes;
        wrong[0] = 'X';
        std::ofstream out(tmp.path, std::ios::binary);
        out.write(wrong.data(), static_cast<std::streamsize>(wrong.size()));
    }
    CHECK_THROWS(load_checkpoint(tmp.path));
}

TEST_CASE("frozen hash ignores adapters but tracks base weights") {
    auto vocab = Vocabulary::build(instruction_corpus());
    PolicyModel model(tiny_model(), vocab);
    const uint64_t h0 = frozen_weight_hash(model);

    for (auto& p : model.lora_parameters())
        for (auto& v : p->data) v += 0.5;
    CHECK(frozen_weight_hash(model) == h0);  // adapters excluded

    model.backbone().patch_proj_w->data[0] += 1.0;
    CHECK(frozen_weight_hash(model) != h0);
}

TEST_CASE("parameter accounting separates trainable from frozen") {
    auto vocab = Vocabulary::build(instruction_corpus());
    PolicyModel model(tiny_model(), vocab);
    auto counts = model.count_parameters();
    CHECK(counts.total > counts.trainable);
    CHECK(counts.trainable > 0);

    int64_t head = 0;
    for (const auto& p : model.head_parameters()) head += static_cast<int64_t>(p->data.size());
    CHECK(counts.trainable == model.backbone().lora_params() + head);
}

TEST_CASE("the reference config auto-selects a rank inside the 5% band") {
    ModelConfig cfg;  // reference defaults, lora_rank=0 -> auto
    auto vocab = Vocabulary::build(instruction_corpus());
    PolicyModel model(cfg, vocab);
    CHECK(model.lora_rank() >= 1);
    CHECK(model.transformer_trainable_fraction() >= 0.04);
    CHECK(model.transformer_trainable_fraction() <= 0.06);
}

TEST_CASE("every head type produces a denormalized chunk of the right shape") {
    auto vocab = Vocabulary::build(instruction_corpus());
    auto obs = sample_observation(8);
    for (auto head : {HeadType::diffusion, HeadType::mlp, HeadType::ar}) {
        PolicyModel model(tiny_model(head), vocab);
        if (head == HeadType::ar) model.ar_head().mark_trained();
        auto chunk = model.predict_chunk(obs, 1);
        REQUIRE(chunk.size() == 4u);
        for (const auto& a : chunk) CHECK(a.size() == 7u);
        // deterministic given the same sampling seed
        CHECK(model.predict_chunk(obs, 1) == chunk);
    }
}
