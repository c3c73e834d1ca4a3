#include <cmath>

#include "doctest.h"
#include "vla/backbone.hpp"
#include "vla/simenv.hpp"

using namespace vla;

namespace {

BackboneConfig small_config() {
    BackboneConfig cfg;
    cfg.d_model = 16;
    cfg.num_layers = 2;
    cfg.num_heads = 2;
    cfg.patch_size = 8;
    cfg.image_size = 16;
    cfg.max_text_len = 4;
    cfg.num_cameras = 2;
    cfg.ffn_hidden = 32;
    return cfg;
}

std::vector<Image> random_images(const BackboneConfig& cfg, Rng& rng) {
    std::vector<Image> images;
    for (int c = 0; c < cfg.num_cameras; ++c) {
        Image img(static_cast<size_t>(cfg.image_size) * cfg.image_size * cfg.channels);
        for (auto& v : img) v = rng.uniform();
        images.push_back(std::move(img));
    }
    return images;
}

}  // namespace

TEST_CASE("vocabulary assigns PAD/UNK then first-seen corpus order") {
    auto v = Vocabulary::build({"pick the red ball", "pick the blue cube"});
    CHECK(v.words[0] == "[PAD]");
    CHECK(v.words[1] == "[UNK]");
    CHECK(v.words[2] == "pick");
    CHECK(v.words[3] == "the");
    CHECK(v.words[4] == "red");
    CHECK(v.words[5] == "ball");
    CHECK(v.words[6] == "blue");
    CHECK(v.words[7] == "cube");

    auto ids = v.encode("pick the shiny ball", 6);
    CHECK(ids == std::vector<int>{2, 3, 1, 5, 0, 0});     // unknown -> UNK, short -> PAD
    CHECK(v.encode("pick the red ball now", 3) == std::vector<int>{2, 3, 4});  // truncation
}

TEST_CASE("token sequence length is text plus camera patches") {
    BackboneConfig cfg;  // reference: 32x32, patch 8, 2 cameras, 12 text
    CHECK(cfg.num_patches() == 16);
    CHECK(cfg.seq_len() == 12 + 2 * 16);

    auto vocab = Vocabulary::build(instruction_corpus());
    Backbone bb(small_config(), vocab, 42);
    Rng rng(1);
    auto images = random_images(small_config(), rng);
    auto ids = vocab.encode("stack the pink cube", 4);
    auto enc = bb.encode(images, ids);
    CHECK(enc->shape == std::vector<int>{small_config().seq_len(), 16});
}

TEST_CASE("encoding is deterministic for a fixed init seed") {
    auto vocab = Vocabulary::build(instruction_corpus());
    Backbone b1(small_config(), vocab, 42);
    Backbone b2(small_config(), vocab, 42);
    Rng rng(2);
    auto images = random_images(small_config(), rng);
    auto ids = vocab.encode("close the gray drawer", 4);
    CHECK(b1.encode(images, ids)->data == b2.encode(images, ids)->data);

    Backbone b3(small_config(), vocab, 43);
    CHECK(b3.encode(images, ids)->data != b1.encode(images, ids)->data);
}

TEST_CASE("base weights are frozen; only adapters are trainable") {
    auto vocab = Vocabulary::build(instruction_corpus());
    Backbone bb(small_config(), vocab, 42);
    CHECK(bb.trainable_parameters().empty());
    bb.attach_lora(2, 16.0, 43);
    const auto trainable = bb.trainable_parameters();
    CHECK(static_cast<int>(trainable.size()) == small_config().num_layers * 3 * 2);  // B+A per Q,K,V
    for (const auto& [name, t] : bb.named_parameters()) {
        const bool is_lora = name.find("lora") != std::string::npos;
        CHECK(t->requires_grad == is_lora);
    }
}

TEST_CASE("lora parameter count matches the closed form r(d+k) per projection") {
    auto cfg = small_config();
    auto vocab = Vocabulary::build(instruction_corpus());
    Backbone bb(cfg, vocab, 42);
    const int64_t base = bb.base_params();
    bb.attach_lora(3, 16.0, 43);
    const int64_t expect =
        static_cast<int64_t>(cfg.num_layers) * 3 * 3 * (cfg.d_model + cfg.d_model);
    CHECK(bb.lora_params() == expect);
    CHECK(bb.trainable_fraction() == doctest::Approx(double(expect) / base));
}

TEST_CASE("auto rank selection lands the reference config in the 5% band") {
    BackboneConfig cfg;  // reference config
    auto vocab = Vocabulary::build(instruction_corpus());
    Backbone bb(cfg, vocab, 42);
    const int r = select_lora_rank(cfg, bb.base_params(), 0.05);
    bb.attach_lora(r, 16.0, 43);
    const double frac = bb.trainable_fraction();
    CHECK(frac >= 0.04);
    CHECK(frac <= 0.06);
    // neighbors must not be strictly closer to the target
    const double per_rank = double(bb.lora_params()) / r / bb.base_params();
    CHECK(std::abs(frac - 0.05) <= std::abs((r + 1) * per_rank - 0.05) + 1e-15);
    CHECK(std::abs(frac - 0.05) <= std::abs((r - 1) * per_rank - 0.05) + 1e-15);
}

TEST_CASE("attaching adapters leaves the forward pass unchanged until trained") {
    auto vocab = Vocabulary::build(instruction_corpus());
    auto cfg = small_config();
    Backbone plain(cfg, vocab, 42);
    Backbone adapted(cfg, vocab, 42);
    adapted.attach_lora(2, 16.0, 99);
    Rng rng(3);
    auto images = random_images(cfg, rng);
    auto ids = vocab.encode("place the red ball", 4);
    auto y0 = plain.encode(images, ids);
    auto y1 = adapted.encode(images, ids);
    for (size_t i = 0; i < y0->data.size(); ++i)
        CHECK(y0->data[i] == doctest::Approx(y1->data[i]).epsilon(1e-12));
}

TEST_CASE("merge keeps the adapted forward within 1e-10") {
    auto vocab = Vocabulary::build(instruction_corpus());
    auto cfg = small_config();
    Rng wrng(4);
    Backbone bb(cfg, vocab, 42);
    bb.attach_lora(2, 16.0, 43);
    for (auto& layer : bb.layers()) {  // give the deltas live content
        for (auto* ad : {&layer.lora_q, &layer.lora_k, &layer.lora_v})
            for (auto& v : (*ad)->b()->data) v = wrng.normal() * 0.05;
    }
    Rng rng(5);
    auto images = random_images(cfg, rng);
    auto ids = vocab.encode("flip the green mug upright", 4);
    auto before = bb.encode(images, ids);
    bb.merge_lora();
    auto after = bb.encode(images, ids);
    for (size_t i = 0; i < before->data.size(); ++i) {
        const double rel = std::abs(before->data[i] - after->data[i]) /
                           std::max(1.0, std::abs(before->data[i]));
        CHECK(rel <= 1e-10);
    }
    CHECK_THROWS(bb.merge_lora());  // double merge
}

TEST_CASE("forward counter tracks encode calls") {
    auto vocab = Vocabulary::build(instruction_corpus());
    Backbone bb(small_config(), vocab, 42);
    Rng rng(6);
    auto images = random_images(small_config(), rng);
    auto ids = vocab.encode("close the gray drawer", 4);
    bb.reset_forward_count();
    bb.encode(images, ids);
    bb.encode(images, ids);
    CHECK(bb.forward_count() == 2);
}

TEST_CASE("config validation rejects bad shapes") {
    BackboneConfig cfg;
    cfg.patch_size = 7;  // does not divide 32
    CHECK_THROWS(cfg.validate());
    cfg = BackboneConfig{};
    cfg.num_heads = 3;  // does not divide d_model=128... 128/3 not integral
    CHECK_THROWS(cfg.validate());
}
