#include <cstdio>
#include <fstream>

#include "doctest.h"
#include "json.hpp"
#include "vla/dataset.hpp"

using namespace vla;

namespace {

struct TempFile {
    std::string path;
    explicit TempFile(std::string p) : path(std::move(p)) {}
    ~TempFile() {
        std::remove(path.c_str());
        std::remove((path + ".manifest.json").c_str());
    }
};

}  // namespace

TEST_CASE("oracle episodes record aligned observation/action streams") {
    auto demo = run_oracle_episode("close_drawer", 17, EnvConfig{});
    CHECK(demo.success);
    CHECK(demo.task == "close_drawer");
    CHECK(demo.instruction == "close the gray drawer");
    REQUIRE(!demo.steps.empty());
    for (const auto& s : demo.steps) {
        CHECK(s.images.size() == 2u);
        CHECK(s.images[0].size() == 32u * 32u * 3u);
        CHECK(s.proprio.size() == 7u);
        CHECK(s.action.size() == 7u);
    }
}

TEST_CASE("generation and loading round-trip exactly") {
    TempFile tmp("/tmp/vla_test_demos.jsonl");
    auto stats = generate_demos("place_ball", 3, 5, tmp.path);
    CHECK(stats.written == 3);

    auto demos = load_demos(tmp.path);
    REQUIRE(demos.size() == 3u);
    for (size_t i = 0; i < 3; ++i) {
        auto ref = run_oracle_episode("place_ball", demos[i].seed, EnvConfig{});
        CHECK(demos[i].instruction == ref.instruction);
        CHECK(demos[i].success);
        REQUIRE(demos[i].steps.size() == ref.steps.size());
        for (size_t k = 0; k < ref.steps.size(); ++k) {
            CHECK(demos[i].steps[k].images == ref.steps[k].images);
            CHECK(demos[i].steps[k].proprio == ref.steps[k].proprio);
            CHECK(demos[i].steps[k].action == ref.steps[k].action);
        }
    }
}

TEST_CASE("regeneration is deterministic: same seed, same file bytes") {
    TempFile a("/tmp/vla_test_demos_a.jsonl"), b("/tmp/vla_test_demos_b.jsonl");
    generate_demos("stack_cubes", 4, 9, a.path);
    generate_demos("stack_cubes", 4, 9, b.path);
    std::ifstream fa(a.path, std::ios::binary), fb(b.path, std::ios::binary);
    std::string ca((std::istreambuf_iterator<char>(fa)), std::istreambuf_iterator<char>());
    std::string cb((std::istreambuf_iterator<char>(fb)), std::istreambuf_iterator<char>());
    CHECK(ca == cb);
    CHECK(!ca.empty());
}

TEST_CASE("the manifest records counts and normalization ranges") {
    TempFile tmp("/tmp/vla_test_demos_m.jsonl");
    generate_demos("flip_mug_2d", 2, 3, tmp.path);
    std::ifstream in(tmp.path + ".manifest.json");
    REQUIRE(in.good());
    auto m = nlohmann::json::parse(in);
    CHECK(m.at("task") == "flip_mug_2d");
    CHECK(m.at("demos") == 2);
    auto lo = m.at("action_min").get<std::vector<double>>();
    auto hi = m.at("action_max").get<std::vector<double>>();
    REQUIRE(lo.size() == 7u);
    for (int i = 0; i < 7; ++i) CHECK(lo[i] <= hi[i]);
}

TEST_CASE("corrupt records are rejected") {
    TempFile tmp("/tmp/vla_test_demos_bad.jsonl");
    {
        std::ofstream out(tmp.path);
        out << R"({"task":"place_ball","seed":1,"instruction":"x","success":true,"steps":)"
            << R"([{"images":[{"shape":[32,32,3],"data":[1,2,3]}],"proprio":[0,0,0,0,0,0,0],)"
            << R"("action":[0,0,0,0,0,0,0]}]})" << "\n";
    }
    CHECK_THROWS(load_demos(tmp.path));  // image data shorter than its shape header
    CHECK_THROWS(load_demos("/tmp/definitely_missing_demos.jsonl"));
    CHECK_THROWS(generate_demos("place_ball", 0, 1, "/tmp/never_written.jsonl"));
}
