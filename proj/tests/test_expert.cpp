#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>
#include <fstream>

#include "gatefusion/expert.hpp"
#include "gatefusion/model_io.hpp"
#include "gatefusion/rng.hpp"

using namespace gatefusion;
namespace fs = std::filesystem;

namespace {

Tensor random_image(int h, int w, uint64_t seed) {
    Rng rng(seed);
    Tensor img({3, h, w});
    for (size_t i = 0; i < img.size(); ++i) img[i] = static_cast<float>(rng.uniform());
    return img;
}

std::vector<SceneSample> tiny_dataset(int n, uint64_t seed) {
    DomainSpec spec;
    spec.domain_id = "toy";
    spec.background_hue = 0.3f;
    spec.object_scale_min = 12.0f;
    spec.object_scale_max = 20.0f;
    spec.noise_sigma = 0.01f;
    return generate_domain_dataset(spec, n, seed, 64, 64);
}

struct TempDir {
    fs::path path;
    TempDir() : path(fs::temp_directory_path() / ("gf_exp_" + std::to_string(::getpid()))) {
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
};

bool same_params(const ExpertModel& a, const ExpertModel& b) {
    if (a.params.size() != b.params.size()) return false;
    for (size_t i = 0; i < a.params.size(); ++i) {
        if (a.params[i].name != b.params[i].name) return false;
        if (a.params[i].value.vec() != b.params[i].value.vec()) return false;
    }
    return true;
}

}  // namespace

TEST_CASE("fresh expert predicts the background prior everywhere") {
    ExpertNetConfig cfg;
    const ExpertModel model = make_expert(cfg, "E", 3);
    const ExpertOutput out = expert_forward(model, random_image(64, 64, 9));
    REQUIRE(out.cls_probs.shape() == std::vector<int>{192, 1});
    REQUIRE(out.reg_offsets.shape() == std::vector<int>{192, 4});
    // Classification bias starts at the rare-object prior (~1%), so scores
    // must be low but non-degenerate before any training.
    double mean = 0.0;
    for (size_t i = 0; i < out.cls_probs.size(); ++i) {
        CHECK(out.cls_probs[i] > 0.0f);
        CHECK(out.cls_probs[i] < 0.2f);
        mean += out.cls_probs[i];
    }
    mean /= static_cast<double>(out.cls_probs.size());
    CHECK(mean == doctest::Approx(0.01).epsilon(2.0));
    CHECK(out.reg_offsets.all_finite());
}

TEST_CASE("expert construction validates grid/backbone consistency") {
    ExpertNetConfig cfg;
    cfg.anchors.grid_h = 4;  // 64/2^3 = 8, so a 4-row grid is inconsistent
    CHECK_THROWS_AS(make_expert(cfg, "E", 1), ConfigError);

    ExpertNetConfig half;
    half.image_h = half.image_w = 32;
    half.anchors.grid_h = half.anchors.grid_w = 4;
    const ExpertModel m = make_expert(half, "E", 1);
    const ExpertOutput out = expert_forward(m, random_image(32, 32, 4));
    CHECK(out.cls_probs.dim(0) == 48);
}

TEST_CASE("forward pass is deterministic and rejects wrong image shapes") {
    const ExpertModel model = make_expert(ExpertNetConfig{}, "E", 5);
    const Tensor img = random_image(64, 64, 11);
    const ExpertOutput a = expert_forward(model, img);
    const ExpertOutput b = expert_forward(model, img);
    CHECK(a.cls_probs.vec() == b.cls_probs.vec());
    CHECK(a.reg_offsets.vec() == b.reg_offsets.vec());
    CHECK_THROWS_AS(expert_forward(model, random_image(32, 32, 12)), DimensionError);
}

TEST_CASE("identical seeds give identical experts; different seeds differ") {
    const ExpertModel a = make_expert(ExpertNetConfig{}, "E", 21);
    const ExpertModel b = make_expert(ExpertNetConfig{}, "E", 21);
    const ExpertModel c = make_expert(ExpertNetConfig{}, "E", 22);
    CHECK(same_params(a, b));
    CHECK_FALSE(same_params(a, c));
}

TEST_CASE("short training run reduces the loss and is reproducible") {
    const auto data = tiny_dataset(8, 77);
    TrainConfig tc;
    tc.epochs = 6;
    tc.seed = 5;
    TrainingCurve curve;
    const ExpertModel m1 = train_expert(data, tc, ExpertNetConfig{}, "E", &curve);
    REQUIRE(curve.epoch_loss.size() == 6);
    CHECK(curve.epoch_loss.back() < curve.epoch_loss.front());
    for (float l : curve.epoch_loss) CHECK(std::isfinite(l));

    const ExpertModel m2 = train_expert(data, tc, ExpertNetConfig{}, "E");
    CHECK(same_params(m1, m2));
}

TEST_CASE("training config validation") {
    const auto data = tiny_dataset(2, 1);
    TrainConfig tc;
    tc.epochs = 0;
    CHECK_THROWS_AS(train_expert(data, tc, ExpertNetConfig{}, "E"), ConfigError);
    tc = TrainConfig{};
    tc.learning_rate = -0.5f;
    CHECK_THROWS_AS(train_expert(data, tc, ExpertNetConfig{}, "E"), ConfigError);
    tc = TrainConfig{};
    tc.pos_iou = 0.3f;  // below neg_iou
    CHECK_THROWS_AS(train_expert(data, tc, ExpertNetConfig{}, "E"), ConfigError);
    CHECK_THROWS_AS(train_expert({}, TrainConfig{}, ExpertNetConfig{}, "E"), ConfigError);
}

TEST_CASE("fine-tuning records lineage and moves parameters") {
    const auto data = tiny_dataset(6, 31);
    TrainConfig tc;
    tc.epochs = 4;
    tc.seed = 9;
    const ExpertModel base = train_expert(data, tc, ExpertNetConfig{}, "S1");
    TrainConfig ft = tc;
    ft.epochs = 2;
    ft.learning_rate = 0.002f;
    const ExpertModel tuned = fine_tune(base, tiny_dataset(4, 32), ft);
    CHECK(tuned.expert_id == base.expert_id);
    CHECK(tuned.parent_id == base.expert_id);
    CHECK_FALSE(same_params(base, tuned));
}

TEST_CASE("expert serialization round-trips exactly") {
    TempDir tmp;
    const std::string path = (tmp.path / "e.gfex").string();
    ExpertModel model = make_expert(ExpertNetConfig{}, "S3", 123);
    model.parent_id = "S1";
    save_expert(model, path);
    const ExpertModel back = load_expert(path);
    CHECK(back.expert_id == "S3");
    CHECK(back.parent_id == "S1");
    CHECK(back.seed == 123);
    CHECK(back.config == model.config);
    CHECK(same_params(model, back));
}

TEST_CASE("model container rejects corrupt and foreign files") {
    TempDir tmp;
    const std::string path = (tmp.path / "e.gfex").string();
    save_expert(make_expert(ExpertNetConfig{}, "S1", 1), path);

    SUBCASE("truncated file") {
        const auto size = fs::file_size(path);
        fs::resize_file(path, size / 2);
        CHECK_THROWS_AS(load_expert(path), ModelIoError);
    }
    SUBCASE("flipped payload byte fails the checksum") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(40);
        char c;
        f.seekg(40);
        f.get(c);
        f.seekp(40);
        f.put(static_cast<char>(c ^ 0x5a));
        f.close();
        try {
            load_expert(path);
            FAIL("expected ModelIoError");
        } catch (const ModelIoError& e) {
            CHECK(std::string(e.what()).find("checksum") != std::string::npos);
        }
    }
    SUBCASE("wrong magic is rejected") {
        std::fstream f(path, std::ios::in | std::ios::out | std::ios::binary);
        f.seekp(0);
        f.write("XXXX", 4);
        f.close();
        CHECK_THROWS_AS(load_expert(path), ModelIoError);
    }
    SUBCASE("missing file") {
        CHECK_THROWS_AS(load_expert((tmp.path / "absent.gfex").string()), ModelIoError);
    }
}
