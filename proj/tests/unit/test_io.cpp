#include <catch2/catch_amalgamated.hpp>

#include <filesystem>

#include "midres/checkpoint.hpp"
#include "midres/run_config.hpp"

using namespace midres;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const fs::path dir = fs::temp_directory_path() / name;
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

}  // namespace

TEST_CASE("run config defaults match the documented protocol") {
    const RunConfig cfg = RunConfig::from_json(nlohmann::json::object(), "test");
    CHECK(cfg.train.learning_rate == 0.001);
    CHECK(cfg.train.epochs == 150);
    CHECK(cfg.train.momentum == 0.9);
    CHECK(cfg.k == 5);
    CHECK(cfg.precision == "f64");
    CHECK(cfg.network.variant == Variant::midres_classifier);
}

TEST_CASE("run config rejects unknown keys at every level") {
    CHECK_THROWS_WITH(RunConfig::from_json(nlohmann::json::parse(R"({"lr": 0.1})"), "test"),
                      Catch::Matchers::ContainsSubstring("unknown key 'lr'"));
    CHECK_THROWS_WITH(
        RunConfig::from_json(nlohmann::json::parse(R"({"train": {"learningrate": 0.1}})"), "test"),
        Catch::Matchers::ContainsSubstring("learningrate"));
    CHECK_THROWS_WITH(
        RunConfig::from_json(nlohmann::json::parse(R"({"network": {"channels": [1]}})"), "test"),
        Catch::Matchers::ContainsSubstring("channels"));
}

TEST_CASE("run config parses overrides and validates them") {
    const auto j = nlohmann::json::parse(R"({
        "seed": 7,
        "k": 3,
        "precision": "f32",
        "network": {"variant": "baseline_lenet", "input_size": 32, "channel_plan": [2,2,2,2],
                     "fc_widths": [16]},
        "train": {"epochs": 4, "batch_size": 8, "learning_rate": 0.01, "momentum": 0.5,
                   "shuffle": false, "normalize": false},
        "paths": {"manifest": "m.txt", "out": "ckpt"}
    })");
    const RunConfig cfg = RunConfig::from_json(j, "test");
    CHECK(cfg.train.seed == 7);
    CHECK(cfg.k == 3);
    CHECK(cfg.precision == "f32");
    CHECK(cfg.network.variant == Variant::baseline_lenet);
    CHECK(cfg.network.input_size == 32);
    CHECK(cfg.train.epochs == 4);
    CHECK_FALSE(cfg.train.shuffle);
    CHECK(cfg.manifest_path == "m.txt");
    CHECK(cfg.out_path == "ckpt");

    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"precision": "f16"})"), "t"),
                    io_error);
    CHECK_THROWS_AS(
        RunConfig::from_json(nlohmann::json::parse(R"({"network": {"variant": "resnet"}})"), "t"),
        io_error);
    CHECK_THROWS_AS(
        RunConfig::from_json(nlohmann::json::parse(R"({"network": {"input_size": 33}})"), "t"),
        io_error);
    CHECK_THROWS_AS(RunConfig::from_json(nlohmann::json::parse(R"({"k": 1})"), "t"), io_error);
}

TEST_CASE("run config file loading reports parse errors as data errors") {
    const fs::path dir = scratch_dir("midres_runcfg");
    detail::write_file_atomic(dir / "bad.json", "{ not json");
    CHECK_THROWS_AS(RunConfig::load(dir / "bad.json"), io_error);
    CHECK_THROWS_AS(RunConfig::load(dir / "absent.json"), io_error);
    detail::write_file_atomic(dir / "ok.json", R"({"train": {"epochs": 2}})");
    CHECK(RunConfig::load(dir / "ok.json").train.epochs == 2);
    fs::remove_all(dir);
}

TEST_CASE("checkpoint round trip preserves config and parameters bit-for-bit") {
    const fs::path dir = scratch_dir("midres_ckpt");
    NetworkConfig cfg = NetworkConfig::desk_scale(Variant::midres_classifier);
    cfg.input_size = 16;
    cfg.channel_plan = {2, 4, 4, 4};
    cfg.fc_widths = {8};
    Model<double> model(cfg);
    init_parameters(model, 77);
    save_checkpoint(model, dir / "ckpt", {{"normalize", "1"}});

    CHECK(checkpoint_precision(dir / "ckpt") == "f64");
    CHECK(checkpoint_header(dir / "ckpt").at("normalize") == "1");

    Model<double> loaded = load_checkpoint<double>(dir / "ckpt");
    CHECK(loaded.config().variant == cfg.variant);
    CHECK(loaded.config().channel_plan == cfg.channel_plan);
    CHECK(loaded.config().fc_widths == cfg.fc_widths);
    REQUIRE(loaded.parameters().size() == model.parameters().size());
    for (std::size_t i = 0; i < model.parameters().size(); ++i) {
        CHECK(loaded.parameters()[i].name == model.parameters()[i].name);
        CHECK(loaded.parameters()[i].value.data == model.parameters()[i].value.data);
    }
    fs::remove_all(dir);
}

TEST_CASE("checkpoint corruption is a format diagnostic") {
    const fs::path dir = scratch_dir("midres_ckpt_bad");
    NetworkConfig cfg = NetworkConfig::desk_scale(Variant::midres_classifier);
    cfg.input_size = 16;
    cfg.channel_plan = {2, 2, 2, 2};
    cfg.fc_widths = {4};
    Model<float> model(cfg);
    init_parameters(model, 3);
    save_checkpoint(model, dir / "ckpt");

    // truncate one parameter blob
    const fs::path blob = dir / "ckpt/params/enc1.conv1.weight.tnsb";
    const std::string bytes = detail::read_file(blob);
    detail::write_file_atomic(blob, bytes.substr(0, bytes.size() / 2));
    CHECK_THROWS_AS(load_checkpoint<float>(dir / "ckpt"), io_error);

    CHECK_THROWS_AS(load_checkpoint<float>(dir / "nonexistent"), io_error);
    CHECK_THROWS_AS(checkpoint_precision(dir / "nonexistent"), io_error);

    // garbage config values and stray parameter names are format errors too
    save_checkpoint(model, dir / "ckpt2");
    std::string text = detail::read_file(dir / "ckpt2/model.txt");
    auto pos = text.find("# input_size: 16");
    REQUIRE(pos != std::string::npos);
    std::string broken = text;
    broken.replace(pos, 16, "# input_size: ab");
    detail::write_file_atomic(dir / "ckpt2/model.txt", broken);
    CHECK_THROWS_AS(load_checkpoint<float>(dir / "ckpt2"), io_error);

    broken = text;
    pos = broken.find("enc1.conv1.weight,");
    REQUIRE(pos != std::string::npos);
    broken.replace(pos, 17, "enc1.conv9.weight");
    detail::write_file_atomic(dir / "ckpt2/model.txt", broken);
    CHECK_THROWS_AS(load_checkpoint<float>(dir / "ckpt2"), io_error);
    fs::remove_all(dir);
}
