#include <fstream>
#include <unistd.h>

#include "doctest.h"
#include "vsr/config.hpp"
#include "vsr/errors.hpp"

using namespace vsr;

TEST_CASE("ini parsing and overrides") {
    auto e = parse_ini("preset = desk\n[train]\nepochs = 3 ; short\n# comment\n[encoder]\nblocks=2\n", "t.ini");
    REQUIRE(e.size() == 3);
    CHECK(e[0].first == "experiment.preset");
    CHECK(e[1] == std::pair<std::string, std::string>{"train.epochs", "3"});
    CHECK(e[2].first == "encoder.blocks");
    auto cfg = config_from_entries(e);
    CHECK(cfg.preset == "desk");
    CHECK(cfg.train.epochs == 3);
    CHECK(cfg.model.encoder.num_blocks == 2);
    CHECK(cfg.model.encoder.model_dim == 64);

    auto path = std::filesystem::temp_directory_path() / ("vsr_cfg_" + std::to_string(::getpid()) + ".ini");
    std::ofstream(path) << "preset = desk\n[ablation]\naudio_aux = off\n";
    auto loaded = load_config(path, {{"train.epochs", "7"}, {"ablation.time_masking", "no"}});
    CHECK(loaded.train.epochs == 7);
    CHECK_FALSE(loaded.ablation.audio_aux);
    CHECK_FALSE(loaded.time_masking_enabled());
    CHECK(loaded.effective_loss().audio_aux == 0);
    CHECK(loaded.effective_loss().visual_aux == loaded.loss.visual_aux);
    std::filesystem::remove(path);
}

TEST_CASE("config errors") {
    CHECK_THROWS_AS(config_from_entries({{"train.nonsense", "1"}}), ConfigError);
    CHECK_THROWS_AS(config_from_entries({{"train.epochs", "many"}}), ConfigError);
    CHECK_THROWS_AS(config_from_entries({{"experiment.preset", "huge"}}), ConfigError);
    CHECK_THROWS_AS(parse_ini("[train\nepochs=1\n", "x"), ConfigError);
    CHECK_THROWS_AS(config_from_entries({{"loss.ctc_weight", "1.5"}}), ConfigError);
}

TEST_CASE("hash is stable and sensitive") {
    auto a = make_preset("desk"), b = make_preset("desk");
    CHECK(a.hash() == b.hash());
    CHECK(a.hash().size() == 16);
    b.set("train.epochs", "21");
    CHECK(a.hash() != b.hash());
    auto c = config_from_entries(parse_ini(a.to_ini(), "rt"));
    CHECK(c.hash() == a.hash());
    for (const auto& k : ExperimentConfig::keys()) CHECK(c.get(k) == a.get(k));
}

TEST_CASE("language presets set beam and length") {
    auto cfg = config_from_entries({{"decode.language", "en"}});
    CHECK(cfg.decode.beam_size == beam_preset("en").beam_size);
    auto given = config_from_entries({{"decode.language", "en"}, {"decode.beam_size", "3"}});
    CHECK(given.decode.beam_size == 3);
}
