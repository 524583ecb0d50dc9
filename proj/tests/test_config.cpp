#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include "nabqr/config.hpp"

using namespace nabqr;
using nlohmann::json;

TEST_CASE("defaults carry the standard settings") {
	const PipelineConfig c;
	CHECK_NOTHROW(c.check());
	CHECK(c.taqr.n_init == 192);
	CHECK(c.taqr.n_full == 5000);
	CHECK(c.taqr.mode == HorizonMode::DayAhead);
	CHECK(c.levels.size() == 13);
	CHECK(c.lags.lags == std::vector<int>{1, 2, 3, 6, 12, 24, 48});
	CHECK(c.countertrade.high == 1700.0);
	CHECK(c.countertrade.low == 25.0);
	CHECK(c.glitch.count == 9);
	CHECK(c.train.shape.units == 256);
	CHECK(c.train.shape.outputs == 20);
	CHECK(c.forest.trees == 100);
	CHECK(c.boost.stages == 50);
	CHECK(c.offset_mode == OffsetMode::Scalar);
}

TEST_CASE("json round trip") {
	PipelineConfig c;
	c.seed = 77;
	c.lags.lags = {1, 24};
	c.train.epochs = 3;
	c.train.optimizer = Optimizer::Adam;
	c.taqr.mode = HorizonMode::Rolling;
	c.split = PipelineConfig::SplitLengths{400, 300, 200};
	c.countertrade.spot_from = parse_timestamp("2021-03-01T00:00Z");
	c.qgb = false;
	c.boost.step_mode = BoostStepMode::LeafQuantile;
	c.offset_mode = OffsetMode::HourOfDay;
	const json j = c.to_json();
	const PipelineConfig back = PipelineConfig::from_json(j);
	CHECK(back.to_json() == j);
	CHECK(back.seed == 77);
	CHECK(back.train.optimizer == Optimizer::Adam);
	CHECK(back.split->test == 200);
	CHECK(*back.countertrade.spot_from == *c.countertrade.spot_from);
	CHECK_FALSE(back.countertrade.spot_to.has_value());

	const auto path = std::filesystem::temp_directory_path() / "nabqr_config_test.json";
	c.save(path);
	CHECK(PipelineConfig::load(path).to_json() == j);
	std::filesystem::remove(path);
}

TEST_CASE("partial files override only their keys") {
	const PipelineConfig c = PipelineConfig::from_json(json::parse(R"({"taqr": {"n_full": 800}, "seed": 5})"));
	CHECK(c.taqr.n_full == 800);
	CHECK(c.taqr.n_init == 192);
	CHECK(c.seed == 5);
	CHECK(c.train.epochs == PipelineConfig{}.train.epochs);
}

TEST_CASE("invalid files are rejected") {
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"unknown": 1})")), ValidationError);
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"taqr": {"window": 1}})")), ValidationError);
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"schema_version": 2})")), ValidationError);
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"seed": "x"})")), ValidationError);
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"taqr": {"n_init": 6000}})")), ValidationError);
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"corrector": {"epochs": -1}})")), ValidationError);
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"levels": [0.5, 0.2]})")), Error);
	CHECK_THROWS_AS(PipelineConfig::from_json(json::parse(R"({"taqr": {"horizon": "weekly"}})")), ValidationError);
	CHECK_THROWS_AS(PipelineConfig::load("/nonexistent/config.json"), IoError);
}

TEST_CASE("split resolution") {
	PipelineConfig c;
	const SplitSpec s = c.resolve_split(12000);
	CHECK(s.taqr_init_params.length == 192);
	CHECK(s.end() <= 12000);
	CHECK(s.nn_train.length == static_cast<std::size_t>(14040.0 * (12000.0 - 192.0) / 24096.0));
	c.split = PipelineConfig::SplitLengths{100, 50, 30};
	const SplitSpec e = c.resolve_split(1000);
	CHECK(e.test.begin == 100 + 192 + 50);
	CHECK(e.end() == 372);
	CHECK_THROWS_AS(c.resolve_split(300), ValidationError);
}
