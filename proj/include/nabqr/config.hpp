#pragma once

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>

#include "nabqr/baselines.hpp"
#include "nabqr/dataio.hpp"
#include "nabqr/nncorrect.hpp"
#include "nabqr/taqr.hpp"
#include "nabqr/trading.hpp"

namespace nabqr {

/// Everything a run depends on besides the data. Serialized as versioned JSON; a file only needs the
/// keys it changes, unknown keys are rejected.
struct PipelineConfig {
	static constexpr int kSchemaVersion = 1;

	/// Master seed: corrector initialization and batching, forest bootstrap.
	std::uint64_t seed = 1;

	LagSpec lags;
	/// Corrector training; shape.features follows the ensemble width, levels follow shape.outputs.
	TrainConfig train;
	/// Off feeds the raw sorted members to TAQR directly.
	bool correction = true;

	TaqrRunOptions taqr;
	/// Prepends a constant column to the TAQR design.
	bool taqr_intercept = false;
	QuantileLevels levels = QuantileLevels::nabqr_default();
	bool repair_crossings = true;

	/// Lengths of the corrector-training, window-fill and test slices. The warm-start slice is always
	/// taqr.n_init long. Unset: the 14040/4944/5112 proportions scaled to the data.
	struct SplitLengths {
		std::size_t nn_train = 0, taqr_init_window = 0, test = 0;
	};
	std::optional<SplitLengths> split;

	bool countertrade_filter = true;
	CountertradeFilterConfig countertrade;
	bool glitch_filter = true;
	GlitchFilterConfig glitch;

	/// TAQR fitted on the raw members (comparison row).
	bool taqr_raw = true;
	bool qrf = true;
	ForestConfig forest;
	bool qgb = true;
	BoostConfig boost;

	OffsetMode offset_mode = OffsetMode::Scalar;
	BacktestConfig trading;

	/// Throws ValidationError on inconsistent settings.
	void check() const;
	/// The split for a series of `hours` hours.
	SplitSpec resolve_split(std::size_t hours) const;
	/// Training config with the master seed and the given ensemble width applied.
	TrainConfig train_config(std::size_t members) const;

	nlohmann::json to_json() const;
	/// Starts from the defaults and applies the keys present in j.
	static PipelineConfig from_json(const nlohmann::json &j);
	static PipelineConfig load(const std::filesystem::path &path);
	void save(const std::filesystem::path &path) const;
};

std::string horizon_mode_name(HorizonMode mode);
HorizonMode parse_horizon_mode(std::string_view name);

} // namespace nabqr
