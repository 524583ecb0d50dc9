#pragma once

#include <nlohmann/json.hpp>

#include <deque>
#include <filesystem>
#include <map>
#include <optional>
#include <string>

#include "nabqr/config.hpp"
#include "nabqr/dataio.hpp"
#include "nabqr/nncorrect.hpp"
#include "nabqr/scoring.hpp"
#include "nabqr/taqr.hpp"
#include "nabqr/trading.hpp"

namespace nabqr {

struct CleanReport {
	std::size_t hours = 0;
	std::size_t removed_countertrade = 0;
	std::size_t removed_glitch = 0;
	std::size_t removed_total = 0;
	Mask keep;

	nlohmann::json to_json() const;
};

/// Runs the enabled filters and marks the removed hours invalid in data.observations.
CleanReport clean(RawDataset &data, const PipelineConfig &config);

/// Share of rows whose values decrease somewhere across the levels.
double crossing_rate(const QuantileForecast &forecast);

/// Sorts every row across levels and records which rows changed. Idempotent.
QuantileForecast repair_crossings(QuantileForecast forecast);

/// Day-by-day NABQR forecaster: corrects each incoming ensemble block, predicts it with the current
/// TAQR fits and assimilates observations once they are older than the issue time.
///
/// Observations must be reported (possibly as invalid) for every issued hour before a later block
/// whose issue time follows that hour; blocks must arrive in order without gaps.
class OnlineForecaster {
public:
	struct Issue {
		QuantileForecast forecast; ///< published rows (repaired when enabled)
		RowMatrix design;          ///< corrected (or raw sorted) members of the block
		Mask crossed;              ///< per row: crossed before repair
	};

	OnlineForecaster() = default;

	/// Fits the TAQR levels on the valid hours of `warm` and prepares to issue the hour after it.
	/// raw_sorted must cover hours [0, warm.end()) on the grid of y; without a corrector the raw
	/// members form the design.
	static OnlineForecaster warm_start(std::optional<Corrector> corrector, const RowMatrix &raw_sorted,
	                                   const ObservationSeries &y, const Segment &warm, const PipelineConfig &config);

	/// Forecast for the block's hours. Day-ahead blocks may not cross a UTC midnight; rolling blocks
	/// hold one hour. Throws ValidationError for out-of-order blocks or missing observations.
	Issue issue(const EnsembleMatrix &block);
	/// Reports the observation of an issued, not yet assimilated hour.
	void observe(HourStamp t, double value, bool valid = true);

	HourStamp next_hour() const noexcept { return next_; }
	std::size_t pending() const noexcept { return pending_.size(); }
	const MultiLevelTaqr &taqr() const noexcept { return bank_; }
	const std::optional<Corrector> &corrector() const noexcept { return corrector_; }
	HorizonMode mode() const noexcept { return mode_; }

	/// State directory: corrector.ckpt (when correcting), taqr.ckpt, online.ckpt.
	void save(const std::filesystem::path &dir) const;
	static OnlineForecaster load(const std::filesystem::path &dir);

private:
	struct Pending {
		HourStamp time = 0;
		std::vector<double> x;
		double y = 0.0;
		bool valid = false;
		bool observed = false;
	};

	RowMatrix design_rows(const RowMatrix &block_sorted) const;
	/// TAQR regressors of one design row.
	std::vector<double> regressors(const RowMatrix &design, Eigen::Index r) const;
	void assimilate_before(HourStamp cutoff, HourStamp issuing);

	std::optional<Corrector> corrector_;
	MultiLevelTaqr bank_;
	RowMatrix history_; ///< last lag-depth sorted raw rows before next_
	std::deque<Pending> pending_;
	HourStamp next_ = 0;
	HorizonMode mode_ = HorizonMode::DayAhead;
	int issue_lag_ = 12;
	bool repair_ = true;
	bool intercept_ = false;
};

struct TrainedCorrector {
	Corrector corrector;
	TrainHistory history;
};

/// Trains the corrector on the nn_train slice of `split` with the sorted members of `data`.
TrainedCorrector train_corrector(const RawDataset &data, const PipelineConfig &config, const SplitSpec &split);

struct RunOptions {
	/// Skip training and use this corrector.
	std::optional<Corrector> pretrained;
	/// When set, the corrector checkpoint is written here as soon as it is trained.
	std::filesystem::path artifact_dir;
};

struct NabqrResult {
	SplitSpec split;
	QuantileForecast forecast;      ///< NABQR over the test slice, published
	QuantileForecast fill_forecast; ///< NABQR over the window-fill slice (burn-in, not scored)
	double crossing_rate = 0.0;     ///< NABQR test rows that crossed before repair
	/// Test-slice forecasts of the comparison methods: qrnn, taqr, qrf, qgb.
	std::map<std::string, QuantileForecast> forecasts;
	ReportBundle report; ///< baseline "raw"
	std::optional<Corrector> corrector;
	TrainHistory history;
	OnlineForecaster final_state;
	/// State just before the first block holding a test hour.
	OnlineForecaster test_start_state;
	std::map<std::string, double> seconds; ///< wall time per stage
};

/// Trains the corrector on nn_train, warm-starts TAQR on the initial slice, runs the window-fill and
/// test slices day by day, and scores every method on the test slice. Stage failures are rethrown
/// with the stage name prefixed and the same error kind.
NabqrResult run_nabqr(const RawDataset &data, const PipelineConfig &config, const RunOptions &options = {});

/// Test-slice forecast of QRF or QGB trained on the raw sorted members of every valid hour before the test.
QuantileForecast baseline_forecast(const std::string &method, const RawDataset &data, const SplitSpec &split,
                                   const PipelineConfig &config);

/// Forecast CSV: timestamp, level, value, issue_time (long format).
void write_forecast_csv(const QuantileForecast &f, std::ostream &out);
QuantileForecast read_forecast_csv(std::istream &in, const std::string &source = "<stream>");

/// Hex SHA-256 of a file's bytes.
std::string file_digest(const std::filesystem::path &path);

} // namespace nabqr
