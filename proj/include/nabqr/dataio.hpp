#pragma once

#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "nabqr/core.hpp"

namespace nabqr {

/// One area's hourly series on a common grid. Optional price/volume columns hold NaN where missing.
struct RawDataset {
	std::string area;
	ObservationSeries observations;
	EnsembleMatrix ensembles;
	std::optional<std::vector<double>> spot;         ///< currency / MWh
	std::optional<std::vector<double>> countertrade; ///< MW
	std::optional<std::vector<double>> imbalance;    ///< currency / MWh

	std::size_t size() const noexcept { return observations.size(); }
	HourStamp start() const noexcept { return observations.start; }
	/// Throws ValidationError when series lengths or grid starts disagree.
	void check() const;
	/// Hours [begin, end) as a new dataset.
	RawDataset slice(std::size_t begin, std::size_t end) const;
};

/// Columns: timestamp, actual, ens_00..ens_{M-1}, optional spot, countertrade, imbalance.
/// Empty or NaN cells mark the hour invalid; unknown columns are ignored with a warning.
RawDataset read_csv(std::istream &in, const std::string &source = "<stream>");
RawDataset load_csv(const std::filesystem::path &path);
void write_csv(const RawDataset &data, std::ostream &out);
void save_csv(const RawDataset &data, const std::filesystem::path &path);

struct CountertradeFilterConfig {
	double high = 1700.0; ///< MW, flank level
	double low = 25.0;    ///< MW, curtailment level
	int pad = 2;          ///< hours added on each side of a flagged run
	int flank_hours = 24; ///< how far to search for the flanking hours
	bool negative_spot = true;
	/// Restricts the negative-spot rule to [spot_from, spot_to); unbounded when unset.
	std::optional<HourStamp> spot_from, spot_to;
};

/// Keep mask: removes low-countertrade runs flanked by high countertrade, and negative-spot hours,
/// each padded. The flank of a run is the nearest hour before (after) it with a recorded nonzero
/// volume, searched within flank_hours; both flanks must exceed `high`.
Mask countertrade_filter(const RawDataset &data, const CountertradeFilterConfig &config = {});

struct GlitchFilterConfig {
	double low = 358.0;
	double high = 370.0;
	std::size_t count = 9; ///< an hour is removed when strictly more members lie in (low, high)
	int pad = 2;
};

Mask glitch_filter(const EnsembleMatrix &ensembles, const GlitchFilterConfig &config = {});

/// Elementwise AND of keep masks.
Mask combine_masks(const Mask &a, const Mask &b);
/// Marks every hour with keep == false invalid.
void apply_mask(ObservationSeries &y, const Mask &keep);
/// Extends every false entry by `pad` positions on each side.
Mask pad_removals(const Mask &keep, int pad);

struct Segment {
	std::size_t begin = 0;
	std::size_t length = 0;
	std::size_t end() const noexcept { return begin + length; }
};

/// The four consecutive slices of a run: corrector training, TAQR initial fit, TAQR window fill, test.
struct SplitSpec {
	Segment nn_train, taqr_init_params, taqr_init_window, test;

	/// Contiguous segments starting at hour 0 with the given lengths.
	static SplitSpec from_lengths(std::size_t nn_train, std::size_t init_params, std::size_t init_window,
	                              std::size_t test);
	/// 14040 / 192 / 4944 / 5112.
	static SplitSpec full_length();
	/// Every length except the 192-hour initial fit multiplied by factor and floored.
	static SplitSpec scaled(double factor);
	/// The scaled split that fits in T hours.
	static SplitSpec fit_to(std::size_t hours);

	std::size_t end() const noexcept { return test.end(); }
	/// Throws ValidationError unless the segments are ordered, contiguous and non-overlapping.
	void check() const;
};

/// Validates the split against a series of T hours and returns it.
SplitSpec split(std::size_t hours, const SplitSpec &spec);

struct SimulationConfig {
	std::uint64_t seed = 1;
	std::size_t hours = 12000;
	double capacity = 1000.0; ///< MW
	std::size_t members = 51;
	HourStamp start = 438288; ///< 2020-01-01T00:00Z
	/// Ensemble spread relative to the true forecast uncertainty.
	double underdispersion = 0.5;
	/// Multiplicative bias of the ensemble power.
	double bias = 0.05;
	/// Member timing offsets are drawn from {-jitter, ..., jitter} hours per member and day.
	int jitter_hours = 2;
	/// Expected curtailment episodes per 1000 hours.
	double curtailment_rate = 1.5;
	/// Expected ensemble glitch episodes per 1000 hours.
	double glitch_rate = 0.3;
};

/// Seeded synthetic dataset: a latent wind process with daily and annual cycles mapped through a
/// saturating power curve, noisy observations, deliberately miscalibrated ensembles, and spot,
/// imbalance and countertrade series with curtailment episodes.
RawDataset simulate(const SimulationConfig &config);

} // namespace nabqr
