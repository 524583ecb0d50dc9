#pragma once

#include <array>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "nabqr/core.hpp"

namespace nabqr {

enum class OffsetMode { Scalar, HourOfDay };

OffsetMode parse_offset_mode(std::string_view name);
std::string offset_mode_name(OffsetMode mode);

/// Mean bias of the corrected median against the observations, removed before comparing medians.
struct Offset {
	OffsetMode mode = OffsetMode::Scalar;
	double scalar = 0.0;
	std::array<double, 24> per_hour{}; ///< indexed by UTC hour of day

	double at(HourStamp t) const noexcept { return mode == OffsetMode::Scalar ? scalar : per_hour[hour_of_day(t)]; }
};

/// mean(pred_median - actual) over valid hours in [begin, end). pred_median is aligned with actuals.
/// Throws DomainError when the slice (or, per hour of day, any hour bucket) has no valid hour.
Offset compute_offset(std::span<const double> pred_median, const ObservationSeries &actuals, std::size_t begin,
                      std::size_t end, OffsetMode mode = OffsetMode::Scalar);

enum class Direction {
	SellSpotBuyImbalance,
	BuySpotSellImbalance,
};

std::string direction_name(Direction d);
Direction flipped(Direction d) noexcept;

struct TradeRow {
	HourStamp time = 0;
	Direction direction = Direction::SellSpotBuyImbalance;
	double spot = 0.0;
	double imbalance = 0.0;
	double pnl = 0.0;
	double cum_pnl = 0.0;
};

struct TradeLedger {
	std::vector<TradeRow> rows;
	std::vector<HourStamp> skipped; ///< hours without a usable price or median
	double total = 0.0;

	void write_csv(std::ostream &out) const;
};

/// Aligned hourly series over the test hours.
struct BacktestInput {
	HourStamp start = 0;
	std::vector<double> pred_median;
	std::vector<double> raw_median;
	std::vector<double> spot;
	std::vector<double> imbalance;

	std::size_t size() const noexcept { return spot.size(); }
	/// Throws ValidationError when the series lengths differ.
	void check() const;
};

struct BacktestConfig {
	double size = 1.0; ///< MWh per trade
	/// No trade when |pred - offset - raw| is below this; 0 trades every hour.
	double dead_band = 0.0;
};

/// Sell spot when the offset-adjusted corrected median exceeds the raw median, buy otherwise.
/// Hours with a NaN median, or inside the dead band, get no decision.
std::vector<std::optional<Direction>> decide(const BacktestInput &in, const Offset &offset,
                                             const BacktestConfig &config = {});

/// Settles given decisions: selling spot earns (spot - imbalance) * size, buying earns the negative.
TradeLedger settle(const BacktestInput &in, const std::vector<std::optional<Direction>> &decisions,
                   const BacktestConfig &config = {});

TradeLedger backtest(const BacktestInput &in, const Offset &offset, const BacktestConfig &config = {});

} // namespace nabqr
