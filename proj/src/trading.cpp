#include "nabqr/trading.hpp"

#include <cmath>
#include <iomanip>

namespace nabqr {

OffsetMode parse_offset_mode(std::string_view name) {
	if (name == "scalar") {
		return OffsetMode::Scalar;
	}
	if (name == "hour-of-day") {
		return OffsetMode::HourOfDay;
	}
	throw ValidationError("unknown offset mode '" + std::string(name) + "' (scalar, hour-of-day)");
}

std::string offset_mode_name(OffsetMode mode) { return mode == OffsetMode::Scalar ? "scalar" : "hour-of-day"; }

Offset compute_offset(std::span<const double> pred_median, const ObservationSeries &actuals, std::size_t begin,
                      std::size_t end, OffsetMode mode) {
	if (pred_median.size() != actuals.size()) {
		throw ValidationError("offset: median and observations differ in length");
	}
	if (begin >= end || end > actuals.size()) {
		throw DomainError("offset: empty or out-of-range training slice");
	}
	std::array<double, 24> sum{};
	std::array<std::size_t, 24> count{};
	double total = 0.0;
	std::size_t n = 0;
	for (std::size_t i = begin; i < end; ++i) {
		if (!actuals.valid[i] || !std::isfinite(pred_median[i])) {
			continue;
		}
		const double d = pred_median[i] - actuals.values[i];
		const int h = hour_of_day(actuals.time(i));
		sum[h] += d;
		++count[h];
		total += d;
		++n;
	}
	if (n == 0) {
		throw DomainError("offset: no valid hour in the training slice");
	}
	Offset o;
	o.mode = mode;
	o.scalar = total / static_cast<double>(n);
	if (mode == OffsetMode::HourOfDay) {
		for (int h = 0; h < 24; ++h) {
			if (count[h] == 0) {
				throw DomainError("offset: no valid training hour at hour of day " + std::to_string(h));
			}
			o.per_hour[h] = sum[h] / static_cast<double>(count[h]);
		}
	}
	return o;
}

std::string direction_name(Direction d) {
	return d == Direction::SellSpotBuyImbalance ? "sell-spot-buy-imbalance" : "buy-spot-sell-imbalance";
}

Direction flipped(Direction d) noexcept {
	return d == Direction::SellSpotBuyImbalance ? Direction::BuySpotSellImbalance : Direction::SellSpotBuyImbalance;
}

void BacktestInput::check() const {
	const std::size_t n = spot.size();
	if (pred_median.size() != n || raw_median.size() != n || imbalance.size() != n) {
		throw ValidationError("backtest: input series differ in length");
	}
}

std::vector<std::optional<Direction>> decide(const BacktestInput &in, const Offset &offset,
                                             const BacktestConfig &config) {
	in.check();
	std::vector<std::optional<Direction>> out(in.size());
	for (std::size_t i = 0; i < in.size(); ++i) {
		const double signal = in.pred_median[i] - offset.at(in.start + static_cast<HourStamp>(i)) - in.raw_median[i];
		if (!std::isfinite(signal) || std::abs(signal) < config.dead_band) {
			continue;
		}
		out[i] = signal > 0.0 ? Direction::SellSpotBuyImbalance : Direction::BuySpotSellImbalance;
	}
	return out;
}

TradeLedger settle(const BacktestInput &in, const std::vector<std::optional<Direction>> &decisions,
                   const BacktestConfig &config) {
	in.check();
	if (decisions.size() != in.size()) {
		throw ValidationError("backtest: decision count differs from the input length");
	}
	if (!std::isfinite(config.size) || config.size < 0.0) {
		throw DomainError("backtest: trade size must be finite and nonnegative");
	}
	TradeLedger ledger;
	for (std::size_t i = 0; i < in.size(); ++i) {
		const HourStamp t = in.start + static_cast<HourStamp>(i);
		const bool inputs_ok = std::isfinite(in.spot[i]) && std::isfinite(in.imbalance[i]) &&
		                       std::isfinite(in.pred_median[i]) && std::isfinite(in.raw_median[i]);
		if (!inputs_ok) {
			ledger.skipped.push_back(t);
			continue;
		}
		if (!decisions[i]) {
			continue; // dead band
		}
		TradeRow r;
		r.time = t;
		r.direction = *decisions[i];
		r.spot = in.spot[i];
		r.imbalance = in.imbalance[i];
		const double spread = r.direction == Direction::SellSpotBuyImbalance ? r.spot - r.imbalance : r.imbalance - r.spot;
		r.pnl = spread * config.size;
		ledger.total += r.pnl;
		r.cum_pnl = ledger.total;
		ledger.rows.push_back(r);
	}
	return ledger;
}

TradeLedger backtest(const BacktestInput &in, const Offset &offset, const BacktestConfig &config) {
	return settle(in, decide(in, offset, config), config);
}

void TradeLedger::write_csv(std::ostream &out) const {
	out << "hour,direction,spot,imbalance,pnl,cum_pnl\n" << std::setprecision(17);
	for (const auto &r : rows) {
		out << format_timestamp(r.time) << ',' << direction_name(r.direction) << ',' << r.spot << ',' << r.imbalance
		    << ',' << r.pnl << ',' << r.cum_pnl << '\n';
	}
}

} // namespace nabqr
