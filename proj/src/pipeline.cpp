#include "nabqr/pipeline.hpp"

#include <openssl/evp.h>
#include <spdlog/spdlog.h>

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <map>
#include <sstream>

namespace nabqr {

nlohmann::json CleanReport::to_json() const {
	return {{"hours", hours},
	        {"removed_countertrade", removed_countertrade},
	        {"removed_glitch", removed_glitch},
	        {"removed_total", removed_total}};
}

namespace {

std::size_t count_removed(const Mask &keep) {
	return static_cast<std::size_t>(std::count(keep.begin(), keep.end(), false));
}

[[noreturn]] void rethrow_tagged(const Error &e, const std::string &stage) {
	const std::string msg = "[" + stage + "] " + e.what();
	switch (e.kind()) {
	case ErrorKind::Domain:
		throw DomainError(msg);
	case ErrorKind::Validation:
		throw ValidationError(msg);
	case ErrorKind::Io:
		throw IoError(msg);
	case ErrorKind::Numerical:
		throw NumericalError(msg);
	}
	throw ValidationError(msg);
}

// Runs fn as a named stage: tags errors and accumulates wall time.
template <typename Fn> auto stage(const std::string &name, std::map<std::string, double> &seconds, Fn fn) {
	const auto t0 = std::chrono::steady_clock::now();
	auto record = [&] {
		seconds[name] += std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
	};
	try {
		if constexpr (std::is_void_v<decltype(fn())>) {
			fn();
			record();
		} else {
			auto r = fn();
			record();
			return r;
		}
	} catch (const Error &e) {
		rethrow_tagged(e, name);
	}
}

bool row_monotone(const RowMatrix &m, Eigen::Index r) {
	for (Eigen::Index q = 1; q < m.cols(); ++q) {
		if (m(r, q) < m(r, q - 1)) {
			return false;
		}
	}
	return true;
}

std::span<const double> row_span(const RowMatrix &m, Eigen::Index r) {
	return {m.row(r).data(), static_cast<std::size_t>(m.cols())};
}

} // namespace

CleanReport clean(RawDataset &data, const PipelineConfig &config) {
	data.check();
	CleanReport rep;
	rep.hours = data.size();
	Mask keep(data.size(), true);
	if (config.countertrade_filter) {
		const Mask m = countertrade_filter(data, config.countertrade);
		rep.removed_countertrade = count_removed(m);
		keep = combine_masks(keep, m);
	}
	if (config.glitch_filter) {
		const Mask m = glitch_filter(data.ensembles, config.glitch);
		rep.removed_glitch = count_removed(m);
		keep = combine_masks(keep, m);
	}
	rep.removed_total = count_removed(keep);
	apply_mask(data.observations, keep);
	rep.keep = std::move(keep);
	return rep;
}

double crossing_rate(const QuantileForecast &f) {
	if (f.rows() == 0) {
		return 0.0;
	}
	std::size_t crossed = 0;
	for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
		crossed += row_monotone(f.values, r) ? 0 : 1;
	}
	return static_cast<double>(crossed) / static_cast<double>(f.rows());
}

QuantileForecast repair_crossings(QuantileForecast f) {
	if (f.repaired_rows.size() != f.rows()) {
		f.repaired_rows.assign(f.rows(), false);
	}
	for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
		if (!row_monotone(f.values, r)) {
			auto row = f.values.row(r);
			std::sort(row.begin(), row.end());
			f.repaired_rows[static_cast<std::size_t>(r)] = true;
		}
	}
	f.crossing_repaired = true;
	return f;
}

// ---------------------------------------------------------------------------------------------
// Online forecaster

OnlineForecaster OnlineForecaster::warm_start(std::optional<Corrector> corrector, const RowMatrix &raw_sorted,
                                              const ObservationSeries &y, const Segment &warm,
                                              const PipelineConfig &config) {
	if (static_cast<std::size_t>(raw_sorted.rows()) != y.size()) {
		throw ValidationError("warm start: ensembles and observations differ in length");
	}
	if (warm.length == 0 || warm.end() > y.size()) {
		throw ValidationError("warm start: slice out of range");
	}
	OnlineForecaster f;
	f.mode_ = config.taqr.mode;
	f.issue_lag_ = config.taqr.issue_lag;
	f.repair_ = config.repair_crossings;
	f.intercept_ = config.taqr_intercept;
	f.next_ = y.time(warm.end());
	f.corrector_ = std::move(corrector);

	const std::size_t depth = f.corrector_ ? f.corrector_->lags.depth() : 0;
	if (f.corrector_) {
		if (warm.begin < depth) {
			throw ValidationError("warm start: slice begins before " + std::to_string(depth) + " hours of lag history");
		}
		if (f.corrector_->params.shape.features != static_cast<std::size_t>(raw_sorted.cols())) {
			throw ValidationError("warm start: corrector expects " +
			                      std::to_string(f.corrector_->params.shape.features) + " members, data has " +
			                      std::to_string(raw_sorted.cols()));
		}
	}
	std::vector<std::size_t> rows;
	for (std::size_t i = warm.begin; i < warm.end(); ++i) {
		if (y.valid[i]) {
			rows.push_back(i);
		}
	}
	const Eigen::Index members =
	    f.corrector_ ? static_cast<Eigen::Index>(f.corrector_->params.shape.outputs) : raw_sorted.cols();
	RowMatrix design(static_cast<Eigen::Index>(rows.size()), members);
	std::vector<double> y0;
	for (std::size_t r = 0; r < rows.size(); ++r) {
		if (f.corrector_) {
			design.row(static_cast<Eigen::Index>(r)) =
			    correct_row(f.corrector_->params, raw_sorted, rows[r], f.corrector_->lags).transpose();
		} else {
			design.row(static_cast<Eigen::Index>(r)) = raw_sorted.row(static_cast<Eigen::Index>(rows[r]));
		}
		y0.push_back(y.values[rows[r]]);
	}
	RowMatrix X0(design.rows(), members + (f.intercept_ ? 1 : 0));
	for (Eigen::Index r = 0; r < design.rows(); ++r) {
		const std::vector<double> x = f.regressors(design, r);
		X0.row(r) = Eigen::Map<const Eigen::RowVectorXd>(x.data(), X0.cols());
	}
	f.bank_ = MultiLevelTaqr(X0, y0, config.levels, config.taqr.n_full, config.taqr.solver);
	f.history_ = raw_sorted.middleRows(static_cast<Eigen::Index>(warm.end() - depth), static_cast<Eigen::Index>(depth));
	return f;
}

std::vector<double> OnlineForecaster::regressors(const RowMatrix &design, Eigen::Index r) const {
	std::vector<double> x;
	x.reserve(static_cast<std::size_t>(design.cols()) + 1);
	if (intercept_) {
		x.push_back(1.0);
	}
	const auto row = design.row(r);
	x.insert(x.end(), row.begin(), row.end());
	return x;
}

RowMatrix OnlineForecaster::design_rows(const RowMatrix &block) const {
	if (!corrector_) {
		return block;
	}
	RowMatrix h(history_.rows() + block.rows(), block.cols());
	h << history_, block;
	RowMatrix out(block.rows(), static_cast<Eigen::Index>(corrector_->params.shape.outputs));
	for (Eigen::Index r = 0; r < block.rows(); ++r) {
		out.row(r) =
		    correct_row(corrector_->params, h, static_cast<std::size_t>(history_.rows() + r), corrector_->lags).transpose();
	}
	return out;
}

void OnlineForecaster::assimilate_before(HourStamp cutoff, HourStamp issuing) {
	while (!pending_.empty() && pending_.front().time < cutoff) {
		const Pending &p = pending_.front();
		if (!p.observed) {
			throw ValidationError("observation for " + format_timestamp(p.time) +
			                      " was not reported before issuing the block at " + format_timestamp(issuing));
		}
		if (p.valid) {
			bank_.assimilate(p.x, p.y);
		}
		pending_.pop_front();
	}
}

OnlineForecaster::Issue OnlineForecaster::issue(const EnsembleMatrix &block) {
	if (bank_.states().empty()) {
		throw ValidationError("forecaster is not initialized");
	}
	const auto rows = static_cast<Eigen::Index>(block.rows());
	if (rows == 0) {
		throw ValidationError("empty ensemble block");
	}
	if (block.start != next_) {
		throw ValidationError("out-of-order block: expected " + format_timestamp(next_) + ", got " +
		                      format_timestamp(block.start));
	}
	const Eigen::Index members =
	    corrector_ ? static_cast<Eigen::Index>(corrector_->params.shape.features)
	               : static_cast<Eigen::Index>(bank_.states().front().columns()) - (intercept_ ? 1 : 0);
	if (block.members.cols() != members) {
		throw ValidationError("block has " + std::to_string(block.members.cols()) + " members, expected " +
		                      std::to_string(members));
	}
	if (mode_ == HorizonMode::DayAhead && hour_of_day(block.start) + rows > 24) {
		throw ValidationError("day-ahead block starting " + format_timestamp(block.start) + " crosses midnight");
	}
	if (mode_ == HorizonMode::Rolling && rows != 1) {
		throw ValidationError("rolling mode issues one hour at a time");
	}
	const RowMatrix sorted = block.sorted ? block.members : sort_rows(block).members;

	const int lag = mode_ == HorizonMode::DayAhead ? issue_lag_ : 0;
	assimilate_before(block.start - lag, block.start);

	Issue out;
	out.design = design_rows(sorted);
	out.forecast.start = block.start;
	out.forecast.levels = bank_.levels();
	out.forecast.values.resize(rows, static_cast<Eigen::Index>(bank_.levels().size()));
	const HourStamp issued = mode_ == HorizonMode::DayAhead ? block.start - issue_lag_ : block.start - 1;
	out.forecast.issue_time.assign(static_cast<std::size_t>(rows), issued);
	out.crossed.assign(static_cast<std::size_t>(rows), false);
	for (Eigen::Index r = 0; r < rows; ++r) {
		const auto q = bank_.predict(regressors(out.design, r));
		for (std::size_t l = 0; l < q.size(); ++l) {
			out.forecast.values(r, static_cast<Eigen::Index>(l)) = q[l];
		}
		out.crossed[static_cast<std::size_t>(r)] = !row_monotone(out.forecast.values, r);
	}
	if (repair_) {
		out.forecast = repair_crossings(std::move(out.forecast));
	}

	for (Eigen::Index r = 0; r < rows; ++r) {
		Pending p;
		p.time = block.start + r;
		p.x = regressors(out.design, r);
		pending_.push_back(std::move(p));
	}
	if (corrector_) {
		const std::size_t depth = corrector_->lags.depth();
		RowMatrix h(history_.rows() + rows, sorted.cols());
		h << history_, sorted;
		history_ = h.bottomRows(static_cast<Eigen::Index>(depth));
	}
	next_ += rows;
	return out;
}

void OnlineForecaster::observe(HourStamp t, double value, bool valid) {
	if (pending_.empty() || t < pending_.front().time || t >= next_) {
		throw ValidationError("observation for " + format_timestamp(t) + " does not match an issued, open hour");
	}
	Pending &p = pending_[static_cast<std::size_t>(t - pending_.front().time)];
	if (p.observed) {
		throw ValidationError("observation for " + format_timestamp(t) + " reported twice");
	}
	if (valid && !std::isfinite(value)) {
		throw ValidationError("non-finite observation for " + format_timestamp(t));
	}
	p.observed = true;
	p.valid = valid;
	p.y = valid ? value : 0.0;
}

void OnlineForecaster::save(const std::filesystem::path &dir) const {
	std::filesystem::create_directories(dir);
	if (corrector_) {
		corrector_->checkpoint().save(dir / "corrector.ckpt");
	} else {
		std::filesystem::remove(dir / "corrector.ckpt");
	}
	bank_.snapshot().save(dir / "taqr.ckpt");
	Checkpoint ck("nabqr-online");
	ck.meta()["next_hour"] = next_;
	ck.meta()["horizon"] = horizon_mode_name(mode_);
	ck.meta()["issue_lag"] = issue_lag_;
	ck.meta()["repair_crossings"] = repair_;
	ck.meta()["corrected"] = corrector_.has_value();
	ck.meta()["intercept"] = intercept_;
	const std::size_t width = bank_.states().empty() ? 0 : bank_.states().front().columns();
	ck.meta()["design_width"] = width;
	ck.put("history", history_);
	RowMatrix px(static_cast<Eigen::Index>(pending_.size()), static_cast<Eigen::Index>(width));
	std::vector<double> py;
	std::vector<std::int64_t> pt, pflags;
	for (std::size_t i = 0; i < pending_.size(); ++i) {
		const Pending &p = pending_[i];
		for (std::size_t k = 0; k < width; ++k) {
			px(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(k)) = p.x[k];
		}
		py.push_back(p.y);
		pt.push_back(p.time);
		pflags.push_back((p.valid ? 1 : 0) | (p.observed ? 2 : 0));
	}
	ck.put("pending_x", px);
	ck.put("pending_y", std::move(py));
	ck.put_ints("pending_time", std::move(pt));
	ck.put_ints("pending_flags", std::move(pflags));
	ck.save(dir / "online.ckpt");
}

OnlineForecaster OnlineForecaster::load(const std::filesystem::path &dir) {
	const Checkpoint ck = Checkpoint::load(dir / "online.ckpt");
	ck.expect_kind("nabqr-online");
	OnlineForecaster f;
	try {
		f.next_ = ck.meta().at("next_hour").get<HourStamp>();
		f.mode_ = parse_horizon_mode(ck.meta().at("horizon").get<std::string>());
		f.issue_lag_ = ck.meta().at("issue_lag").get<int>();
		f.repair_ = ck.meta().at("repair_crossings").get<bool>();
		f.intercept_ = ck.meta().at("intercept").get<bool>();
		if (ck.meta().at("corrected").get<bool>()) {
			f.corrector_ = Corrector::from_checkpoint(Checkpoint::load(dir / "corrector.ckpt"));
		}
	} catch (const nlohmann::json::exception &e) {
		throw ValidationError("online state " + (dir / "online.ckpt").string() + ": " + e.what());
	}
	f.bank_ = MultiLevelTaqr::restore(Checkpoint::load(dir / "taqr.ckpt"));
	f.history_ = ck.row_matrix("history");
	const RowMatrix px = ck.row_matrix("pending_x");
	const auto &py = ck.values("pending_y");
	const auto &pt = ck.ints("pending_time");
	const auto &pflags = ck.ints("pending_flags");
	if (py.size() != pt.size() || pflags.size() != pt.size() || static_cast<std::size_t>(px.rows()) != pt.size()) {
		throw ValidationError("online state: pending arrays disagree in length");
	}
	for (std::size_t i = 0; i < pt.size(); ++i) {
		Pending p;
		p.time = pt[i];
		const auto row = px.row(static_cast<Eigen::Index>(i));
		p.x.assign(row.begin(), row.end());
		p.y = py[i];
		p.valid = (pflags[i] & 1) != 0;
		p.observed = (pflags[i] & 2) != 0;
		f.pending_.push_back(std::move(p));
	}
	return f;
}

// ---------------------------------------------------------------------------------------------
// Batch run

namespace {

struct ForecastRun {
	QuantileForecast span; ///< rows for [from, to)
	RowMatrix design;      ///< design rows for [from, to)
	std::size_t crossed_test = 0;
	OnlineForecaster final_state;
	OnlineForecaster test_start_state;
};

// Issues every block from the window-fill slice through the end of the test slice.
ForecastRun drive(OnlineForecaster f, const RowMatrix &raw_sorted, const ObservationSeries &y, const SplitSpec &s,
                  const QuantileLevels &levels, std::size_t design_width) {
	const std::size_t from = s.taqr_init_window.begin, to = s.test.end();
	ForecastRun run;
	run.span.start = y.time(from);
	run.span.levels = levels;
	run.span.values.resize(static_cast<Eigen::Index>(to - from), static_cast<Eigen::Index>(levels.size()));
	run.span.issue_time.resize(to - from);
	run.span.repaired_rows.assign(to - from, false);
	run.design.resize(static_cast<Eigen::Index>(to - from), static_cast<Eigen::Index>(design_width));
	bool snapped = false;
	std::size_t h = from;
	while (h < to) {
		const std::size_t e = f.mode() == HorizonMode::DayAhead
		                          ? std::min(to, h + static_cast<std::size_t>(24 - hour_of_day(y.time(h))))
		                          : h + 1;
		if (!snapped && e > s.test.begin) {
			run.test_start_state = f;
			snapped = true;
		}
		EnsembleMatrix block;
		block.start = y.time(h);
		block.sorted = true;
		block.members = raw_sorted.middleRows(static_cast<Eigen::Index>(h), static_cast<Eigen::Index>(e - h));
		OnlineForecaster::Issue out = f.issue(block);
		run.span.crossing_repaired = out.forecast.crossing_repaired;
		const auto off = static_cast<Eigen::Index>(h - from);
		run.span.values.middleRows(off, out.forecast.values.rows()) = out.forecast.values;
		run.design.middleRows(off, out.design.rows()) = out.design;
		for (std::size_t i = h; i < e; ++i) {
			run.span.issue_time[i - from] = out.forecast.issue_time[i - h];
			run.span.repaired_rows[i - from] = !out.forecast.repaired_rows.empty() && out.forecast.repaired_rows[i - h];
			f.observe(y.time(i), y.values[i], y.valid[i]);
		}
		for (std::size_t i = std::max(h, s.test.begin); i < e; ++i) {
			run.crossed_test += out.crossed[i - h] ? 1 : 0;
		}
		h = e;
	}
	run.final_state = std::move(f);
	return run;
}

QuantileForecast rows_of(const QuantileForecast &f, std::size_t offset, std::size_t count) {
	QuantileForecast out;
	out.start = f.start + static_cast<HourStamp>(offset);
	out.levels = f.levels;
	out.values = f.values.middleRows(static_cast<Eigen::Index>(offset), static_cast<Eigen::Index>(count));
	if (!f.issue_time.empty()) {
		out.issue_time.assign(f.issue_time.begin() + static_cast<std::ptrdiff_t>(offset),
		                      f.issue_time.begin() + static_cast<std::ptrdiff_t>(offset + count));
	}
	if (!f.repaired_rows.empty()) {
		out.repaired_rows.assign(f.repaired_rows.begin() + static_cast<std::ptrdiff_t>(offset),
		                         f.repaired_rows.begin() + static_cast<std::ptrdiff_t>(offset + count));
	}
	out.crossing_repaired = f.crossing_repaired;
	return out;
}

} // namespace

QuantileForecast baseline_forecast(const std::string &method, const RawDataset &data, const SplitSpec &split,
                                   const PipelineConfig &config) {
	const RowMatrix sorted = data.ensembles.sorted ? data.ensembles.members : sort_rows(data.ensembles).members;
	std::vector<Eigen::Index> train_rows;
	for (std::size_t i = 0; i < split.test.begin; ++i) {
		if (data.observations.valid[i]) {
			train_rows.push_back(static_cast<Eigen::Index>(i));
		}
	}
	RowMatrix X(static_cast<Eigen::Index>(train_rows.size()), sorted.cols());
	std::vector<double> y;
	for (std::size_t r = 0; r < train_rows.size(); ++r) {
		X.row(static_cast<Eigen::Index>(r)) = sorted.row(train_rows[r]);
		y.push_back(data.observations.values[static_cast<std::size_t>(train_rows[r])]);
	}
	QuantileForecast f;
	f.start = data.observations.time(split.test.begin);
	f.levels = config.levels;
	f.values.resize(static_cast<Eigen::Index>(split.test.length), static_cast<Eigen::Index>(config.levels.size()));
	auto fill = [&](auto predict) {
		for (std::size_t i = 0; i < split.test.length; ++i) {
			const std::vector<double> q = predict(row_span(sorted, static_cast<Eigen::Index>(split.test.begin + i)));
			for (std::size_t l = 0; l < q.size(); ++l) {
				f.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(l)) = q[l];
			}
		}
	};
	if (method == "qrf") {
		ForestConfig fc = config.forest;
		fc.seed = config.seed;
		const ForestModel model = qrf_fit(X, y, fc);
		fill([&](std::span<const double> x) { return model.predict(x, config.levels); });
	} else if (method == "qgb") {
		const BoostBank bank = qgb_fit_levels(X, y, config.levels, config.boost);
		fill([&](std::span<const double> x) { return bank.predict(x); });
	} else {
		throw ValidationError("unknown baseline '" + method + "'");
	}
	return config.repair_crossings ? repair_crossings(std::move(f)) : f;
}

TrainedCorrector train_corrector(const RawDataset &data, const PipelineConfig &config, const SplitSpec &split) {
	EnsembleMatrix ens = data.ensembles.sorted ? data.ensembles : sort_rows(data.ensembles);
	const TrainConfig tc = config.train_config(ens.member_count());
	const TrainingSet ts = make_training_set(ens, data.observations, split.nn_train.begin, split.nn_train.end(),
	                                         config.lags, tc.levels, tc.target_mode);
	TrainResult tr = train(ts, tc);
	TrainedCorrector out;
	out.history = std::move(tr.history);
	out.corrector.params = std::move(tr.params);
	out.corrector.lags = config.lags;
	out.corrector.levels = tc.levels;
	out.corrector.target_mode = tc.target_mode;
	out.corrector.seed = tc.seed;
	return out;
}

NabqrResult run_nabqr(const RawDataset &data, const PipelineConfig &config, const RunOptions &options) {
	NabqrResult res;
	auto &sec = res.seconds;
	const auto t_start = std::chrono::steady_clock::now();

	const RowMatrix raw_sorted = stage("prepare", sec, [&] {
		config.check();
		data.check();
		res.split = config.resolve_split(data.size());
		return data.ensembles.sorted ? data.ensembles.members : sort_rows(data.ensembles).members;
	});
	const SplitSpec &s = res.split;
	const ObservationSeries &y = data.observations;
	spdlog::debug("split: nn_train {} / init {} / window {} / test {}", s.nn_train.length, s.taqr_init_params.length,
	              s.taqr_init_window.length, s.test.length);

	if (config.correction) {
		res.corrector = stage("train", sec, [&]() -> Corrector {
			if (options.pretrained) {
				const Corrector &c = *options.pretrained;
				if (c.params.shape.features != static_cast<std::size_t>(raw_sorted.cols())) {
					throw ValidationError("pretrained corrector expects " + std::to_string(c.params.shape.features) +
					                      " members, data has " + std::to_string(raw_sorted.cols()));
				}
				return c;
			}
			TrainedCorrector tr = train_corrector(data, config, s);
			res.history = std::move(tr.history);
			Corrector c = std::move(tr.corrector);
			if (!options.artifact_dir.empty()) {
				std::filesystem::create_directories(options.artifact_dir);
				c.checkpoint().save(options.artifact_dir / "corrector.ckpt");
			}
			return c;
		});
	}

	const std::size_t fill_rows = s.taqr_init_window.length;
	const bool corrected = res.corrector.has_value();
	const std::size_t width = corrected ? res.corrector->params.shape.outputs : static_cast<std::size_t>(raw_sorted.cols());
	ForecastRun main = stage("taqr", sec, [&] {
		OnlineForecaster f = OnlineForecaster::warm_start(res.corrector, raw_sorted, y, s.taqr_init_params, config);
		return drive(std::move(f), raw_sorted, y, s, config.levels, width);
	});
	res.forecast = rows_of(main.span, fill_rows, s.test.length);
	res.fill_forecast = rows_of(main.span, 0, fill_rows);
	res.crossing_rate = static_cast<double>(main.crossed_test) / static_cast<double>(s.test.length);
	res.final_state = std::move(main.final_state);
	res.test_start_state = std::move(main.test_start_state);

	if (corrected) {
		QuantileForecast q;
		q.start = y.time(s.test.begin);
		q.levels = res.corrector->levels;
		q.values = main.design.middleRows(static_cast<Eigen::Index>(fill_rows), static_cast<Eigen::Index>(s.test.length));
		res.forecasts["qrnn"] = std::move(q);
		if (config.taqr_raw) {
		res.forecasts["taqr"] = stage("taqr-raw", sec, [&] {
			OnlineForecaster f = OnlineForecaster::warm_start(std::nullopt, raw_sorted, y, s.taqr_init_params, config);
			ForecastRun r = drive(std::move(f), raw_sorted, y, s, config.levels,
			                      static_cast<std::size_t>(raw_sorted.cols()));
			return rows_of(r.span, fill_rows, s.test.length);
		});
		}
	} else {
		res.forecasts["taqr"] = res.forecast; // the composition without correction is TAQR on raw members
	}
	if (config.qrf) {
		res.forecasts["qrf"] = stage("qrf", sec, [&] { return baseline_forecast("qrf", data, s, config); });
	}
	if (config.qgb) {
		res.forecasts["qgb"] = stage("qgb", sec, [&] { return baseline_forecast("qgb", data, s, config); });
	}

	stage("score", sec, [&] {
		EnsembleMatrix test_raw;
		test_raw.start = y.time(s.test.begin);
		test_raw.sorted = true;
		test_raw.members = raw_sorted.middleRows(static_cast<Eigen::Index>(s.test.begin),
		                                         static_cast<Eigen::Index>(s.test.length));
		res.report.baseline = "raw";
		res.report.reports.push_back(score_ensemble("raw", y, test_raw));
		for (const char *m : {"qrnn", "taqr", "qrf", "qgb"}) {
			if (res.forecasts.count(m)) {
				res.report.reports.push_back(score_quantiles(m, y, res.forecasts.at(m)));
			}
		}
		res.report.reports.push_back(score_quantiles("nabqr", y, res.forecast));
	});
	sec["total"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
	return res;
}

// ---------------------------------------------------------------------------------------------
// Files

namespace {

// Shortest text that reads back to the same double.
std::string shortest(double v) {
	char buf[32];
	const auto [ptr, ec] = std::to_chars(buf, buf + sizeof buf, v);
	return std::string(buf, ptr);
}

} // namespace

void write_forecast_csv(const QuantileForecast &f, std::ostream &out) {
	out << "timestamp,level,value,issue_time\n";
	for (Eigen::Index r = 0; r < f.values.rows(); ++r) {
		const std::string ts = format_timestamp(f.time(static_cast<std::size_t>(r)));
		const std::string issued =
		    f.issue_time.empty() ? std::string() : format_timestamp(f.issue_time[static_cast<std::size_t>(r)]);
		for (std::size_t q = 0; q < f.levels.size(); ++q) {
			out << ts << ',' << shortest(f.levels[q]) << ',' << shortest(f.values(r, static_cast<Eigen::Index>(q)))
			    << ',' << issued << '\n';
		}
	}
}

QuantileForecast read_forecast_csv(std::istream &in, const std::string &source) {
	std::string line;
	if (!std::getline(in, line)) {
		throw ValidationError(source + ": empty forecast file");
	}
	if (!line.empty() && line.back() == '\r') {
		line.pop_back();
	}
	if (line != "timestamp,level,value,issue_time") {
		throw ValidationError(source + ": expected header 'timestamp,level,value,issue_time'");
	}
	struct Row {
		std::map<double, double> values;
		std::optional<HourStamp> issued;
	};
	std::map<HourStamp, Row> rows;
	std::size_t line_no = 1;
	auto number = [&](const std::string &cell) {
		double v = 0.0;
		const auto [p, ec] = std::from_chars(cell.data(), cell.data() + cell.size(), v);
		if (ec != std::errc() || p != cell.data() + cell.size()) {
			throw ValidationError(source + ":" + std::to_string(line_no) + ": malformed number '" + cell + "'");
		}
		return v;
	};
	while (std::getline(in, line)) {
		++line_no;
		if (!line.empty() && line.back() == '\r') {
			line.pop_back();
		}
		if (line.empty()) {
			continue;
		}
		std::vector<std::string> f;
		std::stringstream ss(line);
		std::string cell;
		while (std::getline(ss, cell, ',')) {
			f.push_back(cell);
		}
		if (f.size() == 3) {
			f.emplace_back();
		}
		if (f.size() != 4) {
			throw ValidationError(source + ":" + std::to_string(line_no) + ": expected 4 fields");
		}
		Row &r = rows[parse_timestamp(f[0])];
		if (!r.values.emplace(number(f[1]), number(f[2])).second) {
			throw ValidationError(source + ":" + std::to_string(line_no) + ": duplicate level");
		}
		if (!f[3].empty()) {
			r.issued = parse_timestamp(f[3]);
		}
	}
	if (rows.empty()) {
		throw ValidationError(source + ": no forecast rows");
	}
	std::vector<double> levels;
	for (const auto &[lv, v] : rows.begin()->second.values) {
		levels.push_back(lv);
	}
	QuantileForecast out;
	out.start = rows.begin()->first;
	out.levels = QuantileLevels(levels);
	out.values.resize(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(levels.size()));
	bool all_issued = true;
	Eigen::Index r = 0;
	for (const auto &[t, row] : rows) {
		if (t != out.start + r) {
			throw ValidationError(source + ": forecast hours are not contiguous at " + format_timestamp(out.start + r));
		}
		if (row.values.size() != levels.size()) {
			throw ValidationError(source + ": " + format_timestamp(t) + " does not list every level");
		}
		Eigen::Index q = 0;
		for (const auto &[lv, v] : row.values) {
			if (std::abs(lv - levels[static_cast<std::size_t>(q)]) > 1e-12) {
				throw ValidationError(source + ": " + format_timestamp(t) + " lists different levels");
			}
			out.values(r, q++) = v;
		}
		all_issued = all_issued && row.issued.has_value();
		out.issue_time.push_back(row.issued.value_or(0));
		++r;
	}
	if (!all_issued) {
		out.issue_time.clear();
	}
	return out;
}

std::string file_digest(const std::filesystem::path &path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw IoError("cannot open " + path.string());
	}
	EVP_MD_CTX *ctx = EVP_MD_CTX_new();
	EVP_DigestInit_ex(ctx, EVP_sha256(), nullptr);
	std::vector<char> buf(1 << 16);
	while (in) {
		in.read(buf.data(), static_cast<std::streamsize>(buf.size()));
		EVP_DigestUpdate(ctx, buf.data(), static_cast<std::size_t>(in.gcount()));
	}
	unsigned char md[EVP_MAX_MD_SIZE];
	unsigned int len = 0;
	EVP_DigestFinal_ex(ctx, md, &len);
	EVP_MD_CTX_free(ctx);
	std::ostringstream hex;
	for (unsigned int i = 0; i < len; ++i) {
		hex << std::hex << std::setw(2) << std::setfill('0') << static_cast<int>(md[i]);
	}
	return hex.str();
}

} // namespace nabqr
