#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <spdlog/spdlog.h>

#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>

#include "nabqr/pipeline.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace nabqr;

namespace {

constexpr const char *kVersion = "0.1.0";

std::ofstream open_out(const fs::path &path) {
	if (path.has_parent_path()) {
		fs::create_directories(path.parent_path());
	}
	std::ofstream out(path);
	if (!out) {
		throw IoError("cannot write " + path.string());
	}
	return out;
}

std::ifstream open_in(const fs::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open " + path.string());
	}
	return in;
}

void write_json(const fs::path &path, const json &j) {
	auto out = open_out(path);
	out << j.dump(2) << '\n';
}

// Hourly columns of an arbitrary CSV with a timestamp column, keyed by header name.
struct Columns {
	HourStamp start = 0;
	std::size_t rows = 0;
	std::map<std::string, std::vector<double>> data;

	const std::vector<double> &at(const std::string &name, const std::string &source) const {
		auto it = data.find(name);
		if (it == data.end()) {
			throw ValidationError(source + ": no '" + name + "' column");
		}
		return it->second;
	}
};

std::vector<std::string> split_line(const std::string &line) {
	std::vector<std::string> out;
	std::stringstream ss(line);
	std::string f;
	while (std::getline(ss, f, ',')) {
		out.push_back(f);
	}
	if (!line.empty() && line.back() == ',') {
		out.emplace_back();
	}
	return out;
}

Columns read_columns(const fs::path &path, const std::vector<std::string> &wanted) {
	auto in = open_in(path);
	const std::string src = path.string();
	std::string line;
	if (!std::getline(in, line)) {
		throw ValidationError(src + ": empty file");
	}
	const auto header = split_line(line);
	if (header.empty() || header[0] != "timestamp") {
		throw ValidationError(src + ": first column must be 'timestamp'");
	}
	std::map<std::string, std::size_t> index;
	for (std::size_t i = 1; i < header.size(); ++i) {
		index[header[i]] = i;
	}
	Columns c;
	for (const auto &w : wanted) {
		if (index.count(w)) {
			c.data[w];
		}
	}
	std::size_t lineno = 1;
	while (std::getline(in, line)) {
		++lineno;
		if (line.empty()) {
			continue;
		}
		const auto f = split_line(line);
		const HourStamp t = parse_timestamp(f.at(0));
		if (c.rows == 0) {
			c.start = t;
		} else if (t != c.start + static_cast<HourStamp>(c.rows)) {
			throw ValidationError(src + ":" + std::to_string(lineno) + ": expected " +
			                      format_timestamp(c.start + static_cast<HourStamp>(c.rows)));
		}
		for (auto &[name, col] : c.data) {
			const std::size_t i = index.at(name);
			const std::string cell = i < f.size() ? f[i] : std::string();
			double v = std::nan("");
			if (!cell.empty() && cell != "nan" && cell != "NA") {
				try {
					v = std::stod(cell);
				} catch (const std::exception &) {
					throw ValidationError(src + ":" + std::to_string(lineno) + ": bad number '" + cell + "'");
				}
			}
			col.push_back(v);
		}
		++c.rows;
	}
	return c;
}

// Values of `col` on the hours [start, start + n); NaN outside the column's range.
std::vector<double> align(const Columns &c, const std::vector<double> &col, HourStamp start, std::size_t n) {
	std::vector<double> out(n, std::nan(""));
	for (std::size_t i = 0; i < n; ++i) {
		const HourStamp k = start + static_cast<HourStamp>(i) - c.start;
		if (k >= 0 && static_cast<std::size_t>(k) < c.rows) {
			out[i] = col[static_cast<std::size_t>(k)];
		}
	}
	return out;
}

ObservationSeries observations_over(const Columns &c, HourStamp start, std::size_t n, const std::string &src) {
	ObservationSeries y;
	y.start = start;
	y.values = align(c, c.at("actual", src), start, n);
	y.valid.resize(n);
	for (std::size_t i = 0; i < n; ++i) {
		y.valid[i] = std::isfinite(y.values[i]);
	}
	return y;
}

QuantileForecast load_forecast(const fs::path &path) {
	auto in = open_in(path);
	return read_forecast_csv(in, path.string());
}

std::vector<double> median_column(const QuantileForecast &f, const std::string &src) {
	if (f.levels.index_of(0.5) < 0) {
		throw ValidationError(src + ": forecast has no 0.5 level");
	}
	const Eigen::VectorXd m = f.column(0.5);
	return {m.data(), m.data() + m.size()};
}

std::vector<double> raw_medians(const RawDataset &d, HourStamp start, std::size_t n) {
	const EnsembleMatrix s = sort_rows(d.ensembles);
	std::vector<double> out(n, std::nan(""));
	for (std::size_t i = 0; i < n; ++i) {
		const HourStamp k = start + static_cast<HourStamp>(i) - d.start();
		if (k >= 0 && static_cast<std::size_t>(k) < d.size()) {
			const auto row = s.members.row(k);
			out[i] = median_member(std::span<const double>(row.data(), static_cast<std::size_t>(row.size())));
		}
	}
	return out;
}

json file_entry(const fs::path &path) { return {{"path", path.string()}, {"sha256", file_digest(path)}}; }

struct Manifest {
	json j;
	std::chrono::steady_clock::time_point t0 = std::chrono::steady_clock::now();

	Manifest(const std::string &command, const std::vector<std::string> &argv) {
		j["command"] = command;
		j["version"] = kVersion;
		j["argv"] = argv;
		j["inputs"] = json::array();
		j["outputs"] = json::array();
	}
	void input(const fs::path &p) { j["inputs"].push_back(file_entry(p)); }
	void output(const fs::path &p) { j["outputs"].push_back(file_entry(p)); }
	void write(const fs::path &path) {
		j["seconds"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
		write_json(path, j);
	}
};

fs::path sibling(const fs::path &p, const std::string &suffix) {
	return p.parent_path() / (p.stem().string() + suffix);
}

// Config file plus the flags that override it. Flag defaults mirror PipelineConfig so --help shows them.
struct ConfigFlags {
	const PipelineConfig defaults;
	std::string file;
	std::uint64_t seed = defaults.seed;
	std::size_t epochs = defaults.train.epochs;
	std::string optimizer = optimizer_name(defaults.train.optimizer);
	double learning_rate = defaults.train.learning_rate;
	bool no_correction = false;
	std::string horizon = horizon_mode_name(defaults.taqr.mode);
	int issue_lag = defaults.taqr.issue_lag;
	std::size_t n_init = defaults.taqr.n_init;
	std::size_t n_full = defaults.taqr.n_full;
	bool intercept = false;
	std::vector<double> levels = defaults.levels.values();
	std::vector<int> lags = defaults.lags.lags;
	double ct_high = defaults.countertrade.high;
	double ct_low = defaults.countertrade.low;
	std::size_t glitch_count = defaults.glitch.count;
	bool no_filters = false;
	bool no_baselines = false;
	std::vector<CLI::Option *> opts;

	void add(CLI::App *app, bool model_flags) {
		app->add_option("--config", file, "JSON config file; flags override its values");
		opts.push_back(app->add_option("--seed", seed, "Seed of every random draw")->capture_default_str());
		opts.push_back(app->add_option("--countertrade-high", ct_high, "Countertrade flank level, MW")
		                   ->capture_default_str());
		opts.push_back(
		    app->add_option("--countertrade-low", ct_low, "Curtailment countertrade level, MW")->capture_default_str());
		opts.push_back(app->add_option("--glitch-count", glitch_count,
		                               "Remove hours with more than this many members in the glitch band")
		                   ->capture_default_str());
		opts.push_back(app->add_flag("--no-filters", no_filters, "Disable both cleaning filters"));
		if (!model_flags) {
			return;
		}
		opts.push_back(app->add_option("--epochs", epochs, "Corrector training epochs")->capture_default_str());
		opts.push_back(app->add_option("--optimizer", optimizer, "Corrector optimizer: gd or adam")
		                   ->capture_default_str());
		opts.push_back(app->add_option("--learning-rate", learning_rate, "Corrector learning rate")
		                   ->capture_default_str());
		opts.push_back(app->add_option("--lags", lags, "Ensemble lags fed to the corrector, hours")
		                   ->capture_default_str()
		                   ->delimiter(','));
		opts.push_back(app->add_flag("--no-correction", no_correction, "Run TAQR directly on the raw members"));
		opts.push_back(app->add_option("--horizon", horizon, "TAQR horizon: day-ahead or rolling")->capture_default_str());
		opts.push_back(app->add_option("--issue-lag", issue_lag, "Hours between issue and the first day-ahead hour")
		                   ->capture_default_str());
		opts.push_back(app->add_option("--n-init", n_init, "TAQR initial fitting window, hours")->capture_default_str());
		opts.push_back(app->add_option("--n-full", n_full, "TAQR full sliding window, hours")->capture_default_str());
		opts.push_back(app->add_flag("--intercept", intercept, "Add an intercept column to the TAQR design"));
		opts.push_back(app->add_option("--levels", levels, "Published quantile levels (13 by default)")
		                   ->capture_default_str()
		                   ->delimiter(','));
		opts.push_back(app->add_flag("--no-baselines", no_baselines, "Skip TAQR-on-raw, QRF and QGB"));
	}

	bool given(const std::string &name) const {
		for (const auto *o : opts) {
			if (o->get_name() == name) {
				return o->count() > 0;
			}
		}
		return false;
	}

	PipelineConfig resolve() const {
		PipelineConfig c = file.empty() ? PipelineConfig{} : PipelineConfig::load(file);
		if (given("--seed")) c.seed = seed;
		if (given("--countertrade-high")) c.countertrade.high = ct_high;
		if (given("--countertrade-low")) c.countertrade.low = ct_low;
		if (given("--glitch-count")) c.glitch.count = glitch_count;
		if (no_filters) c.countertrade_filter = c.glitch_filter = false;
		if (given("--epochs")) c.train.epochs = epochs;
		if (given("--optimizer")) c.train.optimizer = parse_optimizer(optimizer);
		if (given("--learning-rate")) c.train.learning_rate = learning_rate;
		if (given("--lags")) c.lags.lags = lags;
		if (no_correction) c.correction = false;
		if (given("--horizon")) c.taqr.mode = parse_horizon_mode(horizon);
		if (given("--issue-lag")) c.taqr.issue_lag = issue_lag;
		if (given("--n-init")) c.taqr.n_init = n_init;
		if (given("--n-full")) c.taqr.n_full = n_full;
		if (intercept) c.taqr_intercept = true;
		if (given("--levels")) c.levels = QuantileLevels(levels);
		if (no_baselines) c.taqr_raw = c.qrf = c.qgb = false;
		c.check();
		return c;
	}
};

RawDataset load_clean(const fs::path &in, const PipelineConfig &cfg, CleanReport *report) {
	RawDataset d = load_csv(in);
	CleanReport r = clean(d, cfg);
	spdlog::info("{}: {} hours, {} removed by filters", in.string(), r.hours, r.removed_total);
	if (report) {
		*report = std::move(r);
	}
	return d;
}

json clean_json(const CleanReport &r, HourStamp start) {
	json j = r.to_json();
	json removed = json::array();
	for (std::size_t i = 0; i < r.keep.size(); ++i) {
		if (!r.keep[i]) {
			removed.push_back(format_timestamp(start + static_cast<HourStamp>(i)));
		}
	}
	j["removed_hours"] = std::move(removed);
	return j;
}

void print_report(const ReportBundle &b) {
	std::printf("%-8s %10s %10s %10s %8s %8s %8s\n", "method", "MAE", "CRPS", "QS", "RS_QS", "RS_CRPS", "max_rel");
	for (const auto &r : b.reports) {
		const auto rel = b.relative(r.method);
		std::printf("%-8s %10.3f %10.3f %10.3f %8.3f %8.3f %8.3f\n", r.method.c_str(), r.mae, r.crps, r.qs_mean,
		            rel.at("qs_mean"), rel.at("crps"), r.max_reliability_deviation());
	}
}

void write_report(const ReportBundle &b, const fs::path &prefix, Manifest &m) {
	const fs::path j = sibling(prefix, ".json"), c = sibling(prefix, ".csv");
	write_json(j, b.to_json());
	{
		auto out = open_out(c);
		b.write_csv(out);
	}
	m.output(j);
	m.output(c);
}

} // namespace

int main(int argc, char **argv) {
	CLI::App app{"Ensemble correction and time-adaptive quantile regression for wind power forecasts"};
	app.require_subcommand(1);
	app.set_version_flag("--version", kVersion);
	std::string log_level = "info";
	app.add_option("--log-level", log_level, "trace, debug, info, warn, error or off")->capture_default_str();
	const std::vector<std::string> args(argv, argv + argc);

	// simulate
	auto *sim = app.add_subcommand("simulate", "Write a seeded synthetic dataset");
	SimulationConfig sc;
	std::string sim_out;
	sim->add_option("--seed", sc.seed, "Generator seed")->capture_default_str();
	sim->add_option("--hours", sc.hours, "Series length")->capture_default_str();
	sim->add_option("--capacity", sc.capacity, "Installed capacity, MW")->capture_default_str();
	sim->add_option("--members", sc.members, "Ensemble members")->capture_default_str();
	sim->add_option("--underdispersion", sc.underdispersion, "Member spread relative to the true uncertainty")
	    ->capture_default_str();
	sim->add_option("--bias", sc.bias, "Multiplicative member bias")->capture_default_str();
	sim->add_option("--out", sim_out, "Dataset CSV")->required();

	// clean
	auto *cln = app.add_subcommand("clean", "Apply the cleaning filters and write the filtered dataset");
	ConfigFlags cln_cfg;
	std::string cln_in, cln_out, cln_report;
	cln->add_option("--in", cln_in, "Dataset CSV")->required();
	cln->add_option("--out", cln_out, "Filtered dataset CSV")->required();
	cln->add_option("--report", cln_report, "Mask report JSON (default: <out>.mask.json)");
	cln_cfg.add(cln, false);

	// train
	auto *trn = app.add_subcommand("train", "Train the ensemble corrector");
	ConfigFlags trn_cfg;
	std::string trn_in, trn_ckpt;
	trn->add_option("--in", trn_in, "Dataset CSV")->required();
	trn->add_option("--checkpoint", trn_ckpt, "Corrector checkpoint to write")->required();
	trn_cfg.add(trn, true);

	// run
	auto *run = app.add_subcommand("run", "Full pipeline: forecasts, scores, backtest and online state");
	ConfigFlags run_cfg;
	std::string run_in, run_out, run_ckpt;
	run->add_option("--in", run_in, "Dataset CSV")->required();
	run->add_option("--outdir", run_out, "Output directory")->required();
	run->add_option("--checkpoint", run_ckpt, "Reuse this corrector instead of training");
	run_cfg.add(run, true);

	// score
	auto *scr = app.add_subcommand("score", "Score a forecast CSV against observations");
	std::string scr_fc, scr_act, scr_out;
	std::vector<double> scr_levels;
	scr->add_option("--forecast", scr_fc, "Forecast CSV (timestamp,level,value,issue_time)")
	    ->required()
	    ;
	scr->add_option("--actuals", scr_act, "CSV with timestamp and actual columns")->required();
	scr->add_option("--levels", scr_levels, "Score only these levels (default: all)")->delimiter(',');
	scr->add_option("--out", scr_out, "Report prefix; writes <prefix>.json and <prefix>.csv");

	// backtest
	auto *bt = app.add_subcommand("backtest", "Spot versus imbalance trading backtest");
	std::string bt_fc, bt_raw, bt_prices, bt_offset_fc, bt_out, bt_mode = "scalar";
	BacktestConfig btc;
	double bt_offset = 0.0;
	bt->add_option("--forecast", bt_fc, "Corrected forecast CSV with a 0.5 level")->required();
	bt->add_option("--raw", bt_raw, "Dataset CSV with the raw ensembles")->required();
	bt->add_option("--prices", bt_prices, "CSV with timestamp, spot and imbalance (default: --raw)")
	    ;
	bt->add_option("--size", btc.size, "Trade size, MWh")->capture_default_str();
	bt->add_option("--dead-band", btc.dead_band, "No trade when the offset-adjusted signal is below this, MW")
	    ->capture_default_str();
	bt->add_option("--offset-forecast", bt_offset_fc,
	               "Earlier forecast CSV whose median bias against the actuals of --raw sets the offset")
	    ;
	bt->add_option("--offset", bt_offset, "Fixed scalar offset, MW, when no --offset-forecast is given")
	    ->capture_default_str();
	bt->add_option("--offset-mode", bt_mode, "scalar or hour-of-day")->capture_default_str();
	bt->add_option("--out", bt_out, "Ledger CSV")->required();

	try {
		app.parse(argc, argv);
	} catch (const CLI::CallForHelp &e) {
		return app.exit(e);
	} catch (const CLI::CallForAllHelp &e) {
		return app.exit(e);
	} catch (const CLI::CallForVersion &e) {
		return app.exit(e);
	} catch (const CLI::ParseError &e) {
		std::cerr << json{{"error", "usage"}, {"message", e.what()}}.dump() << '\n';
		return 2;
	}
	spdlog::set_level(spdlog::level::from_str(log_level));
	spdlog::set_default_logger(spdlog::default_logger()->clone("nabqr"));

	const std::string command = app.get_subcommands().front()->get_name();
	try {
		Manifest m(command, args);
		if (*sim) {
			save_csv(simulate(sc), sim_out);
			m.j["seeds"] = {{"simulate", sc.seed}};
			m.j["simulation"] = {{"hours", sc.hours},
			                     {"capacity", sc.capacity},
			                     {"members", sc.members},
			                     {"underdispersion", sc.underdispersion},
			                     {"bias", sc.bias},
			                     {"start", format_timestamp(sc.start)}};
			m.output(sim_out);
			m.write(sibling(sim_out, ".manifest.json"));
		} else if (*cln) {
			const PipelineConfig cfg = cln_cfg.resolve();
			CleanReport r;
			const RawDataset d = load_clean(cln_in, cfg, &r);
			save_csv(d, cln_out);
			const fs::path report = cln_report.empty() ? sibling(cln_out, ".mask.json") : fs::path(cln_report);
			write_json(report, clean_json(r, d.start()));
			m.j["config"] = cfg.to_json();
			m.input(cln_in);
			m.output(cln_out);
			m.output(report);
			m.write(sibling(cln_out, ".manifest.json"));
		} else if (*trn) {
			const PipelineConfig cfg = trn_cfg.resolve();
			const RawDataset d = load_clean(trn_in, cfg, nullptr);
			const SplitSpec s = cfg.resolve_split(d.size());
			const TrainedCorrector t = train_corrector(d, cfg, s);
			if (fs::path(trn_ckpt).has_parent_path()) {
				fs::create_directories(fs::path(trn_ckpt).parent_path());
			}
			t.corrector.checkpoint().save(trn_ckpt);
			m.j["config"] = cfg.to_json();
			m.j["seeds"] = {{"pipeline", cfg.seed}};
			m.j["history"] = {{"initial_train_loss", t.history.initial_train_loss},
			                  {"train_loss", t.history.train_loss},
			                  {"validation_loss", t.history.validation_loss},
			                  {"selected_epoch", t.history.selected_epoch}};
			m.input(trn_in);
			m.output(trn_ckpt);
			m.write(sibling(trn_ckpt, ".manifest.json"));
		} else if (*run) {
			const PipelineConfig cfg = run_cfg.resolve();
			const fs::path out = run_out;
			fs::create_directories(out / "forecasts");
			CleanReport cr;
			const RawDataset d = load_clean(run_in, cfg, &cr);
			m.input(run_in);
			RunOptions ro;
			if (!run_ckpt.empty()) {
				ro.pretrained = Corrector::from_checkpoint(Checkpoint::load(run_ckpt));
				m.input(run_ckpt);
			} else {
				ro.artifact_dir = out;
			}
			const NabqrResult r = run_nabqr(d, cfg, ro);

			cfg.save(out / "config.json");
			m.output(out / "config.json");
			write_json(out / "clean.json", clean_json(cr, d.start()));
			m.output(out / "clean.json");
			if (ro.pretrained == std::nullopt && r.corrector) {
				m.output(out / "corrector.ckpt");
			}
			auto put_forecast = [&](const std::string &name, const QuantileForecast &f) {
				const fs::path p = out / "forecasts" / (name + ".csv");
				auto o = open_out(p);
				write_forecast_csv(f, o);
				o.close();
				m.output(p);
			};
			put_forecast("nabqr", r.forecast);
			put_forecast("nabqr_fill", r.fill_forecast);
			for (const auto &[name, f] : r.forecasts) {
				put_forecast(name, f);
			}
			write_report(r.report, out / "report", m);
			r.final_state.save(out / "state");
			for (const auto &e : fs::directory_iterator(out / "state")) {
				m.output(e.path());
			}

			json summary = {{"split",
			                 {{"nn_train", r.split.nn_train.length},
			                  {"taqr_init", r.split.taqr_init_params.length},
			                  {"window_fill", r.split.taqr_init_window.length},
			                  {"test", r.split.test.length},
			                  {"test_start", format_timestamp(d.start() + static_cast<HourStamp>(r.split.test.begin))}}},
			                {"crossing_rate_before_repair", r.crossing_rate},
			                {"train_loss", r.history.train_loss},
			                {"validation_loss", r.history.validation_loss},
			                {"selected_epoch", r.history.selected_epoch}};
			if (d.spot && d.imbalance) {
				const std::size_t n = r.forecast.rows();
				BacktestInput bi;
				bi.start = r.forecast.start;
				bi.pred_median = median_column(r.forecast, "nabqr");
				bi.raw_median = raw_medians(d, bi.start, n);
				const auto from = static_cast<std::size_t>(r.split.test.begin);
				bi.spot.assign(d.spot->begin() + static_cast<long>(from), d.spot->begin() + static_cast<long>(from + n));
				bi.imbalance.assign(d.imbalance->begin() + static_cast<long>(from),
				                    d.imbalance->begin() + static_cast<long>(from + n));
				const std::vector<double> fill_med = median_column(r.fill_forecast, "nabqr_fill");
				std::vector<double> aligned(d.size(), std::nan(""));
				const auto fill_from = static_cast<std::size_t>(r.split.taqr_init_window.begin);
				std::copy(fill_med.begin(), fill_med.end(), aligned.begin() + static_cast<long>(fill_from));
				const Offset o =
				    compute_offset(aligned, d.observations, fill_from, fill_from + fill_med.size(), cfg.offset_mode);
				const TradeLedger ledger = backtest(bi, o, cfg.trading);
				auto lo = open_out(out / "ledger.csv");
				ledger.write_csv(lo);
				lo.close();
				m.output(out / "ledger.csv");
				summary["backtest"] = {{"offset", o.scalar},
				                       {"offset_mode", offset_mode_name(o.mode)},
				                       {"total_pnl", ledger.total},
				                       {"traded", ledger.rows.size()},
				                       {"skipped", ledger.skipped.size()}};
			}
			write_json(out / "summary.json", summary);
			m.output(out / "summary.json");
			m.j["config"] = cfg.to_json();
			m.j["seeds"] = {{"pipeline", cfg.seed}};
			m.j["stage_seconds"] = r.seconds;
			m.write(out / "manifest.json");
			print_report(r.report);
		} else if (*scr) {
			QuantileForecast f = load_forecast(scr_fc);
			if (!scr_levels.empty()) {
				const QuantileLevels keep(scr_levels);
				QuantileForecast g = f;
				g.levels = keep;
				g.values.resize(f.values.rows(), static_cast<Eigen::Index>(keep.size()));
				for (std::size_t q = 0; q < keep.size(); ++q) {
					g.values.col(static_cast<Eigen::Index>(q)) = f.column(keep[q]);
				}
				f = std::move(g);
			}
			const Columns a = read_columns(scr_act, {"actual"});
			const ObservationSeries y = observations_over(a, f.start, f.rows(), scr_act);
			ReportBundle b;
			b.baseline = fs::path(scr_fc).stem().string();
			b.reports.push_back(score_quantiles(b.baseline, y, f));
			m.input(scr_fc);
			m.input(scr_act);
			if (scr_out.empty()) {
				std::cout << b.to_json().dump(2) << '\n';
			} else {
				write_report(b, scr_out, m);
				m.write(sibling(scr_out, ".manifest.json"));
			}
		} else if (*bt) {
			const QuantileForecast f = load_forecast(bt_fc);
			const RawDataset raw = load_csv(bt_raw);
			const fs::path prices = bt_prices.empty() ? fs::path(bt_raw) : fs::path(bt_prices);
			const Columns p = read_columns(prices, {"spot", "imbalance"});
			BacktestInput bi;
			bi.start = f.start;
			bi.pred_median = median_column(f, bt_fc);
			bi.raw_median = raw_medians(raw, f.start, f.rows());
			bi.spot = align(p, p.at("spot", prices.string()), f.start, f.rows());
			bi.imbalance = align(p, p.at("imbalance", prices.string()), f.start, f.rows());
			Offset o;
			o.mode = parse_offset_mode(bt_mode);
			o.scalar = bt_offset;
			o.per_hour.fill(bt_offset);
			if (!bt_offset_fc.empty()) {
				const QuantileForecast g = load_forecast(bt_offset_fc);
				const Columns a = read_columns(bt_raw, {"actual"});
				const ObservationSeries y = observations_over(a, g.start, g.rows(), bt_raw);
				o = compute_offset(median_column(g, bt_offset_fc), y, 0, g.rows(), o.mode);
				m.input(bt_offset_fc);
			}
			const TradeLedger ledger = backtest(bi, o, btc);
			auto out = open_out(bt_out);
			ledger.write_csv(out);
			out.close();
			m.input(bt_fc);
			m.input(bt_raw);
			m.output(bt_out);
			m.j["backtest"] = {{"size", btc.size},
			                   {"dead_band", btc.dead_band},
			                   {"offset", o.scalar},
			                   {"offset_mode", offset_mode_name(o.mode)},
			                   {"total_pnl", ledger.total},
			                   {"traded", ledger.rows.size()},
			                   {"skipped", ledger.skipped.size()}};
			m.write(sibling(bt_out, ".manifest.json"));
			std::printf("total pnl %.6f over %zu traded hours (%zu skipped)\n", ledger.total, ledger.rows.size(),
			            ledger.skipped.size());
		}
	} catch (const Error &e) {
		std::cerr << json{{"error", error_kind_name(e.kind())}, {"message", e.what()}, {"command", command}}.dump()
		          << '\n';
		return exit_code(e.kind());
	} catch (const json::exception &e) {
		std::cerr << json{{"error", "validation"}, {"message", e.what()}, {"command", command}}.dump() << '\n';
		return exit_code(ErrorKind::Validation);
	} catch (const fs::filesystem_error &e) {
		std::cerr << json{{"error", "io"}, {"message", e.what()}, {"command", command}}.dump() << '\n';
		return exit_code(ErrorKind::Io);
	} catch (const std::exception &e) {
		std::cerr << json{{"error", "internal"}, {"message", e.what()}, {"command", command}}.dump() << '\n';
		return 1;
	}
	return 0;
}
