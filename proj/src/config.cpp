#include "nabqr/config.hpp"

#include <cmath>
#include <fstream>
#include <set>

namespace nabqr {

std::string horizon_mode_name(HorizonMode mode) { return mode == HorizonMode::DayAhead ? "day-ahead" : "rolling"; }

HorizonMode parse_horizon_mode(std::string_view name) {
	if (name == "day-ahead") {
		return HorizonMode::DayAhead;
	}
	if (name == "rolling") {
		return HorizonMode::Rolling;
	}
	throw ValidationError("unknown horizon mode '" + std::string(name) + "' (day-ahead, rolling)");
}

namespace {

using nlohmann::json;

// Reads keys from one JSON object, remembering which were consumed so leftovers can be reported.
class Section {
public:
	Section(const json &j, std::string path) : j_(j), path_(std::move(path)) {
		if (!j_.is_object()) {
			throw ValidationError("config: '" + path_ + "' must be an object");
		}
	}

	bool has(const char *key) const { return j_.contains(key); }

	template <typename T> void get(const char *key, T &out) {
		if (!j_.contains(key)) {
			return;
		}
		seen_.insert(key);
		try {
			out = j_.at(key).get<T>();
		} catch (const json::exception &) {
			throw ValidationError("config: '" + where(key) + "' has the wrong type");
		}
	}

	void count(const char *key, std::size_t &out) {
		std::int64_t v = static_cast<std::int64_t>(out);
		get(key, v);
		if (v < 0) {
			throw ValidationError("config: '" + where(key) + "' must be nonnegative");
		}
		out = static_cast<std::size_t>(v);
	}

	const json *child(const char *key) {
		if (!j_.contains(key) || j_.at(key).is_null()) {
			if (j_.contains(key)) {
				seen_.insert(key);
			}
			return nullptr;
		}
		seen_.insert(key);
		return &j_.at(key);
	}

	std::string where(const char *key) const { return path_.empty() ? key : path_ + "." + key; }

	void finish() const {
		for (const auto &[k, v] : j_.items()) {
			if (!seen_.count(k)) {
				throw ValidationError("config: unknown key '" + (path_.empty() ? k : path_ + "." + k) + "'");
			}
		}
	}

private:
	const json &j_;
	std::string path_;
	std::set<std::string> seen_;
};

json optional_time(const std::optional<HourStamp> &t) { return t ? json(format_timestamp(*t)) : json(nullptr); }

} // namespace

void PipelineConfig::check() const {
	lags.check();
	if (train.shape.outputs < 2 || train.shape.units == 0 || train.shape.hidden == 0 || train.epochs == 0) {
		throw ValidationError("config: corrector needs at least 2 outputs and positive widths and epochs");
	}
	TrainConfig probe = train;
	probe.levels = QuantileLevels::equidistant(train.shape.outputs);
	probe.check();
	if (taqr.n_init == 0 || taqr.n_init > taqr.n_full) {
		throw ValidationError("config: need 0 < taqr.n_init <= taqr.n_full");
	}
	if (taqr.issue_lag < 0 || taqr.issue_lag > 24 * 7) {
		throw ValidationError("config: taqr.issue_lag must lie in [0, 168] hours");
	}
	if (levels.empty()) {
		throw ValidationError("config: no evaluation levels");
	}
	if (split && (split->nn_train == 0 || split->taqr_init_window == 0 || split->test == 0)) {
		throw ValidationError("config: split lengths must be positive");
	}
	if (split && split->nn_train <= lags.depth()) {
		throw ValidationError("config: the corrector-training slice must exceed the lag depth");
	}
	if (!(countertrade.high > countertrade.low) || countertrade.pad < 0 || countertrade.flank_hours < 1) {
		throw ValidationError("config: countertrade filter needs high > low, pad >= 0, flank_hours >= 1");
	}
	if (!(glitch.high > glitch.low) || glitch.pad < 0) {
		throw ValidationError("config: glitch filter needs high > low and pad >= 0");
	}
	if (forest.trees == 0 || forest.max_depth == 0 || forest.max_bins < 2 || !(forest.min_leaf > 0.0)) {
		throw ValidationError("config: invalid forest settings");
	}
	if (boost.stages == 0 || boost.max_depth == 0 || boost.max_bins < 2 || !(boost.learning_rate > 0.0) ||
	    !(boost.rho_max > 0.0) || !(boost.min_leaf > 0.0)) {
		throw ValidationError("config: invalid boosting settings");
	}
	if (!(trading.size >= 0.0) || !(trading.dead_band >= 0.0)) {
		throw ValidationError("config: trading size and dead band must be nonnegative");
	}
}

SplitSpec PipelineConfig::resolve_split(std::size_t hours) const {
	if (split) {
		return nabqr::split(hours,
		                    SplitSpec::from_lengths(split->nn_train, taqr.n_init, split->taqr_init_window, split->test));
	}
	if (hours <= taqr.n_init) {
		throw DomainError("need more than " + std::to_string(taqr.n_init) + " hours to split, got " +
		                  std::to_string(hours));
	}
	const double f = static_cast<double>(hours - taqr.n_init) / static_cast<double>(14040 + 4944 + 5112);
	auto scale = [f](std::size_t n) { return static_cast<std::size_t>(std::floor(static_cast<double>(n) * f)); };
	return nabqr::split(hours, SplitSpec::from_lengths(scale(14040), taqr.n_init, scale(4944), scale(5112)));
}

TrainConfig PipelineConfig::train_config(std::size_t members) const {
	TrainConfig t = train;
	t.seed = seed;
	t.shape.features = members;
	t.levels = QuantileLevels::equidistant(t.shape.outputs);
	t.check();
	return t;
}

nlohmann::json PipelineConfig::to_json() const {
	json j;
	j["schema_version"] = kSchemaVersion;
	j["seed"] = seed;
	j["lags"] = lags.lags;
	j["corrector"] = {{"enabled", correction},
	                  {"outputs", train.shape.outputs},
	                  {"units", train.shape.units},
	                  {"hidden", train.shape.hidden},
	                  {"epochs", train.epochs},
	                  {"batch_size", train.batch_size},
	                  {"learning_rate", train.learning_rate},
	                  {"clip_norm", train.clip_norm},
	                  {"optimizer", optimizer_name(train.optimizer)},
	                  {"validation_fraction", train.validation_fraction},
	                  {"target_mode", target_mode_name(train.target_mode)}};
	j["taqr"] = {{"n_init", taqr.n_init},
	             {"n_full", taqr.n_full},
	             {"horizon", horizon_mode_name(taqr.mode)},
	             {"issue_lag", taqr.issue_lag},
	             {"intercept", taqr_intercept}};
	j["levels"] = levels.values();
	j["repair_crossings"] = repair_crossings;
	if (split) {
		j["split"] = {{"nn_train", split->nn_train}, {"taqr_init_window", split->taqr_init_window}, {"test", split->test}};
	} else {
		j["split"] = nullptr;
	}
	j["filters"]["countertrade"] = {{"enabled", countertrade_filter},
	                                {"high", countertrade.high},
	                                {"low", countertrade.low},
	                                {"pad", countertrade.pad},
	                                {"flank_hours", countertrade.flank_hours},
	                                {"negative_spot", countertrade.negative_spot},
	                                {"spot_from", optional_time(countertrade.spot_from)},
	                                {"spot_to", optional_time(countertrade.spot_to)}};
	j["filters"]["glitch"] = {{"enabled", glitch_filter},
	                          {"low", glitch.low},
	                          {"high", glitch.high},
	                          {"count", glitch.count},
	                          {"pad", glitch.pad}};
	j["baselines"]["taqr"] = {{"enabled", taqr_raw}};
	j["baselines"]["qrf"] = {{"enabled", qrf},
	                         {"trees", forest.trees},
	                         {"max_depth", forest.max_depth},
	                         {"min_leaf", forest.min_leaf},
	                         {"features_per_split", forest.features_per_split},
	                         {"max_bins", forest.max_bins},
	                         {"bootstrap", forest.bootstrap}};
	j["baselines"]["qgb"] = {{"enabled", qgb},
	                         {"stages", boost.stages},
	                         {"learning_rate", boost.learning_rate},
	                         {"max_depth", boost.max_depth},
	                         {"min_leaf", boost.min_leaf},
	                         {"max_bins", boost.max_bins},
	                         {"rho_max", boost.rho_max},
	                         {"step", boost.step_mode == BoostStepMode::LeafQuantile ? "leaf-quantile" : "line-search"}};
	j["trading"] = {{"offset", offset_mode_name(offset_mode)}, {"size", trading.size}, {"dead_band", trading.dead_band}};
	return j;
}

PipelineConfig PipelineConfig::from_json(const nlohmann::json &j) {
	PipelineConfig c;
	Section root(j, "");
	int version = kSchemaVersion;
	root.get("schema_version", version);
	if (version != kSchemaVersion) {
		throw ValidationError("config: schema_version " + std::to_string(version) + " is not supported (expected " +
		                      std::to_string(kSchemaVersion) + ")");
	}
	root.get("seed", c.seed);
	root.get("lags", c.lags.lags);
	if (const json *s = root.child("corrector")) {
		Section n(*s, "corrector");
		n.get("enabled", c.correction);
		n.count("outputs", c.train.shape.outputs);
		n.count("units", c.train.shape.units);
		n.count("hidden", c.train.shape.hidden);
		n.count("epochs", c.train.epochs);
		n.count("batch_size", c.train.batch_size);
		n.get("learning_rate", c.train.learning_rate);
		n.get("clip_norm", c.train.clip_norm);
		std::string opt = optimizer_name(c.train.optimizer), target = target_mode_name(c.train.target_mode);
		n.get("optimizer", opt);
		n.get("target_mode", target);
		c.train.optimizer = parse_optimizer(opt);
		c.train.target_mode = parse_target_mode(target);
		n.get("validation_fraction", c.train.validation_fraction);
		n.finish();
	}
	c.train.levels = QuantileLevels::equidistant(std::max<std::size_t>(2, c.train.shape.outputs));
	if (const json *s = root.child("taqr")) {
		Section n(*s, "taqr");
		n.count("n_init", c.taqr.n_init);
		n.count("n_full", c.taqr.n_full);
		std::string mode = horizon_mode_name(c.taqr.mode);
		n.get("horizon", mode);
		c.taqr.mode = parse_horizon_mode(mode);
		n.get("issue_lag", c.taqr.issue_lag);
		n.get("intercept", c.taqr_intercept);
		n.finish();
	}
	if (root.has("levels")) {
		std::vector<double> lv;
		root.get("levels", lv);
		c.levels = QuantileLevels(lv);
	}
	root.get("repair_crossings", c.repair_crossings);
	if (const json *s = root.child("split")) {
		Section n(*s, "split");
		SplitLengths l;
		n.count("nn_train", l.nn_train);
		n.count("taqr_init_window", l.taqr_init_window);
		n.count("test", l.test);
		n.finish();
		c.split = l;
	}
	if (const json *s = root.child("filters")) {
		Section f(*s, "filters");
		if (const json *ct = f.child("countertrade")) {
			Section n(*ct, "filters.countertrade");
			n.get("enabled", c.countertrade_filter);
			n.get("high", c.countertrade.high);
			n.get("low", c.countertrade.low);
			n.get("pad", c.countertrade.pad);
			n.get("flank_hours", c.countertrade.flank_hours);
			n.get("negative_spot", c.countertrade.negative_spot);
			for (const char *key : {"spot_from", "spot_to"}) {
				auto &slot = std::string(key) == "spot_from" ? c.countertrade.spot_from : c.countertrade.spot_to;
				if (const json *t = n.child(key)) {
					if (!t->is_string()) {
						throw ValidationError("config: '" + n.where(key) + "' must be a timestamp string or null");
					}
					slot = parse_timestamp(t->get<std::string>());
				}
			}
			n.finish();
		}
		if (const json *g = f.child("glitch")) {
			Section n(*g, "filters.glitch");
			n.get("enabled", c.glitch_filter);
			n.get("low", c.glitch.low);
			n.get("high", c.glitch.high);
			n.count("count", c.glitch.count);
			n.get("pad", c.glitch.pad);
			n.finish();
		}
		f.finish();
	}
	if (const json *s = root.child("baselines")) {
		Section b(*s, "baselines");
		if (const json *q = b.child("taqr")) {
			Section n(*q, "baselines.taqr");
			n.get("enabled", c.taqr_raw);
			n.finish();
		}
		if (const json *q = b.child("qrf")) {
			Section n(*q, "baselines.qrf");
			n.get("enabled", c.qrf);
			n.count("trees", c.forest.trees);
			n.count("max_depth", c.forest.max_depth);
			n.get("min_leaf", c.forest.min_leaf);
			n.count("features_per_split", c.forest.features_per_split);
			n.count("max_bins", c.forest.max_bins);
			n.get("bootstrap", c.forest.bootstrap);
			n.finish();
		}
		if (const json *q = b.child("qgb")) {
			Section n(*q, "baselines.qgb");
			n.get("enabled", c.qgb);
			n.count("stages", c.boost.stages);
			n.get("learning_rate", c.boost.learning_rate);
			n.count("max_depth", c.boost.max_depth);
			n.get("min_leaf", c.boost.min_leaf);
			n.count("max_bins", c.boost.max_bins);
			n.get("rho_max", c.boost.rho_max);
			std::string step = c.boost.step_mode == BoostStepMode::LeafQuantile ? "leaf-quantile" : "line-search";
			n.get("step", step);
			if (step == "leaf-quantile") {
				c.boost.step_mode = BoostStepMode::LeafQuantile;
			} else if (step == "line-search") {
				c.boost.step_mode = BoostStepMode::GlobalLineSearch;
			} else {
				throw ValidationError("config: unknown baselines.qgb.step '" + step + "'");
			}
			n.finish();
		}
		b.finish();
	}
	if (const json *s = root.child("trading")) {
		Section n(*s, "trading");
		std::string mode = offset_mode_name(c.offset_mode);
		n.get("offset", mode);
		c.offset_mode = parse_offset_mode(mode);
		n.get("size", c.trading.size);
		n.get("dead_band", c.trading.dead_band);
		n.finish();
	}
	root.finish();
	c.check();
	return c;
}

PipelineConfig PipelineConfig::load(const std::filesystem::path &path) {
	std::ifstream in(path);
	if (!in) {
		throw IoError("cannot open config " + path.string());
	}
	json j;
	try {
		j = json::parse(in);
	} catch (const json::parse_error &e) {
		throw ValidationError("config " + path.string() + ": " + e.what());
	}
	return from_json(j);
}

void PipelineConfig::save(const std::filesystem::path &path) const {
	std::ofstream out(path, std::ios::trunc);
	if (!out) {
		throw IoError("cannot write config " + path.string());
	}
	out << to_json().dump(2) << '\n';
}

} // namespace nabqr
