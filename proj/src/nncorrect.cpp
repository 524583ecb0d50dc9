#include "nabqr/nncorrect.hpp"

#include <spdlog/spdlog.h>

#include <algorithm>
#include <cmath>
#include <numeric>

#include "nabqr/random.hpp"

namespace nabqr {

namespace {

void fill_uniform(Eigen::Ref<Eigen::MatrixXd> m, double bound, Rng &rng) {
	for (Eigen::Index j = 0; j < m.cols(); ++j) {
		for (Eigen::Index i = 0; i < m.rows(); ++i) {
			m(i, j) = rng.uniform(-bound, bound);
		}
	}
}

double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

template <typename Derived> auto sigmoid_of(const Eigen::MatrixBase<Derived> &m) {
	return m.unaryExpr([](double v) { return sigmoid(v); });
}

template <typename Derived> auto tanh_of(const Eigen::MatrixBase<Derived> &m) {
	return m.unaryExpr([](double v) { return std::tanh(v); });
}

Eigen::Map<Eigen::VectorXd> flat(Eigen::MatrixXd &m) { return {m.data(), m.size()}; }
Eigen::Map<Eigen::VectorXd> flat(Eigen::VectorXd &v) { return {v.data(), v.size()}; }
Eigen::Map<const Eigen::VectorXd> flat(const Eigen::MatrixXd &m) { return {m.data(), m.size()}; }
Eigen::Map<const Eigen::VectorXd> flat(const Eigen::VectorXd &v) { return {v.data(), v.size()}; }

void require_shape(const Eigen::MatrixXd &m, std::size_t rows, std::size_t cols, const char *name) {
	if (static_cast<std::size_t>(m.rows()) != rows || static_cast<std::size_t>(m.cols()) != cols) {
		throw ValidationError(std::string("parameter ") + name + " has shape " + std::to_string(m.rows()) + "x" +
		                      std::to_string(m.cols()) + ", expected " + std::to_string(rows) + "x" +
		                      std::to_string(cols));
	}
}

void require_size(const Eigen::VectorXd &v, std::size_t n, const char *name) {
	if (static_cast<std::size_t>(v.size()) != n) {
		throw ValidationError(std::string("parameter ") + name + " has length " + std::to_string(v.size()) +
		                      ", expected " + std::to_string(n));
	}
}

} // namespace

std::size_t LagSpec::depth() const {
	check();
	return static_cast<std::size_t>(*std::max_element(lags.begin(), lags.end()));
}

std::vector<int> LagSpec::oldest_first() const {
	std::vector<int> v = lags;
	std::sort(v.begin(), v.end(), std::greater<>());
	return v;
}

void LagSpec::check() const {
	if (lags.empty()) {
		throw ValidationError("lag list is empty");
	}
	std::vector<int> v = lags;
	std::sort(v.begin(), v.end());
	if (v.front() < 0 || std::adjacent_find(v.begin(), v.end()) != v.end()) {
		throw ValidationError("lags must be distinct nonnegative hour offsets");
	}
}

std::size_t parameter_count(const NetShape &s) noexcept {
	const std::size_t u = s.units;
	return 4 * u * (s.features + u + 1) + s.hidden * (u + 1) + s.outputs * (s.hidden + 1);
}

LstmParams LstmParams::zeros(const NetShape &shape) {
	const auto f = static_cast<Eigen::Index>(shape.features);
	const auto u = static_cast<Eigen::Index>(shape.units);
	const auto d = static_cast<Eigen::Index>(shape.hidden);
	const auto o = static_cast<Eigen::Index>(shape.outputs);
	LstmParams p;
	p.shape = shape;
	p.wx = Eigen::MatrixXd::Zero(4 * u, f);
	p.wh = Eigen::MatrixXd::Zero(4 * u, u);
	p.b = Eigen::VectorXd::Zero(4 * u);
	p.w1 = Eigen::MatrixXd::Zero(d, u);
	p.b1 = Eigen::VectorXd::Zero(d);
	p.w2 = Eigen::MatrixXd::Zero(o, d);
	p.b2 = Eigen::VectorXd::Zero(o);
	p.in_mean = Eigen::VectorXd::Zero(f);
	p.in_scale = Eigen::VectorXd::Ones(f);
	return p;
}

LstmParams LstmParams::initialize(const NetShape &shape, std::uint64_t seed) {
	LstmParams p = zeros(shape);
	Rng rng(seed);
	const double f = static_cast<double>(shape.features);
	const double u = static_cast<double>(shape.units);
	const auto U = static_cast<Eigen::Index>(shape.units);
	// Glorot bounds per gate block.
	for (Eigen::Index g = 0; g < 4; ++g) {
		fill_uniform(p.wx.middleRows(g * U, U), std::sqrt(6.0 / (f + u)), rng);
	}
	for (Eigen::Index g = 0; g < 4; ++g) {
		fill_uniform(p.wh.middleRows(g * U, U), std::sqrt(6.0 / (u + u)), rng);
	}
	p.b.segment(U, U).setOnes();
	fill_uniform(p.w1, std::sqrt(6.0 / (u + static_cast<double>(shape.hidden))), rng);
	fill_uniform(p.w2, std::sqrt(6.0 / static_cast<double>(shape.hidden + shape.outputs)), rng);
	// A small positive output bias keeps the rectifier active at the start of training.
	p.b2.setConstant(0.5);
	return p;
}

std::size_t LstmParams::parameter_count() const noexcept { return nabqr::parameter_count(shape); }

bool LstmParams::all_finite() const {
	return wx.allFinite() && wh.allFinite() && b.allFinite() && w1.allFinite() && b1.allFinite() && w2.allFinite() &&
	       b2.allFinite() && in_mean.allFinite() && in_scale.allFinite() && std::isfinite(output_scale);
}

void LstmParams::check() const {
	const std::size_t u = shape.units;
	require_shape(wx, 4 * u, shape.features, "wx");
	require_shape(wh, 4 * u, u, "wh");
	require_size(b, 4 * u, "b");
	require_shape(w1, shape.hidden, u, "w1");
	require_size(b1, shape.hidden, "b1");
	require_shape(w2, shape.outputs, shape.hidden, "w2");
	require_size(b2, shape.outputs, "b2");
	require_size(in_mean, shape.features, "in_mean");
	require_size(in_scale, shape.features, "in_scale");
}

std::vector<std::pair<std::string, Eigen::Map<Eigen::VectorXd>>> LstmParams::tensors() {
	return {{"wx", flat(wx)}, {"wh", flat(wh)}, {"b", flat(b)},  {"w1", flat(w1)},
	        {"b1", flat(b1)}, {"w2", flat(w2)}, {"b2", flat(b2)}};
}

std::vector<std::pair<std::string, Eigen::Map<const Eigen::VectorXd>>> LstmParams::tensors() const {
	return {{"wx", flat(wx)}, {"wh", flat(wh)}, {"b", flat(b)},  {"w1", flat(w1)},
	        {"b1", flat(b1)}, {"w2", flat(w2)}, {"b2", flat(b2)}};
}

void LstmParams::save(Checkpoint &ck) const {
	ck.meta()["shape"] = {{"features", shape.features},
	                      {"units", shape.units},
	                      {"hidden", shape.hidden},
	                      {"outputs", shape.outputs}};
	ck.put("wx", wx);
	ck.put("wh", wh);
	ck.put("b", b);
	ck.put("w1", w1);
	ck.put("b1", b1);
	ck.put("w2", w2);
	ck.put("b2", b2);
	ck.put("in_mean", in_mean);
	ck.put("in_scale", in_scale);
	ck.put("output_scale", std::vector<double>{output_scale});
}

LstmParams LstmParams::load(const Checkpoint &ck) {
	LstmParams p;
	const auto &s = ck.meta().at("shape");
	p.shape = {s.at("features").get<std::size_t>(), s.at("units").get<std::size_t>(),
	           s.at("hidden").get<std::size_t>(), s.at("outputs").get<std::size_t>()};
	p.wx = ck.matrix("wx");
	p.wh = ck.matrix("wh");
	p.b = ck.vector("b");
	p.w1 = ck.matrix("w1");
	p.b1 = ck.vector("b1");
	p.w2 = ck.matrix("w2");
	p.b2 = ck.vector("b2");
	p.in_mean = ck.vector("in_mean");
	p.in_scale = ck.vector("in_scale");
	p.output_scale = ck.values("output_scale").at(0);
	p.check();
	return p;
}

std::pair<Eigen::VectorXd, Eigen::VectorXd> lstm_cell(const LstmParams &p, const Eigen::VectorXd &x,
                                                       const Eigen::VectorXd &h_prev, const Eigen::VectorXd &c_prev) {
	const auto U = static_cast<Eigen::Index>(p.shape.units);
	if (x.size() != p.wx.cols() || h_prev.size() != U || c_prev.size() != U) {
		throw ValidationError("lstm_cell input sizes do not match the parameters");
	}
	Eigen::VectorXd g = p.b;
	g.noalias() += p.wx * x;
	g.noalias() += p.wh * h_prev;
	const Eigen::VectorXd in = sigmoid_of(g.segment(0, U));
	const Eigen::VectorXd forget = sigmoid_of(g.segment(U, U));
	const Eigen::VectorXd cand = tanh_of(g.segment(2 * U, U));
	const Eigen::VectorXd out = sigmoid_of(g.segment(3 * U, U));
	Eigen::VectorXd c = forget.cwiseProduct(c_prev) + in.cwiseProduct(cand);
	Eigen::VectorXd h = out.cwiseProduct(tanh_of(c));
	return {std::move(h), std::move(c)};
}

Eigen::VectorXd model_forward(const LstmParams &p, const RowMatrix &window, bool strict) {
	if (static_cast<std::size_t>(window.cols()) != p.shape.features) {
		throw ValidationError("lag window has " + std::to_string(window.cols()) + " columns, network expects " +
		                      std::to_string(p.shape.features));
	}
	if (strict && !rows_nondecreasing(window)) {
		throw ValidationError("lag window rows must be sorted");
	}
	const auto U = static_cast<Eigen::Index>(p.shape.units);
	Eigen::VectorXd h = Eigen::VectorXd::Zero(U);
	Eigen::VectorXd c = Eigen::VectorXd::Zero(U);
	for (Eigen::Index s = 0; s < window.rows(); ++s) {
		const Eigen::VectorXd x =
		    (window.row(s).transpose() - p.in_mean).cwiseQuotient(p.in_scale);
		auto [hn, cn] = lstm_cell(p, x, h, c);
		h = std::move(hn);
		c = std::move(cn);
	}
	Eigen::VectorXd a1 = p.b1;
	a1.noalias() += p.w1 * h;
	const Eigen::VectorXd d1 = sigmoid_of(a1);
	Eigen::VectorXd a2 = p.b2;
	a2.noalias() += p.w2 * d1;
	return a2.cwiseMax(0.0) * p.output_scale;
}

double quantile_loss(std::span<const double> target, std::span<const double> prediction, const QuantileLevels &levels) {
	if (target.size() != levels.size() || prediction.size() != levels.size()) {
		throw ValidationError("quantile_loss: target, prediction and levels differ in length");
	}
	double s = 0.0;
	for (std::size_t i = 0; i < levels.size(); ++i) {
		s += check_loss(target[i] - prediction[i], levels[i]);
	}
	return s / static_cast<double>(levels.size());
}

TargetMode parse_target_mode(const std::string &name) {
	if (name == "observation") {
		return TargetMode::Observation;
	}
	if (name == "augmented-quantile") {
		return TargetMode::AugmentedQuantile;
	}
	throw ValidationError("unknown target mode '" + name + "'");
}

std::string target_mode_name(TargetMode mode) {
	return mode == TargetMode::Observation ? "observation" : "augmented-quantile";
}

Optimizer parse_optimizer(const std::string &name) {
	if (name == "gd" || name == "sgd") {
		return Optimizer::GradientDescent;
	}
	if (name == "adam") {
		return Optimizer::Adam;
	}
	throw ValidationError("unknown optimizer '" + name + "'");
}

std::string optimizer_name(Optimizer opt) { return opt == Optimizer::Adam ? "adam" : "gd"; }

void TrainConfig::check() const {
	if (levels.size() != shape.outputs) {
		throw ValidationError("training levels (" + std::to_string(levels.size()) + ") must match the output width (" +
		                      std::to_string(shape.outputs) + ")");
	}
	if (batch_size == 0 || shape.units == 0 || shape.hidden == 0 || shape.features == 0) {
		throw ValidationError("batch size and layer widths must be positive");
	}
	if (!(learning_rate > 0.0) || !(clip_norm > 0.0)) {
		throw ValidationError("learning rate and clip norm must be positive");
	}
	if (!(validation_fraction >= 0.0 && validation_fraction < 1.0)) {
		throw ValidationError("validation fraction must lie in [0,1)");
	}
}

RowMatrix lag_window(const RowMatrix &raw_sorted, std::size_t t, const LagSpec &lags) {
	const std::vector<int> order = lags.oldest_first();
	if (t < static_cast<std::size_t>(order.front()) || t >= static_cast<std::size_t>(raw_sorted.rows())) {
		throw DomainError("hour " + std::to_string(t) + " lacks lag history");
	}
	RowMatrix w(static_cast<Eigen::Index>(order.size()), raw_sorted.cols());
	for (std::size_t s = 0; s < order.size(); ++s) {
		w.row(static_cast<Eigen::Index>(s)) = raw_sorted.row(static_cast<Eigen::Index>(t - static_cast<std::size_t>(order[s])));
	}
	return w;
}

RowMatrix TrainingSet::window(std::size_t s) const { return lag_window(inputs, times.at(s), lags); }

TrainingSet make_training_set(const EnsembleMatrix &ensembles, const ObservationSeries &y, std::size_t begin,
                              std::size_t end, const LagSpec &lags, const QuantileLevels &levels, TargetMode mode) {
	if (ensembles.rows() != y.size() || ensembles.start != y.start) {
		throw ValidationError("ensembles and observations are not on the same grid");
	}
	if (end > y.size() || begin > end) {
		throw ValidationError("training range out of bounds");
	}
	TrainingSet set;
	set.lags = lags;
	set.inputs = ensembles.sorted ? ensembles.members : sort_rows(ensembles).members;
	const std::size_t depth = lags.depth();
	for (std::size_t t = std::max(begin, depth); t < end; ++t) {
		if (y.valid[t]) {
			set.times.push_back(t);
		}
	}
	const auto q = static_cast<Eigen::Index>(levels.size());
	set.targets.resize(static_cast<Eigen::Index>(set.times.size()), q);
	std::vector<double> augmented(static_cast<std::size_t>(set.inputs.cols()) + 1);
	for (std::size_t s = 0; s < set.times.size(); ++s) {
		const std::size_t t = set.times[s];
		auto row = set.targets.row(static_cast<Eigen::Index>(s));
		if (mode == TargetMode::Observation) {
			row.setConstant(y.values[t]);
			continue;
		}
		const auto src = set.inputs.row(static_cast<Eigen::Index>(t));
		std::copy(src.begin(), src.end(), augmented.begin());
		augmented.back() = y.values[t];
		std::sort(augmented.begin(), augmented.end());
		for (Eigen::Index j = 0; j < q; ++j) {
			row[j] = empirical_quantile_sorted(augmented, levels[static_cast<std::size_t>(j)]);
		}
	}
	return set;
}

double loss_and_gradient(const LstmParams &p, const TrainingSet &data, std::span<const std::size_t> samples,
                         const QuantileLevels &levels, LstmParams *grad) {
	const auto U = static_cast<Eigen::Index>(p.shape.units);
	const auto F = static_cast<Eigen::Index>(p.shape.features);
	const auto B = static_cast<Eigen::Index>(samples.size());
	const auto Q = static_cast<Eigen::Index>(levels.size());
	if (B == 0) {
		throw DomainError("loss over an empty batch");
	}
	if (Q != static_cast<Eigen::Index>(p.shape.outputs) || data.targets.cols() != Q) {
		throw ValidationError("levels do not match the network output width");
	}
	const std::vector<int> order = data.lags.oldest_first();
	const auto S = order.size();

	// Forward pass, caching per-step activations. Columns are samples.
	std::vector<Eigen::MatrixXd> z(S), gi(S), gf(S), gc(S), go(S), tc(S), cs(S + 1), hs(S + 1);
	hs[0] = Eigen::MatrixXd::Zero(U, B);
	cs[0] = Eigen::MatrixXd::Zero(U, B);
	for (std::size_t s = 0; s < S; ++s) {
		z[s].resize(F, B);
		for (Eigen::Index b = 0; b < B; ++b) {
			const std::size_t t = data.times[samples[static_cast<std::size_t>(b)]] - static_cast<std::size_t>(order[s]);
			z[s].col(b) = (data.inputs.row(static_cast<Eigen::Index>(t)).transpose() - p.in_mean).cwiseQuotient(p.in_scale);
		}
		Eigen::MatrixXd g = p.b.replicate(1, B);
		g.noalias() += p.wx * z[s];
		g.noalias() += p.wh * hs[s];
		gi[s] = sigmoid_of(g.middleRows(0, U));
		gf[s] = sigmoid_of(g.middleRows(U, U));
		gc[s] = tanh_of(g.middleRows(2 * U, U));
		go[s] = sigmoid_of(g.middleRows(3 * U, U));
		cs[s + 1] = gf[s].cwiseProduct(cs[s]) + gi[s].cwiseProduct(gc[s]);
		tc[s] = tanh_of(cs[s + 1]);
		hs[s + 1] = go[s].cwiseProduct(tc[s]);
	}
	Eigen::MatrixXd a1 = p.b1.replicate(1, B);
	a1.noalias() += p.w1 * hs[S];
	const Eigen::MatrixXd d1 = sigmoid_of(a1);
	Eigen::MatrixXd a2 = p.b2.replicate(1, B);
	a2.noalias() += p.w2 * d1;

	double loss = 0.0;
	Eigen::MatrixXd da2(Q, B);
	const double norm = 1.0 / static_cast<double>(B * Q);
	for (Eigen::Index b = 0; b < B; ++b) {
		const auto trow = data.targets.row(static_cast<Eigen::Index>(samples[static_cast<std::size_t>(b)]));
		for (Eigen::Index j = 0; j < Q; ++j) {
			const double tau = levels[static_cast<std::size_t>(j)];
			const double out = std::max(a2(j, b), 0.0) * p.output_scale;
			const double d = trow[j] - out;
			loss += d < 0.0 ? d * (tau - 1.0) : d * tau;
			const double dout = (d < 0.0 ? 1.0 - tau : -tau) * norm;
			da2(j, b) = a2(j, b) > 0.0 ? dout * p.output_scale : 0.0;
		}
	}
	loss *= norm;
	if (grad == nullptr) {
		return loss;
	}

	// Backward pass.
	LstmParams &g = *grad;
	g = LstmParams::zeros(p.shape);
	g.in_mean = p.in_mean;
	g.in_scale = p.in_scale;
	g.output_scale = p.output_scale;
	g.w2.noalias() = da2 * d1.transpose();
	g.b2 = da2.rowwise().sum();
	const Eigen::MatrixXd da1 = (p.w2.transpose() * da2).cwiseProduct(d1.cwiseProduct((1.0 - d1.array()).matrix()));
	g.w1.noalias() = da1 * hs[S].transpose();
	g.b1 = da1.rowwise().sum();
	Eigen::MatrixXd dh = p.w1.transpose() * da1;
	Eigen::MatrixXd dc = Eigen::MatrixXd::Zero(U, B);
	Eigen::MatrixXd dg(4 * U, B);
	for (std::size_t s = S; s-- > 0;) {
		const auto I = gi[s].array();
		const auto Fg = gf[s].array();
		const auto C = gc[s].array();
		const auto O = go[s].array();
		const auto T = tc[s].array();
		dc.array() += dh.array() * O * (1.0 - T.square());
		dg.middleRows(0, U).array() = dc.array() * C * I * (1.0 - I);
		dg.middleRows(U, U).array() = dc.array() * cs[s].array() * Fg * (1.0 - Fg);
		dg.middleRows(2 * U, U).array() = dc.array() * I * (1.0 - C.square());
		dg.middleRows(3 * U, U).array() = dh.array() * T * O * (1.0 - O);
		g.wx.noalias() += dg * z[s].transpose();
		g.wh.noalias() += dg * hs[s].transpose();
		g.b += dg.rowwise().sum();
		dh.noalias() = p.wh.transpose() * dg;
		dc.array() *= Fg;
	}
	return loss;
}

namespace {

double mean_loss(const LstmParams &p, const TrainingSet &data, const std::vector<std::size_t> &idx,
                 const QuantileLevels &levels) {
	constexpr std::size_t chunk = 256;
	double total = 0.0;
	for (std::size_t i = 0; i < idx.size(); i += chunk) {
		const std::size_t n = std::min(chunk, idx.size() - i);
		total += loss_and_gradient(p, data, std::span(idx).subspan(i, n), levels, nullptr) * static_cast<double>(n);
	}
	return total / static_cast<double>(idx.size());
}

struct AdamState {
	std::vector<Eigen::VectorXd> m, v;
	std::int64_t t = 0;
};

} // namespace

TrainResult train(const TrainingSet &data, const TrainConfig &config) {
	config.check();
	data.lags.check();
	const std::size_t n = data.size();
	if (n < 2) {
		throw DomainError("training needs at least 2 samples, got " + std::to_string(n));
	}
	if (static_cast<std::size_t>(data.inputs.cols()) != config.shape.features) {
		throw ValidationError("input width " + std::to_string(data.inputs.cols()) + " differs from network features " +
		                      std::to_string(config.shape.features));
	}

	LstmParams p = LstmParams::initialize(config.shape, config.seed);

	// Standardize on the rows the training windows can reach.
	const std::size_t lo = data.times.front() - data.lags.depth();
	const std::size_t hi = data.times.back();
	const auto rows = data.inputs.middleRows(static_cast<Eigen::Index>(lo), static_cast<Eigen::Index>(hi - lo + 1));
	p.in_mean = rows.colwise().mean().transpose();
	for (Eigen::Index j = 0; j < rows.cols(); ++j) {
		const double sd = std::sqrt((rows.col(j).array() - p.in_mean[j]).square().mean());
		p.in_scale[j] = sd > 1e-9 ? sd : 1.0;
	}
	const double max_target = data.targets.cwiseAbs().maxCoeff();
	p.output_scale = max_target > 0.0 ? max_target : 1.0;

	const auto n_val = static_cast<std::size_t>(std::floor(config.validation_fraction * static_cast<double>(n)));
	const std::size_t n_train = n - n_val;
	std::vector<std::size_t> train_idx(n_train), val_idx(n_val);
	std::iota(train_idx.begin(), train_idx.end(), 0);
	std::iota(val_idx.begin(), val_idx.end(), n_train);

	TrainResult result;
	TrainHistory &hist = result.history;
	hist.initial_train_loss = mean_loss(p, data, train_idx, config.levels);
	double best = n_val > 0 ? mean_loss(p, data, val_idx, config.levels) : hist.initial_train_loss;
	result.params = p;

	Rng rng(config.seed ^ 0x9e3779b97f4a7c15ULL);
	AdamState adam;
	LstmParams grad;
	std::vector<std::size_t> order = train_idx;
	for (std::size_t epoch = 1; epoch <= config.epochs; ++epoch) {
		rng.shuffle(order.begin(), order.end());
		for (std::size_t start = 0; start < order.size(); start += config.batch_size) {
			const std::size_t len = std::min(config.batch_size, order.size() - start);
			const double loss = loss_and_gradient(p, data, std::span(order).subspan(start, len), config.levels, &grad);
			if (!std::isfinite(loss)) {
				throw NumericalError("training loss became non-finite in epoch " + std::to_string(epoch));
			}
			auto gt = grad.tensors();
			auto pt = p.tensors();
			// Learn in units of the output scale so the step size is data independent.
			double sq = 0.0;
			for (auto &[name, t] : gt) {
				t /= p.output_scale;
				sq += t.squaredNorm();
			}
			const double gnorm = std::sqrt(sq);
			const double clip = gnorm > config.clip_norm ? config.clip_norm / gnorm : 1.0;
			if (config.optimizer == Optimizer::GradientDescent) {
				for (std::size_t k = 0; k < pt.size(); ++k) {
					pt[k].second -= (config.learning_rate * clip) * gt[k].second;
				}
			} else {
				if (adam.m.empty()) {
					for (auto &[name, t] : pt) {
						adam.m.push_back(Eigen::VectorXd::Zero(t.size()));
						adam.v.push_back(Eigen::VectorXd::Zero(t.size()));
					}
				}
				constexpr double b1 = 0.9, b2 = 0.999, eps = 1e-8;
				++adam.t;
				const double c1 = 1.0 - std::pow(b1, static_cast<double>(adam.t));
				const double c2 = 1.0 - std::pow(b2, static_cast<double>(adam.t));
				for (std::size_t k = 0; k < pt.size(); ++k) {
					const Eigen::VectorXd gk = gt[k].second * clip;
					adam.m[k] = b1 * adam.m[k] + (1.0 - b1) * gk;
					adam.v[k] = b2 * adam.v[k] + (1.0 - b2) * gk.cwiseProduct(gk);
					pt[k].second.array() -=
					    config.learning_rate * (adam.m[k].array() / c1) / ((adam.v[k].array() / c2).sqrt() + eps);
				}
			}
		}
		if (!p.all_finite()) {
			throw NumericalError("parameters became non-finite in epoch " + std::to_string(epoch));
		}
		const double tl = mean_loss(p, data, train_idx, config.levels);
		hist.train_loss.push_back(tl);
		double score = tl;
		if (n_val > 0) {
			score = mean_loss(p, data, val_idx, config.levels);
			hist.validation_loss.push_back(score);
		}
		spdlog::debug("epoch {}: train {:.6g} validation {:.6g}", epoch, tl, score);
		if (score < best) {
			best = score;
			result.params = p;
			hist.selected_epoch = epoch;
		}
	}
	return result;
}

Eigen::VectorXd correct_row(const LstmParams &params, const RowMatrix &raw_sorted, std::size_t t, const LagSpec &lags,
                            bool *crossed) {
	Eigen::VectorXd out = model_forward(params, lag_window(raw_sorted, t, lags));
	const bool monotone = std::is_sorted(out.begin(), out.end());
	if (!monotone) {
		std::sort(out.begin(), out.end());
	}
	if (crossed != nullptr) {
		*crossed = !monotone;
	}
	return out;
}

CorrectedEnsembles correct_ensembles(const LstmParams &params, const EnsembleMatrix &raw, const LagSpec &lags) {
	const EnsembleMatrix sorted = raw.sorted ? raw : sort_rows(raw);
	const std::size_t depth = lags.depth();
	if (raw.rows() <= depth) {
		throw DomainError("need more than " + std::to_string(depth) + " rows of ensemble history, got " +
		                  std::to_string(raw.rows()));
	}
	CorrectedEnsembles out;
	out.first = depth;
	out.values.start = raw.start + static_cast<HourStamp>(depth);
	out.values.sorted = true;
	const std::size_t rows = raw.rows() - depth;
	out.values.members.resize(static_cast<Eigen::Index>(rows), static_cast<Eigen::Index>(params.shape.outputs));
	std::size_t crossed_rows = 0;
	for (std::size_t r = 0; r < rows; ++r) {
		bool crossed = false;
		out.values.members.row(static_cast<Eigen::Index>(r)) =
		    correct_row(params, sorted.members, r + depth, lags, &crossed).transpose();
		crossed_rows += crossed ? 1 : 0;
	}
	out.crossing_rate = static_cast<double>(crossed_rows) / static_cast<double>(rows);
	for (Eigen::Index j = 0; j < out.values.members.cols(); ++j) {
		if ((out.values.members.col(j).array() == 0.0).all()) {
			out.zero_columns.push_back(static_cast<std::size_t>(j));
		}
	}
	if (!out.zero_columns.empty()) {
		spdlog::warn("{} corrected ensemble column(s) are identically zero", out.zero_columns.size());
	}
	return out;
}

Checkpoint Corrector::checkpoint() const {
	Checkpoint ck("nabqr-corrector");
	params.save(ck);
	ck.meta()["lags"] = lags.lags;
	ck.meta()["levels"] = levels.values();
	ck.meta()["target_mode"] = target_mode_name(target_mode);
	ck.meta()["seed"] = seed;
	return ck;
}

Corrector Corrector::from_checkpoint(const Checkpoint &ck) {
	ck.expect_kind("nabqr-corrector");
	Corrector c;
	c.params = LstmParams::load(ck);
	c.lags.lags = ck.meta().at("lags").get<std::vector<int>>();
	c.lags.check();
	c.levels = QuantileLevels(ck.meta().at("levels").get<std::vector<double>>());
	c.target_mode = parse_target_mode(ck.meta().at("target_mode").get<std::string>());
	c.seed = ck.meta().at("seed").get<std::uint64_t>();
	return c;
}

} // namespace nabqr
