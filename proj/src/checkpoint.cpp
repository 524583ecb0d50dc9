#include "nabqr/checkpoint.hpp"

#include <bit>
#include <cstring>
#include <fstream>
#include <sstream>

namespace nabqr {

namespace {

constexpr char kMagic[8] = {'N', 'A', 'B', 'Q', 'R', 'C', 'K', 'P'};

template <typename T> void append_le(std::string &out, T value) {
	static_assert(std::is_trivially_copyable_v<T>);
	static_assert(std::endian::native == std::endian::little, "big-endian hosts are not supported");
	char buf[sizeof(T)];
	std::memcpy(buf, &value, sizeof(T));
	out.append(buf, sizeof(T));
}

template <typename T> T read_le(const std::string &in, std::size_t &pos) {
	if (pos + sizeof(T) > in.size()) {
		throw ValidationError("checkpoint truncated");
	}
	T value;
	std::memcpy(&value, in.data() + pos, sizeof(T));
	pos += sizeof(T);
	return value;
}

std::int64_t element_count(const std::vector<std::int64_t> &shape) {
	std::int64_t n = 1;
	for (auto d : shape) {
		n *= d;
	}
	return n;
}

} // namespace

void Checkpoint::put(const std::string &name, std::vector<double> values, std::vector<std::int64_t> shape) {
	if (shape.empty()) {
		shape = {static_cast<std::int64_t>(values.size())};
	}
	if (element_count(shape) != static_cast<std::int64_t>(values.size())) {
		throw ValidationError("tensor '" + name + "' shape does not match its size");
	}
	Tensor t;
	t.shape = std::move(shape);
	t.f64 = std::move(values);
	tensors_[name] = std::move(t);
}

void Checkpoint::put(const std::string &name, const Eigen::MatrixXd &m) {
	RowMatrix rm = m;
	put(name, rm);
}

void Checkpoint::put(const std::string &name, const RowMatrix &m) {
	std::vector<double> v(m.data(), m.data() + m.size());
	put(name, std::move(v), {static_cast<std::int64_t>(m.rows()), static_cast<std::int64_t>(m.cols())});
}

void Checkpoint::put(const std::string &name, const Eigen::VectorXd &v) {
	put(name, std::vector<double>(v.data(), v.data() + v.size()));
}

void Checkpoint::put_ints(const std::string &name, std::vector<std::int64_t> values) {
	Tensor t;
	t.shape = {static_cast<std::int64_t>(values.size())};
	t.i64 = std::move(values);
	t.is_int = true;
	tensors_[name] = std::move(t);
}

bool Checkpoint::has(const std::string &name) const { return tensors_.count(name) != 0; }

const Checkpoint::Tensor &Checkpoint::tensor(const std::string &name) const {
	auto it = tensors_.find(name);
	if (it == tensors_.end()) {
		throw ValidationError("checkpoint '" + kind_ + "' has no tensor '" + name + "'");
	}
	return it->second;
}

const std::vector<double> &Checkpoint::values(const std::string &name) const {
	const Tensor &t = tensor(name);
	if (t.is_int) {
		throw ValidationError("tensor '" + name + "' is integral");
	}
	return t.f64;
}

const std::vector<std::int64_t> &Checkpoint::ints(const std::string &name) const {
	const Tensor &t = tensor(name);
	if (!t.is_int) {
		throw ValidationError("tensor '" + name + "' is not integral");
	}
	return t.i64;
}

std::vector<std::int64_t> Checkpoint::shape(const std::string &name) const { return tensor(name).shape; }

RowMatrix Checkpoint::row_matrix(const std::string &name) const {
	const Tensor &t = tensor(name);
	if (t.is_int || t.shape.size() != 2) {
		throw ValidationError("tensor '" + name + "' is not a matrix");
	}
	RowMatrix m(t.shape[0], t.shape[1]);
	std::copy(t.f64.begin(), t.f64.end(), m.data());
	return m;
}

Eigen::MatrixXd Checkpoint::matrix(const std::string &name) const { return row_matrix(name); }

Eigen::VectorXd Checkpoint::vector(const std::string &name) const {
	const auto &v = values(name);
	return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

void Checkpoint::expect_kind(const std::string &expected) const {
	if (kind_ != expected) {
		throw ValidationError("expected a '" + expected + "' checkpoint, found '" + kind_ + "'");
	}
}

std::string Checkpoint::to_bytes() const {
	nlohmann::json header;
	header["kind"] = kind_;
	header["meta"] = meta_;
	nlohmann::json dir = nlohmann::json::array();
	std::string payload;
	for (const auto &[name, t] : tensors_) {
		nlohmann::json e;
		e["name"] = name;
		e["dtype"] = t.is_int ? "i64" : "f64";
		e["shape"] = t.shape;
		e["offset"] = payload.size();
		if (t.is_int) {
			for (auto v : t.i64) {
				append_le(payload, v);
			}
		} else {
			for (auto v : t.f64) {
				append_le(payload, std::bit_cast<std::uint64_t>(v));
			}
		}
		dir.push_back(std::move(e));
	}
	header["tensors"] = std::move(dir);
	const std::string head = header.dump();

	std::string out(kMagic, sizeof kMagic);
	append_le(out, kFormatVersion);
	append_le(out, static_cast<std::uint64_t>(head.size()));
	out += head;
	out += payload;
	return out;
}

Checkpoint Checkpoint::from_bytes(const std::string &bytes) {
	if (bytes.size() < sizeof kMagic || std::memcmp(bytes.data(), kMagic, sizeof kMagic) != 0) {
		throw ValidationError("not a checkpoint file (bad magic)");
	}
	std::size_t pos = sizeof kMagic;
	const auto version = read_le<std::uint32_t>(bytes, pos);
	if (version != kFormatVersion) {
		throw ValidationError("unsupported checkpoint version " + std::to_string(version));
	}
	const auto head_len = read_le<std::uint64_t>(bytes, pos);
	if (pos + head_len > bytes.size()) {
		throw ValidationError("checkpoint truncated");
	}
	const nlohmann::json header = nlohmann::json::parse(bytes.substr(pos, head_len));
	pos += head_len;
	const std::size_t base = pos;

	Checkpoint ck(header.at("kind").get<std::string>());
	ck.meta_ = header.at("meta");
	for (const auto &e : header.at("tensors")) {
		Tensor t;
		t.shape = e.at("shape").get<std::vector<std::int64_t>>();
		t.is_int = e.at("dtype").get<std::string>() == "i64";
		std::size_t p = base + e.at("offset").get<std::size_t>();
		const std::int64_t n = element_count(t.shape);
		if (t.is_int) {
			t.i64.resize(static_cast<std::size_t>(n));
			for (auto &v : t.i64) {
				v = read_le<std::int64_t>(bytes, p);
			}
		} else {
			t.f64.resize(static_cast<std::size_t>(n));
			for (auto &v : t.f64) {
				v = std::bit_cast<double>(read_le<std::uint64_t>(bytes, p));
			}
		}
		ck.tensors_[e.at("name").get<std::string>()] = std::move(t);
	}
	return ck;
}

void Checkpoint::save(const std::filesystem::path &path) const {
	std::ofstream out(path, std::ios::binary | std::ios::trunc);
	if (!out) {
		throw IoError("cannot write checkpoint " + path.string());
	}
	const std::string bytes = to_bytes();
	out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
	if (!out) {
		throw IoError("short write to " + path.string());
	}
}

Checkpoint Checkpoint::load(const std::filesystem::path &path) {
	std::ifstream in(path, std::ios::binary);
	if (!in) {
		throw IoError("cannot open checkpoint " + path.string());
	}
	std::ostringstream ss;
	ss << in.rdbuf();
	return from_bytes(ss.str());
}

} // namespace nabqr
