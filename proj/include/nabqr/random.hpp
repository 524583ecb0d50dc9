#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace nabqr {

/// mt19937_64 with its own conversions to doubles, indices and normals, so a seed yields the same
/// stream whatever the standard library's distribution implementations do.
class Rng {
public:
	explicit Rng(std::uint64_t seed) : engine_(seed) {}

	std::uint64_t next() { return engine_(); }
	/// Uniform on [0, 1) with 53 random bits.
	double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }
	double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }
	/// Uniform on {0, ..., n-1}.
	std::size_t index(std::size_t n) {
		return static_cast<std::size_t>((static_cast<unsigned __int128>(engine_()) * n) >> 64);
	}
	/// Standard normal by Box-Muller (one draw per call, the partner value is discarded).
	double normal() {
		double u = uniform();
		while (u <= 0.0) {
			u = uniform();
		}
		return std::sqrt(-2.0 * std::log(u)) * std::cos(2.0 * 3.14159265358979323846 * uniform());
	}
	double normal(double mean, double sd) { return mean + sd * normal(); }

	template <typename It> void shuffle(It first, It last) {
		for (auto n = static_cast<std::size_t>(last - first); n > 1; --n) {
			std::swap(first[n - 1], first[index(n)]);
		}
	}

	std::mt19937_64 &engine() noexcept { return engine_; }

private:
	std::mt19937_64 engine_;
};

} // namespace nabqr
