#include "stformer/rng.hpp"

#include <cmath>
#include <numbers>

namespace stf {

std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

namespace {

std::uint64_t fnv1a(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

}  // namespace

RngStream::RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

RngStream RngStream::named(std::uint64_t seed, std::string_view name,
                           std::uint64_t index) {
  std::uint64_t mixed = splitmix64(seed);
  mixed = splitmix64(mixed ^ fnv1a(name));
  mixed = splitmix64(mixed ^ index);
  return RngStream(mixed);
}

std::uint64_t RngStream::next_u64() { return engine_(); }

double RngStream::uniform() {
  return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
}

double RngStream::uniform(double lo, double hi) {
  return lo + (hi - lo) * uniform();
}

double RngStream::normal() {
  if (spare_normal_) {
    double v = *spare_normal_;
    spare_normal_.reset();
    return v;
  }
  // Box-Muller; 1 - u keeps the log argument in (0, 1].
  double u1 = 1.0 - uniform();
  double u2 = uniform();
  double radius = std::sqrt(-2.0 * std::log(u1));
  double angle = 2.0 * std::numbers::pi * u2;
  spare_normal_ = radius * std::sin(angle);
  return radius * std::cos(angle);
}

double RngStream::normal(double mean, double stddev) {
  return mean + stddev * normal();
}

double RngStream::truncated_normal(double mean, double stddev, double bound) {
  for (;;) {
    double z = normal();
    if (std::abs(z) <= bound) return mean + stddev * z;
  }
}

std::size_t RngStream::uniform_index(std::size_t n) {
  if (n <= 1) return 0;
  // Rejection sampling removes modulo bias.
  const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
  std::uint64_t r;
  do {
    r = next_u64();
  } while (r >= limit);
  return static_cast<std::size_t>(r % n);
}

bool RngStream::bernoulli(double p) { return uniform() < p; }

}  // namespace stf
