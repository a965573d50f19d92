#ifndef IMA_CORE_HPP
#define IMA_CORE_HPP

#include <Eigen/Dense>

#include <charconv>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <string_view>
#include <system_error>

namespace ima {

using Vec = Eigen::VectorXd;
// One sample per column.
using Mat = Eigen::MatrixXd;

// ---------------------------------------------------------------------------
// Errors. Each kind carries the process exit code the CLI reports for it.

class Error : public std::runtime_error {
public:
  using std::runtime_error::runtime_error;
  [[nodiscard]] virtual int exit_code() const noexcept { return 1; }
};

class ConfigError : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

class UsageError : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 2; }
};

class DataError : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 3; }
};

class ShapeError : public DataError {
public:
  using DataError::DataError;
};

class LabelError : public DataError {
public:
  using DataError::DataError;
};

// Malformed file content; `line` is 1-based, 0 when unknown.
class ParseError : public DataError {
public:
  ParseError(const std::string& what, std::size_t line)
      : DataError(line ? what + " (line " + std::to_string(line) + ")" : what), message_(what), line_(line) {}
  [[nodiscard]] std::size_t line() const noexcept { return line_; }
  [[nodiscard]] const std::string& message() const noexcept { return message_; }

private:
  std::string message_;
  std::size_t line_;
};

class NumericError : public Error {
public:
  using Error::Error;
  [[nodiscard]] int exit_code() const noexcept override { return 4; }
};

// ---------------------------------------------------------------------------
// Random streams. Every stochastic consumer derives its own stream from the
// run seed plus a tuple of tags, so consumers never share RNG state.

using Rng = std::mt19937_64;

constexpr std::uint64_t splitmix64(std::uint64_t z) noexcept {
  z += 0x9e3779b97f4a7c15ULL;
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t seed) noexcept { return splitmix64(seed); }

template <class... Tags>
constexpr std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag, Tags... rest) noexcept {
  return derive_seed(splitmix64(seed ^ splitmix64(tag + 0x632be59bd9b4e019ULL)),
                     static_cast<std::uint64_t>(rest)...);
}

// Stream tags.
enum class Stream : std::uint64_t {
  init = 1,
  shuffle,
  bpgd_train,
  bpgd_margin,
  adv_train,
  eval_pgd,
  eval_noise,
  spsa,
  data,
};

template <class... Tags>
Rng make_rng(std::uint64_t seed, Stream stream, Tags... tags) {
  return Rng(derive_seed(seed, static_cast<std::uint64_t>(stream), static_cast<std::uint64_t>(tags)...));
}

inline double uniform01(Rng& rng) { return std::uniform_real_distribution<double>(0.0, 1.0)(rng); }

// ---------------------------------------------------------------------------
// Decimal formatting with round-trip precision.

inline std::string format_double(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v, std::chars_format::general, 17);
  if (ec != std::errc{}) throw NumericError("cannot format value");
  return {buf, end};
}

// Shortest representation that parses back to the same value.
inline std::string format_short(double v) {
  char buf[64];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  if (ec != std::errc{}) throw NumericError("cannot format value");
  return {buf, end};
}

inline bool parse_double(std::string_view s, double& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  if (s.front() == '+') s.remove_prefix(1);
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

template <class Int>
bool parse_int(std::string_view s, Int& out) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
  if (s.empty()) return false;
  auto [ptr, ec] = std::from_chars(s.data(), s.data() + s.size(), out);
  return ec == std::errc{} && ptr == s.data() + s.size();
}

}  // namespace ima

#endif  // IMA_CORE_HPP
