#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <string_view>

namespace tgraph {

// Class indices follow the reporting order used throughout: N, C, U.
enum class TrafficState : std::uint8_t { neutral = 0, clumping = 1, unclumping = 2 };

inline constexpr int kNumStates = 3;

inline int index_of(TrafficState s) { return static_cast<int>(s); }

TrafficState state_from_index(int i);

// Accepts full names and the single-letter codes c/n/u.
TrafficState parse_state(std::string_view text);

std::string_view state_name(TrafficState s);
char state_code(TrafficState s);

// Malformed or inconsistent input data.
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Non-finite values encountered during numerical work (e.g. a NaN loss).
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Derives an independent sub-seed from a root seed and a stream tag
// (splitmix64 finalizer over the mixed pair).
std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream);
std::uint64_t derive_seed(std::uint64_t root, std::string_view stream);

}  // namespace tgraph
