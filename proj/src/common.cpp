#include "tgraph/common.hpp"

#include <algorithm>
#include <cctype>

namespace tgraph {

TrafficState state_from_index(int i) {
  if (i < 0 || i >= kNumStates) {
    throw DataError("traffic state index out of range: " + std::to_string(i));
  }
  return static_cast<TrafficState>(i);
}

TrafficState parse_state(std::string_view text) {
  std::string s(text);
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  if (s == "neutral" || s == "n") return TrafficState::neutral;
  if (s == "clumping" || s == "c") return TrafficState::clumping;
  if (s == "unclumping" || s == "u") return TrafficState::unclumping;
  throw DataError("unknown traffic state '" + std::string(text) + "'");
}

std::string_view state_name(TrafficState s) {
  switch (s) {
    case TrafficState::neutral: return "neutral";
    case TrafficState::clumping: return "clumping";
    case TrafficState::unclumping: return "unclumping";
  }
  return "?";
}

char state_code(TrafficState s) {
  switch (s) {
    case TrafficState::neutral: return 'n';
    case TrafficState::clumping: return 'c';
    case TrafficState::unclumping: return 'u';
  }
  return '?';
}

namespace {
std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}
}  // namespace

std::uint64_t derive_seed(std::uint64_t root, std::uint64_t stream) {
  return splitmix64(splitmix64(root) ^ (stream * 0xd6e8feb86659fd93ULL));
}

std::uint64_t derive_seed(std::uint64_t root, std::string_view stream) {
  // FNV-1a over the tag keeps named streams stable across builds.
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : stream) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return derive_seed(root, h);
}

}  // namespace tgraph
