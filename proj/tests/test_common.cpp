#include <doctest.h>

#include <set>

#include "tgraph/common.hpp"

using namespace tgraph;

TEST_CASE("state names and codes round-trip") {
  for (int i = 0; i < kNumStates; ++i) {
    const auto s = state_from_index(i);
    CHECK(index_of(s) == i);
    CHECK(parse_state(state_name(s)) == s);
    CHECK(parse_state(std::string(1, state_code(s))) == s);
  }
  CHECK(parse_state("c") == TrafficState::clumping);
  CHECK(parse_state("n") == TrafficState::neutral);
  CHECK(parse_state("u") == TrafficState::unclumping);
  CHECK_THROWS_AS(parse_state("jam"), DataError);
  CHECK_THROWS(state_from_index(3));
}

TEST_CASE("derived seeds are stable and separate streams") {
  CHECK(derive_seed(1, "split") == derive_seed(1, "split"));
  std::set<std::uint64_t> seen;
  for (std::uint64_t root : {0ull, 1ull, 2ull}) {
    for (const char* tag : {"split", "init", "shuffle", "dropout"}) seen.insert(derive_seed(root, tag));
    for (std::uint64_t k = 0; k < 4; ++k) seen.insert(derive_seed(root, k));
  }
  CHECK(seen.size() == 24);
}
