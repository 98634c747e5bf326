#include <doctest.h>

#include <atomic>
#include <cstdlib>
#include <stdexcept>
#include <vector>

#include "headlamp/parallel.hpp"

using namespace headlamp;

TEST_CASE("parallel_for visits every index once") {
  for (const char* threads : {"1", "4"}) {
    ::setenv("HEADLAMP_THREADS", threads, 1);
    std::vector<std::atomic<int>> seen(1000);
    parallel_for(seen.size(), [&](std::size_t i) { ++seen[i]; });
    for (const auto& s : seen) CHECK(s == 1);
    parallel_for(0, [](std::size_t) { FAIL("no work expected"); });
  }
  ::unsetenv("HEADLAMP_THREADS");
}

TEST_CASE("parallel_for rethrows a task exception") {
  ::setenv("HEADLAMP_THREADS", "3", 1);
  CHECK_THROWS_AS(parallel_for(50,
                               [](std::size_t i) {
                                 if (i == 17) throw std::domain_error("task 17");
                               }),
                  std::domain_error);
  ::unsetenv("HEADLAMP_THREADS");
}

TEST_CASE("thread count honours the environment") {
  ::setenv("HEADLAMP_THREADS", "5", 1);
  CHECK(thread_count() == 5);
  ::setenv("HEADLAMP_THREADS", "0", 1);
  CHECK(thread_count() >= 1);
  ::setenv("HEADLAMP_THREADS", "lots", 1);
  CHECK(thread_count() >= 1);
  ::unsetenv("HEADLAMP_THREADS");
}
