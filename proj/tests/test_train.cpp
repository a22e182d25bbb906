#include <catch2/catch_amalgamated.hpp>
#include "mhn/mhn.hpp"
TEST_CASE("wip") { SUCCEED(); }
