#include <doctest.h>

#include <fstream>

#include "patchforge/config.hpp"
#include "test_util.hpp"

using namespace patchforge;

TEST_CASE("key-value parsing with comments and blanks") {
  auto cfg = KeyValueConfig::from_string("a = 1\n\n# comment\nb = two words  # trailing\n");
  CHECK(cfg.get_int("a") == 1);
  CHECK(cfg.get_string("b") == "two words");
}

TEST_CASE("malformed and duplicate lines are rejected") {
  CHECK_THROWS_WITH_AS((void)KeyValueConfig::from_string("novalue\n"), doctest::Contains("key = value"),
                       Error);
  CHECK_THROWS_WITH_AS((void)KeyValueConfig::from_string("a = 1\na = 2\n"), doctest::Contains("duplicate"),
                       Error);
}

TEST_CASE("typed getters validate") {
  auto cfg = KeyValueConfig::from_string("n = 12x\nf = 1.5\nflag = yes\nlist = 1, 2,3\n");
  CHECK_THROWS_WITH_AS((void)cfg.get_int("n"), doctest::Contains("not an integer"), Error);
  CHECK(cfg.get_double("f") == 1.5);
  CHECK(cfg.get_bool("flag"));
  const auto list = cfg.get_int_list("list", "");
  REQUIRE(list.size() == 3);
  CHECK(list[2] == 3);
  CHECK_THROWS_WITH_AS((void)cfg.get_string("missing"), doctest::Contains("missing required key"), Error);
}

TEST_CASE("unknown keys are reported") {
  auto cfg = KeyValueConfig::from_string("known = 1\nzzz = 2\n");
  (void)cfg.get_int("known");
  CHECK_THROWS_WITH_AS(cfg.require_all_read(), doctest::Contains("unknown key 'zzz'"), Error);
}

TEST_CASE("resolved config includes applied defaults") {
  testutil::TempDir tmp("config");
  auto cfg = KeyValueConfig::from_string("explicit = 4\n");
  CHECK(cfg.get_int("explicit") == 4);
  CHECK(cfg.get_int("fallback", 7) == 7);
  cfg.write_resolved(tmp / "resolved.txt");
  auto reread = KeyValueConfig::load(tmp / "resolved.txt");
  CHECK(reread.get_int("explicit") == 4);
  CHECK(reread.get_int("fallback") == 7);
}
