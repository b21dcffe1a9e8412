#include <doctest.h>

#include <cmath>

#include "chanfuse/textconfig.hpp"

using namespace chanfuse;

TEST_SUITE_BEGIN("textconfig");

TEST_CASE("parses keys, comments and repeated entries") {
    TextConfig cfg = TextConfig::parse_string(
        "# header comment\n"
        "name = demo\n"
        "count = 42   # trailing comment\n"
        "point = 1.5 -2 3e4\n"
        "flag = true\n"
        "scatterer = 1 2 3\n"
        "scatterer = 4 5 6\n",
        "test.cfg");
    CHECK(cfg.get_str("name") == "demo");
    CHECK(cfg.get_int("count") == 42);
    Vec3 p = cfg.get_vec3("point");
    CHECK(p.x == doctest::Approx(1.5));
    CHECK(p.z == doctest::Approx(3e4));
    CHECK(cfg.get_bool("flag"));
    CHECK(cfg.find_all("scatterer").size() == 2);
    CHECK(cfg.get_int("missing", 7) == 7);
}

TEST_CASE("reports line numbers on malformed input") {
    CHECK_THROWS_AS(TextConfig::parse_string("a = 1\nnot a key value\n", "bad.cfg"), ParseError);
    try {
        TextConfig::parse_string("a = 1\nb 2\n", "bad.cfg");
        FAIL("expected ParseError");
    } catch (const ParseError& e) {
        CHECK(e.source_line == 2);
        CHECK(std::string(e.what()).find("bad.cfg:2") != std::string::npos);
    }
    TextConfig cfg = TextConfig::parse_string("x = notanumber\n", "bad.cfg");
    CHECK_THROWS_AS(cfg.get_double("x"), ParseError);
}

TEST_CASE("accepts inf for unbounded SNR fields") {
    TextConfig cfg = TextConfig::parse_string("snr = inf\n", "t.cfg");
    CHECK(std::isinf(cfg.get_double("snr")));
}

TEST_SUITE_END();
