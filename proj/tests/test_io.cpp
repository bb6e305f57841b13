#include <catch_amalgamated.hpp>

#include <cmath>
#include <sstream>
#include <string>

#include "kpl/io.hpp"

using namespace kpl;

namespace {

template <class F>
std::size_t error_line(F&& f) {
    try {
        f();
    } catch (const ParseError& e) {
        return e.line();
    }
    return 0;
}

}  // namespace

TEST_CASE("measure files round trip") {
    const DiscreteMeasure nu({{-1.5, 0.125}, {0.1, 0.375}, {3, 0.5}});
    std::stringstream ss;
    write_measure(ss, nu);
    CHECK(read_measure(ss) == nu);
}

TEST_CASE("measure parsing tolerates comments and renormalizes") {
    std::istringstream in("\n## comment\n# discrete-measure v1\n -1, 0.5\n\n1,0.5000000001\n");
    const auto nu = read_measure(in);
    CHECK(nu.size() == 2);
    CHECK(nu.atoms()[0].weight + nu.atoms()[1].weight == Catch::Approx(1.0).epsilon(1e-15));
}

TEST_CASE("measure parsing errors name the line") {
    auto parse = [](const std::string& s) {
        return error_line([&] {
            std::istringstream in(s);
            read_measure(in, "m.txt");
        });
    };
    CHECK(parse("-1,0.5\n") == 1);
    CHECK(parse("# discrete-measure v1\n-1,0.5\n1;0.5\n") == 3);
    CHECK(parse("# discrete-measure v1\nx,0.5\n") == 2);
    CHECK(parse("# discrete-measure v1\n1,-0.5\n") == 2);
    CHECK(parse("# discrete-measure v1\n1,0.5\n2,0.4\n") == 3);
    CHECK(parse("") == 0);
    try {
        std::istringstream in("# discrete-measure v1\n1,abc\n");
        read_measure(in, "m.txt");
        FAIL("no exception");
    } catch (const ParseError& e) {
        CHECK(std::string(e.what()) == "m.txt:2: malformed weight");
    }
}

TEST_CASE("random measure files round trip") {
    const RandomMeasure mu({{0.25, DiscreteMeasure::rademacher()}, {0.75, DiscreteMeasure({{0, 0.5}, {2.5, 0.5}})}});
    std::stringstream ss;
    write_random_measure(ss, mu);
    const auto back = read_random_measure(ss);
    REQUIRE(back.size() == 2);
    CHECK(back.weight(0) == 0.25);
    CHECK(back.law(1) == mu.law(1));
}

TEST_CASE("random measure parsing errors") {
    auto parse = [](const std::string& s) {
        return error_line([&] {
            std::istringstream in(s);
            read_random_measure(in);
        });
    };
    CHECK(parse("# random-measure v1\n1,1\n") == 2);
    CHECK(parse("# random-measure v1\natom x\n1,1\n") == 2);
    CHECK(parse("# random-measure v1\natom 0.5\n1,1\natom 0.4\n2,1\n") == 5);
    CHECK(parse("# random-measure v1\natom 1\n") == 2);
    CHECK(parse("# random-measure v1\natom 0.5\n1,0.5\natom 0.5\n2,1\n") == 2);
}

TEST_CASE("sample matrices round trip and validate shape") {
    const SampleMatrix m{{1, 2.5, -3}, {0.125, 0, 7}};
    std::stringstream ss;
    write_sample_matrix(ss, m);
    CHECK(ss.str().substr(0, 9) == "n1,n2,n3\n");
    CHECK(read_sample_matrix(ss) == m);
    auto parse = [](const std::string& s) {
        return error_line([&] {
            std::istringstream in(s);
            read_sample_matrix(in);
        });
    };
    CHECK(parse("n1,n2\n1,2\n3\n") == 3);
    CHECK(parse("n1,n3\n1,2\n") == 1);
    CHECK(parse("n1,n2\n1,x\n") == 2);
    CHECK(parse("n1,n2\n") == 1);
}

TEST_CASE("doubles are written in shortest round-trip form") {
    CHECK(format_double(0.1) == "0.1");
    CHECK(format_double(2.0) == "2");
    CHECK(format_double(-1e-20) == "-1e-20");
    CHECK(format_double(1.0 / 3.0) == "0.3333333333333333");
    CHECK(format_double(INFINITY) == "inf");
    CHECK(format_double(NAN) == "nan");
}

TEST_CASE("missing files are reported") {
    CHECK_THROWS_AS(load_measure("/nonexistent/measure.txt"), std::runtime_error);
}
