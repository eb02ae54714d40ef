#include "cfqp/io.hpp"
#include "cfqp/rng.hpp"

#include <doctest.h>

#include <filesystem>
#include <limits>
#include <set>

using namespace cfqp;

TEST_CASE("sha1 matches the published test vectors") {
    CHECK(io::sha1_hex("abc") == "a9993e364706816aba3e25717850c26c9cd0d89d");
    CHECK(io::sha1_hex("") == "da39a3ee5e6b4b0d3255bfef95601890afd80709");
}

TEST_CASE("git blob hashes agree with git hash-object") {
    CHECK(io::git_blob_hash("") == "e69de29bb2d1d6434b8b29ae775ad8c2e48c5391");
    CHECK(io::git_blob_hash("hello\n") == "ce013625030ba8dba906f756967f9e9ca394464a");
}

TEST_CASE("float32 encoding is little-endian and round trips rounded values") {
    const double one = 1.0;
    std::vector<std::uint8_t> bytes;
    io::append_f32_le(bytes, &one, 1);
    CHECK(bytes == std::vector<std::uint8_t>{0x00, 0x00, 0x80, 0x3f});

    Rng rng(4);
    std::vector<double> values;
    for (int i = 0; i < 500; ++i) values.push_back(round_f32(normal(rng, 100.0)));
    values.push_back(0.0);
    values.push_back(-0.0);
    values.push_back(std::numeric_limits<float>::max());
    bytes.clear();
    io::append_f32_le(bytes, values.data(), values.size());
    CHECK(bytes.size() == 4 * values.size());
    CHECK(io::decode_f32_le(bytes) == values);

    bytes.pop_back();
    CHECK_THROWS_AS(io::decode_f32_le(bytes), ParseError);
}

TEST_CASE("file helpers round trip and report missing paths") {
    const auto path = std::filesystem::temp_directory_path() / "cfqp_io_roundtrip.txt";
    io::write_text(path, "line one\nline two\n");
    CHECK(io::read_text(path) == "line one\nline two\n");
    CHECK(io::read_bytes(path).size() == 18);
    std::filesystem::remove(path);
    CHECK_THROWS_AS(io::read_bytes(path), Error);
}

TEST_CASE("derived seeds differ across streams and indices and are reproducible") {
    std::set<std::uint64_t> seen;
    for (std::uint64_t stream = 1; stream <= 8; ++stream)
        for (std::uint64_t index = 0; index < 100; ++index) seen.insert(derive_seed(42, stream, index));
    CHECK(seen.size() == 800);
    CHECK(derive_seed(42, 1, 7) == derive_seed(42, 1, 7));
    CHECK(derive_seed(42, 1, 7) != derive_seed(43, 1, 7));
    auto a = make_rng(9, streams::sample, 3), b = make_rng(9, streams::sample, 3);
    CHECK(a() == b());
}

TEST_CASE("sampling helpers have the requested moments") {
    Rng rng(11);
    const int n = 200000;
    double s = 0.0, s2 = 0.0, lo = 1e9, hi = -1e9;
    for (int i = 0; i < n; ++i) {
        const double v = normal(rng, 2.0);
        s += v;
        s2 += v * v;
        const double u = uniform(rng, -1.0, 3.0);
        lo = std::min(lo, u);
        hi = std::max(hi, u);
    }
    CHECK(std::abs(s / n) < 0.03);
    CHECK(s2 / n == doctest::Approx(4.0).epsilon(0.02));
    CHECK(lo >= -1.0);
    CHECK(hi < 3.0);
}
