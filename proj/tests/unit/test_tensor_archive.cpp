#include <doctest.h>

#include "lpaint/archive.hpp"
#include "lpaint/error.hpp"
#include "oracles.hpp"

using namespace lpaint;

TEST_SUITE("tensor") {
  TEST_CASE("construction checks value count against shape") {
    CHECK_THROWS_AS(Tensor({2, 3}, std::vector<float>(5)), ShapeError);
    Tensor t({2, 3, 4}, 1.5f);
    CHECK(t.size() == 24);
    CHECK(t.at(1, 2, 3) == 1.5f);
  }

  TEST_CASE("rank-3 indexing is channel-major") {
    Tensor t({2, 2, 3});
    t.at(1, 0, 2) = 7.0f;
    CHECK(t[1 * 6 + 0 * 3 + 2] == 7.0f);
  }

  TEST_CASE("reshape keeps data and rejects a size change") {
    Tensor t({2, 6}, 3.0f);
    t.reshape({3, 4});
    CHECK(t.shape() == Shape{3, 4});
    CHECK_THROWS_AS(t.reshape({5}), ShapeError);
  }

  TEST_CASE("max_abs_diff and finiteness") {
    Tensor a({3}, std::vector<float>{1, 2, 3});
    Tensor b({3}, std::vector<float>{1, 2.5f, 2});
    CHECK(max_abs_diff(a, b) == doctest::Approx(1.0));
    CHECK(all_finite(a.values()));
    b[0] = std::numeric_limits<float>::quiet_NaN();
    CHECK_FALSE(all_finite(b.values()));
    CHECK_THROWS_AS(require_same_shape(a, Tensor({2}), "x"), ShapeError);
  }
}

TEST_SUITE("archive") {
  TEST_CASE("sha256 known vectors") {
    CHECK(sha256_hex(std::string("abc")) ==
          "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    CHECK(sha256_hex(std::string()) ==
          "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
  }

  TEST_CASE("round trip preserves arrays and manifest") {
    std::mt19937_64 rng(1);
    Archive a;
    a.meta = {{"name", "x"}, {"n", 3}};
    a.put("w", oracle::random_tensor({2, 3, 4}, rng));
    a.put("b", oracle::random_tensor({5}, rng));
    const Archive b = Archive::deserialize(a.serialize());
    CHECK(b.meta == a.meta);
    CHECK(b.get("w") == a.get("w"));
    CHECK(b.get("b") == a.get("b"));
    CHECK(b.get("w", {2, 3, 4}).size() == 24);
    CHECK_THROWS_AS(b.get("w", {3, 2, 4}), ShapeError);
  }

  TEST_CASE("truncated or foreign bytes fail the version check") {
    Archive a;
    a.put("w", Tensor({4}, 1.0f));
    const std::string bytes = a.serialize();
    CHECK_THROWS_AS(Archive::deserialize(bytes.substr(0, bytes.size() - 3)), VersionError);
    CHECK_THROWS_AS(Archive::deserialize("not an archive at all, just text"), VersionError);
    CHECK_THROWS_AS(Archive::deserialize(""), VersionError);
    std::string bumped = bytes;
    bumped[bumped.size() - 20] = 9;  // version field
    CHECK_THROWS_AS(Archive::deserialize(bumped), VersionError);
  }

  TEST_CASE("missing array is an error") {
    Archive a;
    CHECK_THROWS(a.get("nope"));
  }

  TEST_CASE("file round trip") {
    testing::TempDir dir;
    Archive a;
    a.put("x", Tensor({2}, std::vector<float>{1, -1}));
    a.save(dir.path / "a.arc");
    CHECK(Archive::load(dir.path / "a.arc").get("x") == a.get("x"));
    CHECK_THROWS_AS(Archive::load(dir.path / "missing.arc"), IoError);
  }
}
