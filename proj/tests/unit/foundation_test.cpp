#include <doctest.h>

#include <cmath>
#include <set>

#include "sentinel/error.hpp"
#include "sentinel/hash.hpp"
#include "sentinel/rng.hpp"
#include "sentinel/softmax.hpp"
#include "sentinel/text.hpp"
#include "sentinel/verdict.hpp"
#include "support.hpp"

using namespace sentinel;

TEST_SUITE("foundation") {
  TEST_CASE("sha256 matches the published test vectors") {
    CHECK(sha256_hex("") == "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    CHECK(sha256_hex("abc") == "ba7816bf8f01cfea414140de5dae2223b00361a396177a9cb410ff61f20015ad");
    testing::TempDir dir;
    testing::write_file(dir / "f", "abc");
    CHECK(sha256_file_hex(dir / "f") == sha256_hex("abc"));
    CHECK_THROWS_AS(sha256_file_hex(dir / "absent"), Error);
  }

  TEST_CASE("normalize_text trims, collapses whitespace, composes NFC, keeps case") {
    CHECK(normalize_text("a b") == normalize_text("a  b"));
    CHECK(normalize_text("  Hello \t\n World  ") == "Hello World");
    CHECK(normalize_text("e\xCC\x81") == "\xC3\xA9");  // e + combining acute -> é
    CHECK(normalize_text("a\xC2\xA0\xC2\xA0" "b") == "a b");  // no-break spaces
    CHECK(normalize_text("ABC") == "ABC");
    CHECK(normalize_text("") == "");
    CHECK(is_blank(" \t\n"));
    CHECK_FALSE(is_blank(" x "));
    CHECK(to_lower("IGNORE Ünïcode") == "ignore ünïcode");
  }

  TEST_CASE("SeededRng is deterministic and choose returns sorted distinct indices") {
    SeededRng a(42), b(42);
    for (int i = 0; i < 100; ++i) CHECK(a.below(1000) == b.below(1000));
    SeededRng r(7);
    for (int i = 0; i < 1000; ++i) CHECK(r.below(3) < 3);
    const auto pick = SeededRng(9).choose(100, 30);
    CHECK(pick.size() == 30);
    CHECK(std::is_sorted(pick.begin(), pick.end()));
    CHECK(std::set<std::size_t>(pick.begin(), pick.end()).size() == 30);
    CHECK(pick.back() < 100);
    CHECK(SeededRng(9).choose(100, 30) == pick);
    CHECK(SeededRng(9).choose(5, 10).size() == 5);
    CHECK(stage_seed(1, 1) != stage_seed(1, 2));
    CHECK(stage_seed(1, 1) != stage_seed(2, 1));
  }

  TEST_CASE("mt19937_64 reference value pins the portable stream") {
    // The standard fixes the 10000th output of a default-seeded mt19937_64.
    std::mt19937_64 e;
    e.discard(9999);
    CHECK(e() == 9981545732273789042ULL);
  }

  TEST_CASE("softmax pinned values") {
    const auto p = softmax(Logits2<double>(0.0, 0.0));
    CHECK(p(0) == doctest::Approx(0.5).epsilon(1e-12));
    const auto q = softmax(Logits2<double>(2.0, 0.0));
    // e^2 / (e^2 + 1)
    const double oracle = std::exp(2.0) / (std::exp(2.0) + 1.0);
    CHECK(std::abs(q(0) - 0.8807971) < 1e-6);
    CHECK(std::abs(q(1) - 0.1192029) < 1e-6);
    CHECK(std::abs(q(0) - oracle) < 1e-15);
    const auto r = softmax(Logits2<double>(-3.0, 3.0));
    CHECK(std::abs(r(1) - 0.9975) < 1e-4);
    // Large logits stay finite thanks to max subtraction.
    const auto big = softmax(Logits2<double>(1000.0, 999.0));
    CHECK(std::isfinite(big(0)));
    CHECK(std::abs(big.sum() - 1.0) < 1e-12);
    CHECK_THROWS_AS(softmax(Logits2<double>(NAN, 0.0)), Error);
    CHECK_THROWS_AS(softmax(Logits2<double>(INFINITY, 0.0)), Error);
  }

  TEST_CASE("softmax_rows agrees with the two-element softmax and works in float") {
    LogitMatrixd m(3, 2);
    m << 0, 0, 2, 0, -3, 3;
    const auto p = softmax_rows(m);
    for (int i = 0; i < 3; ++i) {
      const Logits2<double> row = m.row(i).transpose();
      CHECK((p.row(i).transpose() - softmax(row)).cwiseAbs().maxCoeff() < 1e-15);
    }
    LogitMatrix<float> f(1, 2);
    f << 2.0f, 0.0f;
    CHECK(std::abs(softmax_rows(f)(0, 0) - 0.8807971f) < 1e-6f);
  }

  TEST_CASE("verdict decision rule") {
    const auto tie = make_verdict(0.5, 0.5, "m");
    CHECK(tie.label == Label::jailbreak);
    CHECK(tie.score == 0.5);
    const auto low = make_verdict(0.2, 0.5, "m");
    CHECK(low.label == Label::benign);
    CHECK(low.score == doctest::Approx(0.8));
    CHECK(make_verdict(0.0, 0.0, "m").label == Label::jailbreak);
    CHECK(make_verdict(1.0, 1.0, "m").label == Label::jailbreak);
    CHECK(make_verdict(0.99, 1.0, "m").label == Label::benign);
  }
}
