#include <catch2/catch_amalgamated.hpp>

#include <cstdint>
#include <numeric>
#include <vector>

#include "ddlm/random.hpp"

using ddlm::RandomStream;

TEST_CASE("same seed and call sequence reproduces outputs") {
    RandomStream a(42), b(42);
    for (int i = 0; i < 100; ++i) REQUIRE(a.next_u64() == b.next_u64());
    for (int i = 0; i < 100; ++i) REQUIRE(a.uniform() == b.uniform());
    for (int i = 0; i < 100; ++i) REQUIRE(a.normal() == b.normal());
}

TEST_CASE("different seeds give different streams") {
    RandomStream a(1), b(2);
    int same = 0;
    for (int i = 0; i < 64; ++i) same += (a.next_u32() == b.next_u32());
    REQUIRE(same < 4);
}

TEST_CASE("fork is deterministic in (seed, label) and independent of parent state") {
    RandomStream a(7);
    RandomStream child1 = a.fork(13);
    a.next_u64();  // advance parent
    RandomStream child2 = a.fork(13);
    REQUIRE(child1.next_u64() == child2.next_u64());

    RandomStream b(7);
    REQUIRE(b.fork(13).next_u64() == RandomStream(7).fork(13).next_u64());
    REQUIRE(b.fork(13).next_u64() != b.fork(14).next_u64());
    REQUIRE(b.fork("mask").next_u64() == RandomStream(7).fork("mask").next_u64());
    REQUIRE(b.fork("mask").next_u64() != b.fork("order").next_u64());
}

TEST_CASE("uniform stays in [0,1) and has a sane mean") {
    RandomStream r(3);
    double sum = 0;
    const int n = 20000;
    for (int i = 0; i < n; ++i) {
        double u = r.uniform();
        REQUIRE(u >= 0.0);
        REQUIRE(u < 1.0);
        sum += u;
    }
    REQUIRE(std::abs(sum / n - 0.5) < 0.01);
}

TEST_CASE("randint is unbiased over a small range") {
    RandomStream r(5);
    std::vector<int> counts(7, 0);
    const int n = 70000;
    for (int i = 0; i < n; ++i) counts[size_t(r.randint(7))]++;
    for (int c : counts) {
        REQUIRE(c > 9000);
        REQUIRE(c < 11000);
    }
}

TEST_CASE("normal moments") {
    RandomStream r(11);
    double sum = 0, sq = 0;
    const int n = 50000;
    for (int i = 0; i < n; ++i) {
        double x = r.normal();
        sum += x;
        sq += x * x;
    }
    REQUIRE(std::abs(sum / n) < 0.02);
    REQUIRE(std::abs(sq / n - 1.0) < 0.03);
}

TEST_CASE("truncated normal respects the cutoff") {
    RandomStream r(23);
    for (int i = 0; i < 10000; ++i) REQUIRE(std::abs(r.truncated_normal(0.02)) <= 0.04);
}

TEST_CASE("shuffle is a permutation and seed-stable") {
    RandomStream a(9), b(9);
    std::vector<int> v(50), w(50);
    std::iota(v.begin(), v.end(), 0);
    std::iota(w.begin(), w.end(), 0);
    a.shuffle(v);
    b.shuffle(w);
    REQUIRE(v == w);
    std::vector<int> sorted = v;
    std::sort(sorted.begin(), sorted.end());
    for (int i = 0; i < 50; ++i) REQUIRE(sorted[size_t(i)] == i);
}

TEST_CASE("algorithm identifier is pinned") {
    REQUIRE(RandomStream::kAlgorithm == "philox4x32-10");
}
