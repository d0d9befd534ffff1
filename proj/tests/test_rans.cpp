#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>

#include "qres/common.hpp"
#include "qres/rans.hpp"

using namespace qres;

namespace {

// Random PMF with the same invariants build_pmf guarantees.
QuantizedPmf random_pmf(int alphabet, Rng& rng) {
    std::vector<double> weights(static_cast<size_t>(alphabet));
    for (auto& w : weights) w = std::pow(rng.uniform() + 1e-4, 3.0);
    double total = 0.0;
    for (double w : weights) total += w;
    QuantizedPmf pmf;
    pmf.offset = 0;
    pmf.cdf.resize(static_cast<size_t>(alphabet) + 1);
    pmf.cdf[0] = 0;
    uint32_t assigned = 0;
    for (int i = 0; i < alphabet; ++i) {
        uint32_t budget = kCdfTotal - assigned - static_cast<uint32_t>(alphabet - 1 - i);
        uint32_t f = i + 1 == alphabet
                         ? budget
                         : std::max<uint32_t>(
                               1, std::min<uint32_t>(
                                      budget - 1, static_cast<uint32_t>(
                                                      weights[static_cast<size_t>(i)] / total *
                                                      kCdfTotal)));
        assigned += f;
        pmf.cdf[static_cast<size_t>(i) + 1] = assigned;
    }
    REQUIRE(pmf.cdf.back() == kCdfTotal);
    return pmf;
}

int sample_from(const QuantizedPmf& pmf, Rng& rng) {
    return pmf.find(static_cast<uint32_t>(rng.below(kCdfTotal)));
}

double pmf_entropy_bits(const QuantizedPmf& pmf) {
    double h = 0.0;
    for (int i = 0; i < pmf.alphabet_size(); ++i) {
        double p = static_cast<double>(pmf.freq(i)) / kCdfTotal;
        h -= p * std::log2(p);
    }
    return h;
}

}  // namespace

TEST_CASE("empty sequence flushes to exactly 8 bytes") {
    std::vector<std::pair<int, const QuantizedPmf*>> empty;
    std::vector<uint8_t> bytes = rans_encode(empty);
    CHECK(bytes.size() == kRansFlushBytes);
    std::vector<int> out = rans_decode(bytes, {});
    CHECK(out.empty());
}

TEST_CASE("round trip of random symbols under random PMFs") {
    Rng rng(11);
    for (int trial = 0; trial < 20; ++trial) {
        int alphabet = 1 + static_cast<int>(rng.below(1024));
        QuantizedPmf pmf = random_pmf(alphabet, rng);
        size_t n = 1 + rng.below(10000);
        std::vector<int> symbols(n);
        for (auto& s : symbols) s = sample_from(pmf, rng);

        std::vector<std::pair<int, const QuantizedPmf*>> seq;
        seq.reserve(n);
        for (int s : symbols) seq.emplace_back(s, &pmf);
        std::vector<uint8_t> bytes = rans_encode(seq);

        std::vector<const QuantizedPmf*> pmfs(n, &pmf);
        std::vector<int> decoded = rans_decode(bytes, pmfs);
        CHECK(decoded == symbols);
    }
}

TEST_CASE("round trip with per-symbol varying PMFs") {
    Rng rng(13);
    size_t n = 5000;
    std::vector<QuantizedPmf> pmfs;
    pmfs.reserve(n);
    std::vector<int> symbols;
    for (size_t i = 0; i < n; ++i) {
        pmfs.push_back(random_pmf(1 + static_cast<int>(rng.below(64)), rng));
        symbols.push_back(sample_from(pmfs.back(), rng));
    }
    std::vector<std::pair<int, const QuantizedPmf*>> seq;
    std::vector<const QuantizedPmf*> ptrs;
    for (size_t i = 0; i < n; ++i) {
        seq.emplace_back(symbols[i], &pmfs[i]);
        ptrs.push_back(&pmfs[i]);
    }
    std::vector<uint8_t> bytes = rans_encode(seq);
    CHECK(rans_decode(bytes, ptrs) == symbols);
}

TEST_CASE("coded length reaches the Shannon bound within 1% + 8 bytes") {
    Rng rng(17);
    size_t n = 100000;
    for (int trial = 0; trial < 5; ++trial) {
        QuantizedPmf pmf = random_pmf(2 + static_cast<int>(rng.below(256)), rng);
        std::vector<std::pair<int, const QuantizedPmf*>> seq;
        seq.reserve(n);
        double bits = 0.0;
        for (size_t i = 0; i < n; ++i) {
            int s = sample_from(pmf, rng);
            bits -= std::log2(static_cast<double>(pmf.freq(s)) / kCdfTotal);
            seq.emplace_back(s, &pmf);
        }
        std::vector<uint8_t> bytes = rans_encode(seq);
        double ideal_bytes = bits / 8.0;
        CHECK(static_cast<double>(bytes.size()) <= ideal_bytes * 1.01 + 8.0);
        (void)pmf_entropy_bits(pmf);
    }
}

TEST_CASE("single-symbol alphabet consumes no payload beyond the flush") {
    QuantizedPmf pmf;
    pmf.offset = 0;
    pmf.cdf = {0, kCdfTotal};
    std::vector<std::pair<int, const QuantizedPmf*>> seq(1000, {0, &pmf});
    std::vector<uint8_t> bytes = rans_encode(seq);
    CHECK(bytes.size() == kRansFlushBytes);
    std::vector<const QuantizedPmf*> pmfs(1000, &pmf);
    std::vector<int> out = rans_decode(bytes, pmfs);
    CHECK(out == std::vector<int>(1000, 0));
}

TEST_CASE("truncated stream raises a decode error") {
    Rng rng(19);
    QuantizedPmf pmf = random_pmf(64, rng);
    std::vector<std::pair<int, const QuantizedPmf*>> seq;
    for (int i = 0; i < 5000; ++i) seq.emplace_back(sample_from(pmf, rng), &pmf);
    std::vector<uint8_t> bytes = rans_encode(seq);
    REQUIRE(bytes.size() > 12);
    std::vector<const QuantizedPmf*> pmfs(5000, &pmf);

    std::vector<uint8_t> cut(bytes.begin(), bytes.end() - 5);
    CHECK_THROWS_AS(rans_decode(cut, pmfs), DecodeError);
    std::vector<uint8_t> tiny(bytes.begin(), bytes.begin() + 4);
    CHECK_THROWS_AS(rans_decode(tiny, pmfs), DecodeError);
}

TEST_CASE("corrupting a payload byte is detected or changes the symbols") {
    Rng rng(23);
    QuantizedPmf pmf = random_pmf(200, rng);
    size_t n = 2000;
    std::vector<int> symbols;
    std::vector<std::pair<int, const QuantizedPmf*>> seq;
    for (size_t i = 0; i < n; ++i) {
        symbols.push_back(sample_from(pmf, rng));
        seq.emplace_back(symbols.back(), &pmf);
    }
    std::vector<uint8_t> bytes = rans_encode(seq);
    std::vector<const QuantizedPmf*> pmfs(n, &pmf);

    int silent = 0;
    for (int trial = 0; trial < 100; ++trial) {
        std::vector<uint8_t> corrupt = bytes;
        size_t pos = rng.below(corrupt.size());
        uint8_t flip = static_cast<uint8_t>(1 + rng.below(255));
        corrupt[pos] ^= flip;
        try {
            std::vector<int> out = rans_decode(corrupt, pmfs);
            if (out == symbols) ++silent;
        } catch (const DecodeError&) {
            // detected
        }
    }
    CHECK(silent == 0);
}

TEST_CASE("bypass fixed-width coding") {
    SUBCASE("value 5 at 8 bits is the byte 0x05") {
        std::vector<uint64_t> values{5};
        std::vector<uint8_t> bytes = bypass_encode(values, 8);
        REQUIRE(bytes.size() == 1);
        CHECK(bytes[0] == 0x05);
    }

    SUBCASE("round trip of 1000 random values at odd widths") {
        Rng rng(29);
        for (int bits : {1, 3, 8, 13, 32}) {
            std::vector<uint64_t> values(1000);
            for (auto& v : values) v = rng.below(uint64_t{1} << bits);
            std::vector<uint8_t> bytes = bypass_encode(values, bits);
            CHECK(bypass_decode(bytes, bits, values.size()) == values);
        }
    }

    SUBCASE("width overflow is a contract error") {
        BypassWriter w;
        CHECK_THROWS_AS(w.put(256, 8), ContractError);
        CHECK_THROWS_AS(w.put(0, 60), ContractError);
    }
}

TEST_CASE("interleaving rANS payload with a bypass tail preserves both") {
    Rng rng(31);
    for (int trial = 0; trial < 10; ++trial) {
        QuantizedPmf pmf = random_pmf(50, rng);
        size_t n = 1 + rng.below(3000);
        std::vector<int> symbols;
        std::vector<std::pair<int, const QuantizedPmf*>> seq;
        std::vector<uint64_t> side_values;
        BypassWriter bw;
        for (size_t i = 0; i < n; ++i) {
            symbols.push_back(sample_from(pmf, rng));
            seq.emplace_back(symbols.back(), &pmf);
            if (rng.below(4) == 0) {
                uint64_t v = rng.below(1u << 20);
                side_values.push_back(v);
                bw.put(v, 20);
            }
        }
        std::vector<uint8_t> payload = assemble_stream(rans_encode(seq), bw.finish());

        // Bypass reads may interleave with symbol decodes at any cadence;
        // values come back in write order either way.
        StreamReader reader(payload);
        std::vector<int> got_symbols;
        std::vector<uint64_t> got_values;
        for (size_t i = 0; i < n; ++i) {
            got_symbols.push_back(reader.rans().get_symbol(pmf));
            if (i % 4 == 3 && got_values.size() < side_values.size())
                got_values.push_back(reader.read_bypass(20));
        }
        while (got_values.size() < side_values.size())
            got_values.push_back(reader.read_bypass(20));
        reader.expect_consumed();
        CHECK(got_symbols == symbols);
        CHECK(got_values == side_values);
    }
}

TEST_CASE("stream assembly detects nonzero padding and collisions") {
    Rng rng(37);
    QuantizedPmf pmf = random_pmf(16, rng);
    std::vector<std::pair<int, const QuantizedPmf*>> seq{{3, &pmf}};
    BypassWriter bw;
    bw.put(7, 3);
    std::vector<uint8_t> payload = assemble_stream(rans_encode(seq), bw.finish());
    StreamReader reader(payload);
    CHECK(reader.rans().get_symbol(pmf) == 3);
    CHECK(reader.read_bypass(3) == 7);
    reader.expect_consumed();

    // reading more bypass bits than were written must fail
    StreamReader reader2(payload);
    reader2.rans().get_symbol(pmf);
    CHECK_THROWS_AS(
        [&] {
            for (int i = 0; i < 64; ++i) reader2.read_bypass(8);
        }(),
        DecodeError);
}

TEST_CASE("encoding is bitwise deterministic") {
    Rng rng(41);
    QuantizedPmf pmf = random_pmf(100, rng);
    std::vector<std::pair<int, const QuantizedPmf*>> seq;
    for (int i = 0; i < 4000; ++i) seq.emplace_back(sample_from(pmf, rng), &pmf);
    CHECK(rans_encode(seq) == rans_encode(seq));
}
