#include "doctest.h"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <vector>

#include "shufflebench/dataset.hpp"
#include "shufflebench/rng.hpp"
#include "test_support.hpp"

using namespace shufflebench;

namespace {

std::vector<char> slurp(const std::filesystem::path& p) {
    std::ifstream in(p, std::ios::binary);
    return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

Record random_record(SplitMix64& rng, DataFormat format, std::uint32_t f) {
    Record r;
    r.format = format;
    r.instance_id = static_cast<std::uint32_t>(rng.next_below(1000));
    r.label = rng.next_below(2) == 0 ? -1 : 1;
    if (format == DataFormat::Dense) {
        r.dense.resize(f);
        for (auto& v : r.dense)
            v = static_cast<float>(rng.next_gaussian());
    } else {
        const auto nnz = rng.next_below(f) + 1;
        std::uint32_t idx = 0;
        for (std::uint64_t i = 0; i < nnz && idx < f; ++i) {
            idx += static_cast<std::uint32_t>(rng.next_below(3));
            if (idx >= f)
                break;
            r.sparse.push_back({idx, static_cast<float>(rng.next_gaussian())});
            ++idx;
        }
        if (r.sparse.empty())
            r.sparse.push_back({0, 1.0f});
    }
    return r;
}

// Writes a hand-rolled sparse dataset with the given per-record nnz counts.
void write_sparse_file(const std::filesystem::path& path,
                       const std::vector<std::uint32_t>& nnz_counts, std::uint32_t f) {
    DatasetHeader h;
    h.format = DataFormat::Sparse;
    h.num_instances = nnz_counts.size();
    h.num_features = f;
    std::vector<std::byte> body;
    for (std::uint32_t nnz : nnz_counts) {
        Record r;
        r.format = DataFormat::Sparse;
        r.label = 1;
        for (std::uint32_t i = 0; i < nnz; ++i)
            r.sparse.push_back({i, 1.0f + i});
        serialize_record(r, body);
    }
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    const auto head = serialize_header(h);
    out.write(reinterpret_cast<const char*>(head.data()), head.size());
    out.write(reinterpret_cast<const char*>(body.data()),
              static_cast<std::streamsize>(body.size()));
}

} // namespace

TEST_SUITE("dataset") {

TEST_CASE("header round-trips and rejects junk") {
    DatasetHeader h;
    h.format = DataFormat::Sparse;
    h.num_instances = 123456789ull;
    h.num_features = 4242;
    h.created_seed = 0xdeadbeefcafeull;
    const auto bytes = serialize_header(h);
    const auto parsed = parse_header(bytes);
    CHECK(parsed.format == h.format);
    CHECK(parsed.num_instances == h.num_instances);
    CHECK(parsed.num_features == h.num_features);
    CHECK(parsed.created_seed == h.created_seed);

    auto corrupt = bytes;
    corrupt[0] = std::byte{'X'};
    CHECK_THROWS_WITH_AS(parse_header(corrupt), doctest::Contains("bad magic"),
                         std::runtime_error);
    CHECK_THROWS_WITH_AS(parse_header(std::span<const std::byte>(bytes.data(), 10)),
                         doctest::Contains("truncated header"), std::runtime_error);
}

TEST_CASE("records round-trip through serialization in both formats") {
    SplitMix64 rng(31337);
    for (int i = 0; i < 100; ++i) {
        const auto format = i % 2 == 0 ? DataFormat::Dense : DataFormat::Sparse;
        const Record r = random_record(rng, format, 12);
        std::vector<std::byte> bytes;
        serialize_record(r, bytes);
        CHECK(bytes.size() == r.serialized_size());
        const Record back = deserialize_record(bytes, format, 12, r.instance_id);
        CHECK(back.same_content(r));
        CHECK(back.instance_id == r.instance_id);
    }
}

TEST_CASE("tiny dense dataset has the expected exact size") {
    testsup::TempDir tmp("gen4");
    generate_synthetic({4, 2, DataFormat::Dense, std::nullopt, 0.1, 7}, tmp.file("d.shfd"));
    // header + 4 records of (4 label + 8 feature) bytes
    CHECK(std::filesystem::file_size(tmp.file("d.shfd")) == 32 + 4 * 12);

    IoContext io(8);
    Dataset ds(tmp.file("d.shfd"), io);
    CHECK(ds.header().num_instances == 4);
    CHECK(ds.header().num_features == 2);
    CHECK(ds.header().created_seed == 7);
    CHECK(ds.header().format == DataFormat::Dense);
}

TEST_CASE("single-instance dataset carries a valid label") {
    testsup::TempDir tmp("gen1");
    generate_synthetic({1, 1, DataFormat::Dense, std::nullopt, 1.0, 0}, tmp.file("d.shfd"));
    IoContext io(8);
    Dataset ds(tmp.file("d.shfd"), io);
    const auto records = load_all_records(ds);
    REQUIRE(records.size() == 1);
    CHECK((records[0].label == 1 || records[0].label == -1));
}

TEST_CASE("sparse generation: file size equals header plus scanned record bytes") {
    testsup::TempDir tmp("gensp");
    generate_synthetic({1000, 50, DataFormat::Sparse, 10, 0.05, 42}, tmp.file("d.shfd"));
    IoContext io(64);
    Dataset ds(tmp.file("d.shfd"), io);

    // Oracle: re-read the file sequentially and sum record byte lengths.
    RecordScanner scanner = scan_dataset(ds, /*accounted=*/false);
    std::uint64_t total = 0;
    std::uint64_t count = 0;
    std::vector<std::uint32_t> lengths;
    while (auto entry = scanner.next_entry()) {
        total += entry->byte_length;
        lengths.push_back(entry->byte_length);
        ++count;
    }
    CHECK(count == 1000);
    CHECK(std::filesystem::file_size(tmp.file("d.shfd")) == 32 + total);
    // nnz is drawn per record, so lengths must differ.
    CHECK(std::adjacent_find(lengths.begin(), lengths.end(),
                             std::not_equal_to<>()) != lengths.end());
}

TEST_CASE("generation is deterministic") {
    testsup::TempDir tmp("gendet");
    const SyntheticSpec spec{500, 20, DataFormat::Sparse, 5, 0.05, 99};
    generate_synthetic(spec, tmp.file("a.shfd"));
    generate_synthetic(spec, tmp.file("b.shfd"));
    CHECK(slurp(tmp.file("a.shfd")) == slurp(tmp.file("b.shfd")));

    generate_synthetic({500, 20, DataFormat::Sparse, 5, 0.05, 100}, tmp.file("c.shfd"));
    CHECK(slurp(tmp.file("a.shfd")) != slurp(tmp.file("c.shfd")));
}

TEST_CASE("generation rejects bad arguments") {
    testsup::TempDir tmp("genbad");
    CHECK_THROWS_AS(generate_synthetic({0, 2, DataFormat::Dense, std::nullopt, 0.1, 1},
                                       tmp.file("x.shfd")),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic({2, 50, DataFormat::Sparse, 60, 0.1, 1},
                                       tmp.file("x.shfd")),
                    std::invalid_argument);
    CHECK_THROWS_AS(generate_synthetic({2, 2, DataFormat::Dense, std::nullopt, -1.0, 1},
                                       tmp.file("x.shfd")),
                    std::invalid_argument);
}

TEST_CASE("dense_offset arithmetic") {
    CHECK(dense_offset(0, 32, 12) == 32);
    CHECK(dense_offset(3, 32, 12) == 68);
}

TEST_CASE("offset table for a dense file is the arithmetic progression") {
    testsup::TempDir tmp("offdense");
    generate_synthetic({4, 2, DataFormat::Dense, std::nullopt, 0.1, 7}, tmp.file("d.shfd"));
    IoContext io(8);
    Dataset ds(tmp.file("d.shfd"), io);
    const OffsetTable scanned = build_offset_table(ds);
    REQUIRE(scanned.entries.size() == 4);
    CHECK(scanned.entries[0].byte_offset == 32);
    CHECK(scanned.entries[1].byte_offset == 44);
    CHECK(scanned.entries[2].byte_offset == 56);
    CHECK(scanned.entries[3].byte_offset == 68);

    const OffsetTable arithmetic = dense_offset_table(ds.header());
    CHECK(scanned.entries == arithmetic.entries);
    for (std::uint64_t i = 0; i < 4; ++i)
        CHECK(scanned.entries[i].byte_offset == dense_offset(i, 32, 12));
}

TEST_CASE("offset table for a hand-rolled sparse file matches the scan oracle") {
    testsup::TempDir tmp("offsparse");
    write_sparse_file(tmp.file("s.shfd"), {1, 2, 1}, 8); // lengths 16, 24, 16
    IoContext io(8);
    Dataset ds(tmp.file("s.shfd"), io);
    const OffsetTable t = build_offset_table(ds);
    REQUIRE(t.entries.size() == 3);
    CHECK(t.entries[0] == OffsetEntry{32, 16});
    CHECK(t.entries[1] == OffsetEntry{48, 24});
    CHECK(t.entries[2] == OffsetEntry{72, 16});
}

TEST_CASE("offset tables of generated datasets are contiguous") {
    testsup::TempDir tmp("contig");
    generate_synthetic({300, 30, DataFormat::Sparse, 7, 0.05, 5}, tmp.file("s.shfd"));
    generate_synthetic({300, 30, DataFormat::Dense, std::nullopt, 0.05, 5}, tmp.file("d.shfd"));
    for (const auto* name : {"s.shfd", "d.shfd"}) {
        IoContext io(8);
        Dataset ds(tmp.file(name), io);
        const OffsetTable t = build_offset_table(ds);
        REQUIRE(t.entries.size() == 300);
        CHECK(t.entries[0].byte_offset == DatasetHeader::kSerializedSize);
        for (std::size_t i = 0; i + 1 < t.entries.size(); ++i)
            CHECK(t.entries[i].byte_offset + t.entries[i].byte_length ==
                  t.entries[i + 1].byte_offset);
        CHECK(t.data_end() == ds.file().size_bytes());
    }
}

TEST_CASE("empty and truncated files are rejected") {
    testsup::TempDir tmp("trunc");
    { std::ofstream out(tmp.file("empty.shfd"), std::ios::binary); }
    IoContext io(8);
    CHECK_THROWS_WITH_AS(Dataset(tmp.file("empty.shfd"), io),
                         doctest::Contains("truncated header"), std::runtime_error);

    generate_synthetic({20, 4, DataFormat::Sparse, 4, 0.1, 3}, tmp.file("cut.shfd"));
    const auto full = slurp(tmp.file("cut.shfd"));
    {
        std::ofstream out(tmp.file("cut.shfd"), std::ios::binary | std::ios::trunc);
        out.write(full.data(), static_cast<std::streamsize>(full.size() - 5));
    }
    Dataset cut(tmp.file("cut.shfd"), io);
    CHECK_THROWS(build_offset_table(cut));
}

TEST_CASE("an absurd sparse nnz is rejected, not wrapped around") {
    testsup::TempDir tmp("badnnz");
    DatasetHeader h;
    h.format = DataFormat::Sparse;
    h.num_instances = 1;
    h.num_features = 8;
    const auto head = serialize_header(h);
    std::ofstream out(tmp.file("evil.shfd"), std::ios::binary);
    out.write(reinterpret_cast<const char*>(head.data()), head.size());
    const std::uint32_t label = 1;
    const std::uint32_t nnz = 0x40000000u; // 8*nnz wraps a 32-bit length to 0
    out.write(reinterpret_cast<const char*>(&label), 4);
    out.write(reinterpret_cast<const char*>(&nnz), 4);
    out.close();

    IoContext io(8);
    Dataset ds(tmp.file("evil.shfd"), io);
    CHECK_THROWS_WITH_AS(build_offset_table(ds), doctest::Contains("corrupt record length"),
                         std::runtime_error);
}

TEST_CASE("read_record_at returns the requested instance, in any order") {
    testsup::TempDir tmp("randread");
    generate_synthetic({100, 10, DataFormat::Sparse, 6, 0.05, 17}, tmp.file("s.shfd"));
    IoContext io(64);
    Dataset ds(tmp.file("s.shfd"), io);
    const OffsetTable t = build_offset_table(ds);

    const Record first = ds.read_record(0, t.entries[0]);
    CHECK(first.instance_id == 0);

    SplitMix64 rng(4);
    auto order = fisher_yates(100, rng);
    std::vector<std::uint32_t> seen;
    const std::uint64_t calls_before = io.stats().read_calls;
    for (std::uint32_t id : order)
        seen.push_back(ds.read_record(id, t.entries[id]).instance_id);
    CHECK(io.stats().read_calls - calls_before == 100); // one call per record
    std::sort(seen.begin(), seen.end());
    std::vector<std::uint32_t> all(100);
    std::iota(all.begin(), all.end(), 0u);
    CHECK(seen == all);

    // An entry pointing past the end of the file is a short read.
    CHECK_THROWS_WITH_AS(ds.read_record(0, {ds.file().size_bytes() - 4, 64}),
                         doctest::Contains("short read"), std::runtime_error);
}

TEST_CASE("unaccounted snapshot equals per-entry reads") {
    testsup::TempDir tmp("snap");
    generate_synthetic({50, 8, DataFormat::Sparse, 5, 0.05, 23}, tmp.file("s.shfd"));
    IoContext io(64);
    Dataset ds(tmp.file("s.shfd"), io);
    const OffsetTable t = build_offset_table(ds);
    const auto snapshot = load_all_records(ds);
    REQUIRE(snapshot.size() == 50);
    for (std::uint32_t id : {0u, 7u, 49u}) {
        const Record direct = ds.read_record_raw(id, t.entries[id]);
        CHECK(direct.same_content(snapshot[id]));
        CHECK(snapshot[id].instance_id == id);
    }
}

TEST_CASE("offset table sidecar round-trips") {
    testsup::TempDir tmp("sidecar");
    generate_synthetic({64, 16, DataFormat::Sparse, 9, 0.05, 8}, tmp.file("s.shfd"));
    IoContext io(8);
    Dataset ds(tmp.file("s.shfd"), io);
    const OffsetTable t = build_offset_table(ds);
    save_offset_table(t, tmp.file("s.shfo"));
    const OffsetTable back = load_offset_table(tmp.file("s.shfo"));
    CHECK(back.entries == t.entries);

    {
        std::ofstream out(tmp.file("bad.shfo"), std::ios::binary);
        out << "not-a-multiple-of-twelve!";
    }
    CHECK_THROWS(load_offset_table(tmp.file("bad.shfo")));
}

TEST_CASE("a cold accounted scan transfers exactly the data pages") {
    testsup::TempDir tmp("scanpages");
    // 128 dense records of 36 bytes: 4608 data bytes -> 2 pages of 4096.
    generate_synthetic({128, 8, DataFormat::Dense, std::nullopt, 0.1, 12}, tmp.file("d.shfd"));
    IoContext io(16);
    Dataset ds(tmp.file("d.shfd"), io);
    REQUIRE(ds.data_bytes() == 128 * 36);
    build_offset_table(ds);
    CHECK(io.stats().pages_read_seq == ds.file().data_pages());
    CHECK(io.stats().pages_read_rand == 0);
    CHECK(io.stats().page_cache_hits == 0);
}

} // TEST_SUITE
