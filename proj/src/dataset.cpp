#include "shufflebench/dataset.hpp"

#include <algorithm>
#include <cstring>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <unordered_set>

#include "shufflebench/rng.hpp"

namespace shufflebench {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

void store_u32(std::byte* p, std::uint32_t v) { std::memcpy(p, &v, 4); }
void store_u64(std::byte* p, std::uint64_t v) { std::memcpy(p, &v, 8); }
void store_f32(std::byte* p, float v) { std::memcpy(p, &v, 4); }

std::uint32_t load_u32(const std::byte* p) {
    std::uint32_t v;
    std::memcpy(&v, p, 4);
    return v;
}
std::uint64_t load_u64(const std::byte* p) {
    std::uint64_t v;
    std::memcpy(&v, p, 8);
    return v;
}
float load_f32(const std::byte* p) {
    float v;
    std::memcpy(&v, p, 4);
    return v;
}

void append_u32(std::vector<std::byte>& out, std::uint32_t v) {
    const std::size_t at = out.size();
    out.resize(at + 4);
    store_u32(out.data() + at, v);
}
void append_f32(std::vector<std::byte>& out, float v) {
    const std::size_t at = out.size();
    out.resize(at + 4);
    store_f32(out.data() + at, v);
}

} // namespace

std::array<std::byte, DatasetHeader::kSerializedSize> serialize_header(const DatasetHeader& h) {
    std::array<std::byte, DatasetHeader::kSerializedSize> out{};
    std::memcpy(out.data(), DatasetHeader::kMagic.data(), 8);
    out[8] = static_cast<std::byte>(h.format);
    store_u64(out.data() + 9, h.num_instances);
    store_u32(out.data() + 17, h.num_features);
    out[21] = static_cast<std::byte>(h.label_width);
    store_u64(out.data() + 22, h.created_seed);
    return out;
}

DatasetHeader parse_header(std::span<const std::byte> bytes) {
    if (bytes.size() < DatasetHeader::kSerializedSize)
        fail("truncated header");
    if (std::memcmp(bytes.data(), DatasetHeader::kMagic.data(), 8) != 0)
        fail("bad magic: not a dataset file");
    const auto format_byte = static_cast<std::uint8_t>(bytes[8]);
    if (format_byte > 1)
        fail("bad header: unknown format tag");
    DatasetHeader h;
    h.format = static_cast<DataFormat>(format_byte);
    h.num_instances = load_u64(bytes.data() + 9);
    h.num_features = load_u32(bytes.data() + 17);
    h.label_width = static_cast<std::uint8_t>(bytes[21]);
    h.created_seed = load_u64(bytes.data() + 22);
    if (h.num_instances < 1 || h.num_features < 1)
        fail("bad header: empty dataset dimensions");
    if (h.label_width != 4)
        fail("bad header: unsupported label width");
    return h;
}

void serialize_record(const Record& record, std::vector<std::byte>& out) {
    append_u32(out, static_cast<std::uint32_t>(record.label));
    if (record.format == DataFormat::Dense) {
        for (float v : record.dense)
            append_f32(out, v);
    } else {
        append_u32(out, static_cast<std::uint32_t>(record.sparse.size()));
        for (const auto& [index, value] : record.sparse) {
            append_u32(out, index);
            append_f32(out, value);
        }
    }
}

Record deserialize_record(std::span<const std::byte> bytes, DataFormat format,
                          std::uint32_t num_features, std::uint32_t instance_id) {
    Record r;
    r.instance_id = instance_id;
    r.format = format;
    if (bytes.size() < 4)
        fail("record deserialization failed: too short");
    r.label = static_cast<std::int32_t>(load_u32(bytes.data()));
    if (r.label != 1 && r.label != -1)
        fail("record deserialization failed: label not in {-1,+1}");
    if (format == DataFormat::Dense) {
        if (bytes.size() != 4 + 4ull * num_features)
            fail("record deserialization failed: dense length mismatch");
        r.dense.resize(num_features);
        for (std::uint32_t i = 0; i < num_features; ++i)
            r.dense[i] = load_f32(bytes.data() + 4 + 4ull * i);
    } else {
        if (bytes.size() < 8)
            fail("record deserialization failed: missing nnz");
        const std::uint32_t nnz = load_u32(bytes.data() + 4);
        if (bytes.size() != 8 + 8ull * nnz)
            fail("record deserialization failed: sparse length mismatch");
        r.sparse.resize(nnz);
        std::uint32_t prev = 0;
        for (std::uint32_t i = 0; i < nnz; ++i) {
            const std::uint32_t index = load_u32(bytes.data() + 8 + 8ull * i);
            const float value = load_f32(bytes.data() + 12 + 8ull * i);
            if (index >= num_features)
                fail("record deserialization failed: feature index out of range");
            if (i > 0 && index <= prev)
                fail("record deserialization failed: indices not strictly increasing");
            prev = index;
            r.sparse[i] = {index, value};
        }
    }
    return r;
}

void save_offset_table(const OffsetTable& table, const std::filesystem::path& path) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail("cannot write offset table: " + path.string());
    std::vector<std::byte> buf(table.entries.size() * 12);
    std::byte* p = buf.data();
    for (const auto& e : table.entries) {
        store_u64(p, e.byte_offset);
        store_u32(p + 8, e.byte_length);
        p += 12;
    }
    out.write(reinterpret_cast<const char*>(buf.data()),
              static_cast<std::streamsize>(buf.size()));
    if (!out)
        fail("short write on offset table: " + path.string());
}

OffsetTable load_offset_table(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        fail("cannot open offset table: " + path.string());
    std::vector<char> buf((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    if (buf.size() % 12 != 0)
        fail("corrupt offset table: " + path.string());
    OffsetTable t;
    t.entries.resize(buf.size() / 12);
    const auto* p = reinterpret_cast<const std::byte*>(buf.data());
    for (auto& e : t.entries) {
        e.byte_offset = load_u64(p);
        e.byte_length = load_u32(p + 8);
        p += 12;
    }
    return t;
}

OffsetTable dense_offset_table(const DatasetHeader& header) {
    OffsetTable t;
    const std::uint32_t rs = header.dense_record_size();
    t.entries.resize(header.num_instances);
    for (std::uint64_t i = 0; i < header.num_instances; ++i)
        t.entries[i] = {dense_offset(i, DatasetHeader::kSerializedSize, rs), rs};
    return t;
}

namespace {

// Distinct sorted indices via Floyd's sampling.
std::vector<std::uint32_t> sample_indices(std::uint32_t count, std::uint32_t range,
                                          SplitMix64& rng) {
    std::unordered_set<std::uint32_t> chosen;
    chosen.reserve(count);
    for (std::uint32_t j = range - count; j < range; ++j) {
        const auto t = static_cast<std::uint32_t>(rng.next_below(j + 1));
        if (!chosen.insert(t).second)
            chosen.insert(j);
    }
    std::vector<std::uint32_t> out(chosen.begin(), chosen.end());
    std::sort(out.begin(), out.end());
    return out;
}

} // namespace

void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out_path) {
    if (spec.n < 1 || spec.f < 1)
        throw std::invalid_argument("invalid dimensions: n and f must be at least 1");
    if (spec.margin <= 0)
        throw std::invalid_argument("margin must be positive");
    std::uint32_t nnz_max = 0;
    if (spec.format == DataFormat::Sparse) {
        if (!spec.nnz_per_record)
            throw std::invalid_argument("sparse generation requires nnz_per_record");
        nnz_max = *spec.nnz_per_record;
        if (nnz_max < 1 || nnz_max > spec.f)
            throw std::invalid_argument("invalid dimensions: nnz_per_record must be in [1, f]");
    }

    SplitMix64 rng = stream_for(spec.seed, RngStream::Generate);

    // Random separating direction, unit length.
    std::vector<double> w(spec.f);
    double norm = 0;
    do {
        norm = 0;
        for (auto& wi : w) {
            wi = rng.next_gaussian();
            norm += wi * wi;
        }
    } while (norm == 0);
    norm = std::sqrt(norm);
    for (auto& wi : w)
        wi /= norm;

    DatasetHeader header;
    header.format = spec.format;
    header.num_instances = spec.n;
    header.num_features = spec.f;
    header.created_seed = spec.seed;

    std::vector<std::byte> body;
    if (spec.format == DataFormat::Dense)
        body.reserve(spec.n * header.dense_record_size());

    Record rec;
    rec.format = spec.format;
    for (std::uint64_t i = 0; i < spec.n; ++i) {
        double score = 0;
        do {
            score = 0;
            if (spec.format == DataFormat::Dense) {
                rec.dense.resize(spec.f);
                for (std::uint32_t j = 0; j < spec.f; ++j) {
                    rec.dense[j] = static_cast<float>(rng.next_gaussian());
                    score += w[j] * rec.dense[j];
                }
            } else {
                const auto nnz = static_cast<std::uint32_t>(1 + rng.next_below(nnz_max));
                const auto indices = sample_indices(nnz, spec.f, rng);
                rec.sparse.clear();
                rec.sparse.reserve(nnz);
                for (std::uint32_t idx : indices) {
                    const auto value = static_cast<float>(rng.next_gaussian());
                    rec.sparse.push_back({idx, value});
                    score += w[idx] * value;
                }
            }
        } while (std::abs(score) < spec.margin);
        rec.label = score > 0 ? 1 : -1;
        serialize_record(rec, body);
    }

    std::ofstream out(out_path, std::ios::binary | std::ios::trunc);
    if (!out)
        fail("unwritable path: " + out_path.string());
    const auto head = serialize_header(header);
    out.write(reinterpret_cast<const char*>(head.data()), head.size());
    out.write(reinterpret_cast<const char*>(body.data()),
              static_cast<std::streamsize>(body.size()));
    if (!out)
        fail("unwritable path: " + out_path.string());
}

Dataset::Dataset(const std::filesystem::path& path, IoContext& io) : path_(path) {
    file_ = std::make_unique<PagedFile>(path, io, DatasetHeader::kSerializedSize);
    if (file_->size_bytes() < DatasetHeader::kSerializedSize)
        fail("truncated header");
    header_ = parse_header(file_->raw(0, DatasetHeader::kSerializedSize));
    if (header_.format == DataFormat::Dense &&
        data_bytes() != header_.num_instances * std::uint64_t{header_.dense_record_size()})
        fail("truncated file: dense payload does not match header counts");
}

Record Dataset::read_record(std::uint32_t instance_id, const OffsetEntry& entry) {
    const auto bytes = file_->positioned_read(entry.byte_offset, entry.byte_length);
    return deserialize_record(bytes, header_.format, header_.num_features, instance_id);
}

Record Dataset::read_record_raw(std::uint32_t instance_id, const OffsetEntry& entry) const {
    const auto bytes = file_->raw(entry.byte_offset, entry.byte_length);
    return deserialize_record(bytes, header_.format, header_.num_features, instance_id);
}

RecordScanner::RecordScanner(PagedFile& file, DataFormat format, std::uint32_t num_features,
                             std::uint64_t begin, std::uint64_t end, std::uint64_t count,
                             bool accounted, std::span<const std::uint32_t> ids)
    : file_(&file), format_(format), num_features_(num_features), cursor_(begin), end_(end),
      count_(count), accounted_(accounted), ids_(ids), pulled_(begin) {
    if (end_ > file.size_bytes())
        fail("truncated file: scan region exceeds file size");
}

void RecordScanner::pull_through(std::uint64_t offset_end) {
    if (!accounted_) {
        pulled_ = std::max(pulled_, offset_end);
        return;
    }
    while (pulled_ < offset_end) {
        const std::uint64_t page = file_->page_of(pulled_);
        const std::uint64_t boundary = file_->grid_offset() + (page + 1) * file_->page_size();
        const std::uint64_t chunk_end = std::min(boundary, end_);
        file_->positioned_read(pulled_, chunk_end - pulled_);
        pulled_ = chunk_end;
    }
}

std::optional<OffsetEntry> RecordScanner::next_entry() {
    if (seen_ == count_) {
        if (cursor_ != end_)
            fail("corrupt record length: trailing bytes after last record");
        return std::nullopt;
    }
    if (cursor_ >= end_)
        fail("truncated file: expected more records");
    std::uint64_t length = 0;
    if (format_ == DataFormat::Dense) {
        length = 4 + 4ull * num_features_;
    } else {
        if (cursor_ + 8 > end_)
            fail("truncated record: sparse prefix cut short");
        pull_through(cursor_ + 8);
        std::uint32_t nnz;
        std::memcpy(&nnz, file_->raw(cursor_ + 4, 4).data(), 4);
        length = 8 + 8ull * nnz;
    }
    if (length > std::numeric_limits<std::uint32_t>::max() || cursor_ + length > end_)
        fail("corrupt record length: record overruns file");
    pull_through(cursor_ + length);
    last_ = {cursor_, static_cast<std::uint32_t>(length)};
    cursor_ += length;
    ++seen_;
    return last_;
}

Record RecordScanner::last_record() const {
    const std::uint32_t id = ids_.empty() ? static_cast<std::uint32_t>(seen_ - 1)
                                          : ids_[seen_ - 1];
    return deserialize_record(file_->raw(last_.byte_offset, last_.byte_length), format_,
                              num_features_, id);
}

std::optional<Record> RecordScanner::next() {
    if (!next_entry())
        return std::nullopt;
    return last_record();
}

RecordScanner scan_dataset(Dataset& dataset, bool accounted) {
    const auto& h = dataset.header();
    return RecordScanner(dataset.file(), h.format, h.num_features, dataset.data_begin(),
                         dataset.file().size_bytes(), h.num_instances, accounted);
}

OffsetTable build_offset_table(Dataset& dataset) {
    OffsetTable table;
    table.entries.reserve(dataset.header().num_instances);
    RecordScanner scanner = scan_dataset(dataset, /*accounted=*/true);
    while (auto entry = scanner.next_entry())
        table.entries.push_back(*entry);
    return table;
}

std::vector<Record> load_all_records(const Dataset& dataset) {
    auto& mutable_ds = const_cast<Dataset&>(dataset); // unaccounted scan never mutates
    RecordScanner scanner = scan_dataset(mutable_ds, /*accounted=*/false);
    std::vector<Record> records;
    records.reserve(dataset.header().num_instances);
    while (auto rec = scanner.next())
        records.push_back(std::move(*rec));
    return records;
}

} // namespace shufflebench
