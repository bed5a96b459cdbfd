#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <vector>

#include "shufflebench/storage_io.hpp"

namespace shufflebench {

enum class DataFormat : std::uint8_t { Dense = 0, Sparse = 1 };

/// Fixed 32-byte file header.
/// Layout: magic "SHFBNCH1" (8) | format (1) | num_instances u64 LE (8) |
/// num_features u32 LE (4) | label_width u8 (1) | created_seed u64 LE (8) |
/// zero padding to 32.
struct DatasetHeader {
    DataFormat format = DataFormat::Dense;
    std::uint64_t num_instances = 0;
    std::uint32_t num_features = 0;
    std::uint8_t label_width = 4;
    std::uint64_t created_seed = 0; // 0 when the file came from elsewhere

    static constexpr std::array<char, 8> kMagic = {'S', 'H', 'F', 'B', 'N', 'C', 'H', '1'};
    static constexpr std::uint64_t kSerializedSize = 32;

    /// label + num_features reals; every dense record has this length.
    std::uint32_t dense_record_size() const { return label_width + 4 * num_features; }
};

std::array<std::byte, DatasetHeader::kSerializedSize> serialize_header(const DatasetHeader& h);
DatasetHeader parse_header(std::span<const std::byte> bytes);

struct SparseFeature {
    std::uint32_t index;
    float value;
    bool operator==(const SparseFeature&) const = default;
};

/// One labeled training instance.
/// Dense record: label i32 LE | num_features f32 LE.
/// Sparse record: label i32 LE | nnz u32 LE | nnz x (index u32 LE, value f32 LE),
/// indices strictly increasing.
struct Record {
    std::uint32_t instance_id = 0;
    std::int32_t label = 0; // -1 or +1
    DataFormat format = DataFormat::Dense;
    std::vector<float> dense;
    std::vector<SparseFeature> sparse;

    std::uint32_t serialized_size() const {
        return format == DataFormat::Dense
                   ? 4 + 4 * static_cast<std::uint32_t>(dense.size())
                   : 8 + 8 * static_cast<std::uint32_t>(sparse.size());
    }
    bool same_content(const Record& other) const {
        return label == other.label && format == other.format && dense == other.dense &&
               sparse == other.sparse;
    }
};

void serialize_record(const Record& record, std::vector<std::byte>& out);
Record deserialize_record(std::span<const std::byte> bytes, DataFormat format,
                          std::uint32_t num_features, std::uint32_t instance_id);

/// Byte position and length of every record, indexed by instance id.
struct OffsetEntry {
    std::uint64_t byte_offset;
    std::uint32_t byte_length;
    bool operator==(const OffsetEntry&) const = default;
};

struct OffsetTable {
    std::vector<OffsetEntry> entries;

    std::uint64_t data_begin() const { return entries.empty() ? 0 : entries.front().byte_offset; }
    std::uint64_t data_end() const {
        return entries.empty() ? 0 : entries.back().byte_offset + entries.back().byte_length;
    }
    std::uint64_t data_bytes() const { return data_end() - data_begin(); }
};

/// Sidecar format: per entry, byte_offset u64 LE + byte_length u32 LE.
void save_offset_table(const OffsetTable& table, const std::filesystem::path& path);
OffsetTable load_offset_table(const std::filesystem::path& path);

/// First record starts right after the header; pure arithmetic, no I/O.
inline std::uint64_t dense_offset(std::uint64_t instance_id, std::uint64_t header_size,
                                  std::uint64_t record_size) {
    return header_size + instance_id * record_size;
}

/// Arithmetic offset table for a fixed-length dataset. No I/O.
OffsetTable dense_offset_table(const DatasetHeader& header);

struct SyntheticSpec {
    std::uint64_t n = 1;
    std::uint32_t f = 1;
    DataFormat format = DataFormat::Dense;
    std::optional<std::uint32_t> nnz_per_record; // Sparse: nnz drawn from [1, this]
    double margin = 0.1;
    std::uint64_t seed = 0;
};

/// Writes a linearly separable two-class dataset: a random unit vector w*
/// labels each point by sign(w*.x); points are resampled until |w*.x| is at
/// least the margin. Output bytes are a pure function of the spec.
void generate_synthetic(const SyntheticSpec& spec, const std::filesystem::path& out);

/// An open dataset file: parsed header plus a page-accounted file whose page
/// grid is anchored at the start of the record region.
class Dataset {
  public:
    Dataset(const std::filesystem::path& path, IoContext& io);

    const DatasetHeader& header() const { return header_; }
    PagedFile& file() { return *file_; }
    const PagedFile& file() const { return *file_; }
    const std::filesystem::path& path() const { return path_; }

    std::uint64_t data_begin() const { return DatasetHeader::kSerializedSize; }
    std::uint64_t data_bytes() const { return file_->size_bytes() - data_begin(); }

    /// Exactly one accounted positioned read of entry.byte_length bytes.
    Record read_record(std::uint32_t instance_id, const OffsetEntry& entry);
    /// Same record through an unaccounted read.
    Record read_record_raw(std::uint32_t instance_id, const OffsetEntry& entry) const;

  private:
    std::filesystem::path path_;
    std::unique_ptr<PagedFile> file_;
    DatasetHeader header_;
};

/// Forward scan over a record region, pulling pages in order. With
/// accounting enabled every data page is transferred exactly once, all
/// classified sequential on a cold cache.
class RecordScanner {
  public:
    /// Scans `count` records of the dataset's format in [begin, end) of
    /// `file`. Instance ids are assigned from `ids` when given, else 0..count-1.
    RecordScanner(PagedFile& file, DataFormat format, std::uint32_t num_features,
                  std::uint64_t begin, std::uint64_t end, std::uint64_t count,
                  bool accounted = true, std::span<const std::uint32_t> ids = {});

    /// Offset/length of the next record without materializing it.
    std::optional<OffsetEntry> next_entry();
    /// Deserializes the record produced by the last next_entry().
    Record last_record() const;
    /// next_entry + last_record.
    std::optional<Record> next();

    std::uint64_t records_seen() const { return seen_; }

  private:
    void pull_through(std::uint64_t offset_end);

    PagedFile* file_;
    DataFormat format_;
    std::uint32_t num_features_;
    std::uint64_t cursor_;
    std::uint64_t end_;
    std::uint64_t count_;
    bool accounted_;
    std::span<const std::uint32_t> ids_;
    std::uint64_t seen_ = 0;
    std::uint64_t pulled_ = 0; // accounted frontier
    OffsetEntry last_{0, 0};
};

/// Scans all records of an open dataset in file order.
RecordScanner scan_dataset(Dataset& dataset, bool accounted = true);

/// One sequential accounted pass recording every record's offset and length.
OffsetTable build_offset_table(Dataset& dataset);

/// Unaccounted snapshot of every record, for objective evaluation and
/// reference solves.
std::vector<Record> load_all_records(const Dataset& dataset);

} // namespace shufflebench
