#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <list>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <unordered_set>

namespace shufflebench {

inline constexpr std::uint64_t kDefaultPageSize = 4096;

/// Throughput figures for one storage device. One operation moves one page.
struct DeviceProfile {
    std::string name;
    double seq_read_iops = 0;
    double seq_write_iops = 0;
    double rand_read_iops = 0;
    double rand_write_iops = 0;

    /// All rates positive, random no faster than sequential.
    void validate() const;
};

/// Built-in profiles: "hdd", "ssd", "optane".
DeviceProfile builtin_device(std::string_view name);

/// Plain-text key=value profile file (name, seq_read_iops, seq_write_iops,
/// rand_read_iops, rand_write_iops). '#' starts a comment.
DeviceProfile load_device_profile(const std::filesystem::path& path);

/// Built-in name first, otherwise treated as a profile file path.
DeviceProfile resolve_device(const std::string& name_or_path);

/// Page-granular access counters for one run context.
struct IoStats {
    std::uint64_t pages_read_seq = 0;
    std::uint64_t pages_read_rand = 0;
    std::uint64_t pages_written_seq = 0;
    std::uint64_t pages_written_rand = 0;
    std::uint64_t page_cache_hits = 0;
    std::uint64_t redundant_page_loads = 0; // reloaded after eviction within the epoch
    std::uint64_t read_calls = 0;

    std::uint64_t pages_read_total() const { return pages_read_seq + pages_read_rand; }

    IoStats operator-(const IoStats& rhs) const;
    IoStats& operator+=(const IoStats& rhs);
};

/// Simulated transfer time in seconds under the profile's IOPS figures.
double estimate_time(const IoStats& stats, const DeviceProfile& profile);

enum class AccessClass { Sequential, Random };

/// Sequential iff the page directly follows the previous transfer, or there
/// is no previous transfer yet.
inline AccessClass classify_access(std::optional<std::uint64_t> previous_page,
                                   std::uint64_t page) {
    if (!previous_page || page == *previous_page + 1)
        return AccessClass::Sequential;
    return AccessClass::Random;
}

struct CacheEvent {
    enum class Kind { Hit, Load, Evict };
    Kind kind;
    std::uint64_t key;
};

/// LRU set of resident pages, keyed by (file, page) packed into 64 bits.
class PageCache {
  public:
    explicit PageCache(std::size_t capacity_pages) : capacity_(capacity_pages) {}

    /// Returns true on hit. On miss the key becomes resident, evicting the
    /// least recently used entry if the cache is full.
    bool access(std::uint64_t key);

    bool contains(std::uint64_t key) const { return index_.count(key) != 0; }
    std::size_t size() const { return index_.size(); }
    std::size_t capacity() const { return capacity_; }

    void set_observer(std::function<void(const CacheEvent&)> observer) {
        observer_ = std::move(observer);
    }

  private:
    std::size_t capacity_;
    std::list<std::uint64_t> lru_; // front = most recently used
    std::unordered_map<std::uint64_t, std::list<std::uint64_t>::iterator> index_;
    std::function<void(const CacheEvent&)> observer_;
};

/// Shared per-run state: counters, the simulated page cache, and the
/// per-epoch set of touched pages behind the redundant-load metric.
/// A context must be driven from one thread at a time; the training harness
/// hands it to the loader during an epoch and snapshots stats at boundaries.
class IoContext {
  public:
    explicit IoContext(std::size_t cache_capacity_pages,
                       std::uint64_t page_size = kDefaultPageSize)
        : cache_(cache_capacity_pages), page_size_(page_size) {}

    /// Starts a new epoch for redundancy accounting. Cache contents persist.
    void begin_epoch() { epoch_touched_.clear(); }

    IoStats& stats() { return stats_; }
    const IoStats& stats() const { return stats_; }
    PageCache& cache() { return cache_; }
    std::uint64_t page_size() const { return page_size_; }

    std::uint16_t register_file() { return next_file_id_++; }

    static std::uint64_t page_key(std::uint16_t file_id, std::uint64_t page);

    /// One page touched by a read. Hits count against the cache; misses are
    /// classified against the file's last transferred page.
    void read_page(std::uint16_t file_id, std::uint64_t page,
                   std::optional<std::uint64_t>& cursor, bool random_when_cold);

    void count_page_write(AccessClass cls, std::uint64_t pages = 1);

  private:
    IoStats stats_;
    PageCache cache_;
    std::uint64_t page_size_;
    std::uint16_t next_file_id_ = 0;
    std::unordered_set<std::uint64_t> epoch_touched_;
};

/// Read-only file with page-accounted positioned reads. The page grid is
/// anchored at `grid_offset` so a leading metadata block does not skew
/// alignment of the record region; reads below the grid go through raw().
class PagedFile {
  public:
    enum class FirstAccess { Sequential, Random };

    PagedFile(const std::filesystem::path& path, IoContext& io,
              std::uint64_t grid_offset = 0,
              FirstAccess first_access = FirstAccess::Sequential);
    ~PagedFile();

    PagedFile(const PagedFile&) = delete;
    PagedFile& operator=(const PagedFile&) = delete;

    /// Accounted read: touches every page overlapping [offset, offset+length).
    std::span<const std::byte> positioned_read(std::uint64_t offset, std::uint64_t length);

    /// Unaccounted view of the underlying bytes (metadata, evaluation).
    std::span<const std::byte> raw(std::uint64_t offset, std::uint64_t length) const;

    std::uint64_t size_bytes() const { return size_; }
    std::uint64_t grid_offset() const { return grid_offset_; }
    IoContext& io_context() const { return *io_; }
    std::uint64_t page_size() const;
    std::uint64_t page_of(std::uint64_t offset) const;
    /// Pages covering the region at and above the grid anchor.
    std::uint64_t data_pages() const;
    const std::filesystem::path& path() const { return path_; }

  private:
    std::filesystem::path path_;
    IoContext* io_;
    const std::byte* map_ = nullptr;
    std::uint64_t size_ = 0;
    int fd_ = -1;
    std::uint64_t grid_offset_;
    std::uint16_t file_id_;
    std::optional<std::uint64_t> cursor_; // last transferred page
    bool random_when_cold_;
};

/// Append-only writer that counts one page write per page touched.
class PagedWriter {
  public:
    PagedWriter(const std::filesystem::path& path, IoContext& io,
                AccessClass write_class = AccessClass::Random);
    ~PagedWriter();

    PagedWriter(const PagedWriter&) = delete;
    PagedWriter& operator=(const PagedWriter&) = delete;

    void append(std::span<const std::byte> bytes);
    void close();
    std::uint64_t bytes_written() const { return bytes_written_; }

  private:
    std::filesystem::path path_;
    IoContext* io_;
    AccessClass write_class_;
    std::uint64_t bytes_written_ = 0;
    std::uint64_t pages_counted_ = 0;
    int fd_ = -1;
};

} // namespace shufflebench
