#include "shufflebench/storage_io.hpp"

#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include <fcntl.h>
#include <sys/mman.h>
#include <sys/stat.h>
#include <unistd.h>

namespace shufflebench {

namespace {

[[noreturn]] void fail(const std::string& msg) { throw std::runtime_error(msg); }

std::string trim(std::string_view s) {
    std::size_t b = 0, e = s.size();
    while (b < e && std::isspace(static_cast<unsigned char>(s[b])))
        ++b;
    while (e > b && std::isspace(static_cast<unsigned char>(s[e - 1])))
        --e;
    return std::string(s.substr(b, e - b));
}

} // namespace

void DeviceProfile::validate() const {
    if (seq_read_iops <= 0 || seq_write_iops <= 0 || rand_read_iops <= 0 ||
        rand_write_iops <= 0)
        fail("device profile '" + name + "': all IOPS rates must be positive");
    if (rand_read_iops > seq_read_iops || rand_write_iops > seq_write_iops)
        fail("device profile '" + name + "': random IOPS exceed sequential IOPS");
}

DeviceProfile builtin_device(std::string_view name) {
    if (name == "hdd")
        return {"hdd", 40000, 36000, 600, 300};
    if (name == "ssd")
        return {"ssd", 563000, 230000, 430000, 230000};
    if (name == "optane")
        return {"optane", 614000, 512000, 550000, 500000};
    throw std::invalid_argument("unknown built-in device: " + std::string(name));
}

DeviceProfile load_device_profile(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in)
        fail("cannot open device profile: " + path.string());
    DeviceProfile p;
    bool have[4] = {false, false, false, false};
    std::string line;
    while (std::getline(in, line)) {
        if (auto hash = line.find('#'); hash != std::string::npos)
            line.erase(hash);
        const auto eq = line.find('=');
        if (eq == std::string::npos)
            continue;
        const std::string key = trim(line.substr(0, eq));
        const std::string value = trim(line.substr(eq + 1));
        if (key.empty())
            continue;
        if (key == "name") {
            p.name = value;
            continue;
        }
        double rate = 0;
        try {
            rate = std::stod(value);
        } catch (const std::exception&) {
            fail("device profile " + path.string() + ": bad number for " + key);
        }
        if (key == "seq_read_iops") {
            p.seq_read_iops = rate;
            have[0] = true;
        } else if (key == "seq_write_iops") {
            p.seq_write_iops = rate;
            have[1] = true;
        } else if (key == "rand_read_iops") {
            p.rand_read_iops = rate;
            have[2] = true;
        } else if (key == "rand_write_iops") {
            p.rand_write_iops = rate;
            have[3] = true;
        } else {
            fail("device profile " + path.string() + ": unknown key " + key);
        }
    }
    if (!(have[0] && have[1] && have[2] && have[3]))
        fail("device profile " + path.string() + ": missing IOPS keys");
    if (p.name.empty())
        p.name = path.stem().string();
    p.validate();
    return p;
}

DeviceProfile resolve_device(const std::string& name_or_path) {
    if (name_or_path == "hdd" || name_or_path == "ssd" || name_or_path == "optane")
        return builtin_device(name_or_path);
    return load_device_profile(name_or_path);
}

IoStats IoStats::operator-(const IoStats& rhs) const {
    IoStats d;
    d.pages_read_seq = pages_read_seq - rhs.pages_read_seq;
    d.pages_read_rand = pages_read_rand - rhs.pages_read_rand;
    d.pages_written_seq = pages_written_seq - rhs.pages_written_seq;
    d.pages_written_rand = pages_written_rand - rhs.pages_written_rand;
    d.page_cache_hits = page_cache_hits - rhs.page_cache_hits;
    d.redundant_page_loads = redundant_page_loads - rhs.redundant_page_loads;
    d.read_calls = read_calls - rhs.read_calls;
    return d;
}

IoStats& IoStats::operator+=(const IoStats& rhs) {
    pages_read_seq += rhs.pages_read_seq;
    pages_read_rand += rhs.pages_read_rand;
    pages_written_seq += rhs.pages_written_seq;
    pages_written_rand += rhs.pages_written_rand;
    page_cache_hits += rhs.page_cache_hits;
    redundant_page_loads += rhs.redundant_page_loads;
    read_calls += rhs.read_calls;
    return *this;
}

double estimate_time(const IoStats& stats, const DeviceProfile& profile) {
    profile.validate();
    return static_cast<double>(stats.pages_read_seq) / profile.seq_read_iops +
           static_cast<double>(stats.pages_read_rand) / profile.rand_read_iops +
           static_cast<double>(stats.pages_written_seq) / profile.seq_write_iops +
           static_cast<double>(stats.pages_written_rand) / profile.rand_write_iops;
}

bool PageCache::access(std::uint64_t key) {
    if (auto it = index_.find(key); it != index_.end()) {
        lru_.splice(lru_.begin(), lru_, it->second);
        if (observer_)
            observer_({CacheEvent::Kind::Hit, key});
        return true;
    }
    if (observer_)
        observer_({CacheEvent::Kind::Load, key});
    if (capacity_ == 0)
        return false; // nothing can stay resident
    if (index_.size() >= capacity_) {
        const std::uint64_t victim = lru_.back();
        lru_.pop_back();
        index_.erase(victim);
        if (observer_)
            observer_({CacheEvent::Kind::Evict, victim});
    }
    lru_.push_front(key);
    index_[key] = lru_.begin();
    return false;
}

std::uint64_t IoContext::page_key(std::uint16_t file_id, std::uint64_t page) {
    // 16-bit file id, 48-bit page index
    return (static_cast<std::uint64_t>(file_id) << 48) | (page & 0xffffffffffffull);
}

void IoContext::read_page(std::uint16_t file_id, std::uint64_t page,
                          std::optional<std::uint64_t>& cursor, bool random_when_cold) {
    const std::uint64_t key = page_key(file_id, page);
    if (cache_.access(key)) {
        ++stats_.page_cache_hits;
        epoch_touched_.insert(key);
        return;
    }
    AccessClass cls;
    if (!cursor && random_when_cold)
        cls = AccessClass::Random;
    else
        cls = classify_access(cursor, page);
    if (cls == AccessClass::Sequential)
        ++stats_.pages_read_seq;
    else
        ++stats_.pages_read_rand;
    if (!epoch_touched_.insert(key).second)
        ++stats_.redundant_page_loads;
    cursor = page;
}

void IoContext::count_page_write(AccessClass cls, std::uint64_t pages) {
    if (cls == AccessClass::Sequential)
        stats_.pages_written_seq += pages;
    else
        stats_.pages_written_rand += pages;
}

PagedFile::PagedFile(const std::filesystem::path& path, IoContext& io,
                     std::uint64_t grid_offset, FirstAccess first_access)
    : path_(path), io_(&io), grid_offset_(grid_offset),
      file_id_(io.register_file()),
      random_when_cold_(first_access == FirstAccess::Random) {
    fd_ = ::open(path.c_str(), O_RDONLY);
    if (fd_ < 0)
        fail("cannot open " + path.string() + ": " + std::strerror(errno));
    struct stat st {};
    if (::fstat(fd_, &st) != 0) {
        ::close(fd_);
        fd_ = -1;
        fail("cannot stat " + path.string());
    }
    size_ = static_cast<std::uint64_t>(st.st_size);
    if (size_ > 0) {
        void* m = ::mmap(nullptr, size_, PROT_READ, MAP_PRIVATE, fd_, 0);
        if (m == MAP_FAILED) {
            ::close(fd_);
            fd_ = -1;
            fail("cannot mmap " + path.string());
        }
        map_ = static_cast<const std::byte*>(m);
    }
}

PagedFile::~PagedFile() {
    if (map_)
        ::munmap(const_cast<std::byte*>(map_), size_);
    if (fd_ >= 0)
        ::close(fd_);
}

std::uint64_t PagedFile::page_size() const { return io_->page_size(); }

std::uint64_t PagedFile::page_of(std::uint64_t offset) const {
    if (offset < grid_offset_)
        fail("offset below page grid in " + path_.string());
    return (offset - grid_offset_) / io_->page_size();
}

std::uint64_t PagedFile::data_pages() const {
    if (size_ <= grid_offset_)
        return 0;
    const std::uint64_t data = size_ - grid_offset_;
    return (data + io_->page_size() - 1) / io_->page_size();
}

std::span<const std::byte> PagedFile::positioned_read(std::uint64_t offset,
                                                      std::uint64_t length) {
    if (offset < grid_offset_ || offset + length > size_)
        fail("short read at offset " + std::to_string(offset) + " length " +
             std::to_string(length) + " in " + path_.string());
    ++io_->stats().read_calls;
    if (length > 0) {
        const std::uint64_t first = page_of(offset);
        const std::uint64_t last = page_of(offset + length - 1);
        for (std::uint64_t p = first; p <= last; ++p)
            io_->read_page(file_id_, p, cursor_, random_when_cold_);
    }
    return {map_ + offset, length};
}

std::span<const std::byte> PagedFile::raw(std::uint64_t offset, std::uint64_t length) const {
    if (offset + length > size_)
        fail("short read at offset " + std::to_string(offset) + " length " +
             std::to_string(length) + " in " + path_.string());
    return {map_ + offset, length};
}

PagedWriter::PagedWriter(const std::filesystem::path& path, IoContext& io,
                         AccessClass write_class)
    : path_(path), io_(&io), write_class_(write_class) {
    fd_ = ::open(path.c_str(), O_WRONLY | O_CREAT | O_TRUNC, 0644);
    if (fd_ < 0)
        fail("cannot create " + path.string() + ": " + std::strerror(errno));
}

PagedWriter::~PagedWriter() {
    if (fd_ >= 0)
        ::close(fd_);
}

void PagedWriter::append(std::span<const std::byte> bytes) {
    if (fd_ < 0)
        fail("write to closed file " + path_.string());
    const std::byte* p = bytes.data();
    std::size_t left = bytes.size();
    while (left > 0) {
        const ssize_t n = ::write(fd_, p, left);
        if (n < 0)
            fail("write failed on " + path_.string() + ": " + std::strerror(errno));
        p += n;
        left -= static_cast<std::size_t>(n);
    }
    bytes_written_ += bytes.size();
    const std::uint64_t page_size = io_->page_size();
    const std::uint64_t total_pages = (bytes_written_ + page_size - 1) / page_size;
    if (total_pages > pages_counted_) {
        io_->count_page_write(write_class_, total_pages - pages_counted_);
        pages_counted_ = total_pages;
    }
}

void PagedWriter::close() {
    if (fd_ >= 0) {
        ::close(fd_);
        fd_ = -1;
    }
}

} // namespace shufflebench
