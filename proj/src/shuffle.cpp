#include "shufflebench/shuffle.hpp"

#include <numeric>
#include <stdexcept>

namespace shufflebench {

std::string_view strategy_name(Strategy s) {
    switch (s) {
    case Strategy::NoShuffle:
        return "none";
    case Strategy::BoundedQueue:
        return "queue";
    case Strategy::BlockMinimization:
        return "bmf";
    case Strategy::LirsInstance:
        return "lirs-instance";
    case Strategy::LirsPage:
        return "lirs-page";
    }
    return "?";
}

Strategy parse_strategy(std::string_view name) {
    if (name == "none")
        return Strategy::NoShuffle;
    if (name == "queue")
        return Strategy::BoundedQueue;
    if (name == "bmf")
        return Strategy::BlockMinimization;
    if (name == "lirs-instance")
        return Strategy::LirsInstance;
    if (name == "lirs-page")
        return Strategy::LirsPage;
    throw std::invalid_argument("unknown strategy: " + std::string(name));
}

void StrategyConfig::validate() const {
    if (batch_count < 1)
        throw std::invalid_argument("batch_count must be at least 1");
    if (strategy == Strategy::BoundedQueue && queue_size < 1)
        throw std::invalid_argument("queue_size must be at least 1");
    if (page_size == 0)
        throw std::invalid_argument("page_size must be positive");
    if (strategy == Strategy::LirsPage && (page_size & (page_size - 1)) != 0)
        throw std::invalid_argument("page_size must be a power of two");
}

std::uint64_t EpochPlan::total_instances() const {
    std::uint64_t n = 0;
    for (const auto& b : batches)
        n += b.size();
    return n;
}

std::vector<std::vector<std::uint32_t>> slice_into_batches(
    const std::vector<std::uint32_t>& order, std::uint32_t b) {
    const std::size_t n = order.size();
    if (b < 1 || b > std::max<std::size_t>(n, 1))
        throw std::invalid_argument("batch count out of range");
    std::vector<std::vector<std::uint32_t>> batches(b);
    const std::size_t base = n / b;
    const std::size_t extra = n % b;
    std::size_t at = 0;
    for (std::uint32_t i = 0; i < b; ++i) {
        const std::size_t take = base + (i < extra ? 1 : 0);
        batches[i].assign(order.begin() + at, order.begin() + at + take);
        at += take;
    }
    return batches;
}

EpochPlan plan_no_shuffle(std::uint32_t n, std::uint32_t b, std::uint32_t epoch) {
    std::vector<std::uint32_t> order(n);
    std::iota(order.begin(), order.end(), 0u);
    EpochPlan plan{epoch, Strategy::NoShuffle, 0, slice_into_batches(order, b)};
    return plan;
}

EpochPlan plan_lirs_instance(std::uint32_t n, std::uint32_t b, std::uint32_t epoch,
                             std::uint64_t seed) {
    if (b > n)
        throw std::invalid_argument("batch count exceeds instance count");
    SplitMix64 rng = stream_for(seed, RngStream::Plan, epoch);
    EpochPlan plan{epoch, Strategy::LirsInstance, seed,
                   slice_into_batches(fisher_yates(n, rng), b)};
    return plan;
}

std::vector<ShuffleUnit> page_units(const OffsetTable& table, std::uint64_t page_size,
                                    std::uint64_t grid_offset) {
    std::vector<ShuffleUnit> units;
    for (std::uint32_t id = 0; id < table.entries.size(); ++id) {
        const auto& e = table.entries[id];
        if (e.byte_offset < grid_offset)
            throw std::invalid_argument("offset table entry below page grid");
        const std::uint64_t page = (e.byte_offset - grid_offset) / page_size;
        if (units.empty() || units.back().page_id != page)
            units.push_back({ShuffleUnit::Kind::Page, page, {}});
        units.back().members.push_back(id);
    }
    return units;
}

EpochPlan plan_lirs_page(const OffsetTable& table, std::uint64_t page_size,
                         std::uint64_t grid_offset, std::uint32_t b, std::uint32_t epoch,
                         std::uint64_t seed) {
    const std::uint64_t n = table.entries.size();
    if (n == 0)
        throw std::invalid_argument("empty offset table");
    std::vector<ShuffleUnit> units;
    if (table.data_bytes() / n >= page_size) {
        // Records at least a page long: the instance is the shuffling unit.
        units.reserve(n);
        for (std::uint32_t id = 0; id < n; ++id)
            units.push_back({ShuffleUnit::Kind::Instance, id, {id}});
    } else {
        units = page_units(table, page_size, grid_offset);
    }
    if (b > units.size())
        throw std::invalid_argument("batch count exceeds shuffle unit count");

    std::vector<std::uint32_t> unit_order(units.size());
    std::iota(unit_order.begin(), unit_order.end(), 0u);
    SplitMix64 rng = stream_for(seed, RngStream::Plan, epoch);
    fisher_yates_shuffle(std::span<std::uint32_t>(unit_order), rng);

    EpochPlan plan{epoch, Strategy::LirsPage, seed, {}};
    plan.batches.resize(b);
    for (std::size_t k = 0; k < unit_order.size(); ++k) {
        auto& batch = plan.batches[k % b];
        const auto& members = units[unit_order[k]].members;
        batch.insert(batch.end(), members.begin(), members.end());
    }
    return plan;
}

BmfSplit bmf_initial_split(Dataset& dataset, std::uint32_t b, std::uint64_t seed,
                           const std::filesystem::path& scratch_dir) {
    if (b < 1)
        throw std::invalid_argument("batch count must be at least 1");
    std::filesystem::create_directories(scratch_dir);

    BmfSplit split;
    split.num_instances = dataset.header().num_instances;
    split.membership.resize(b);
    split.batch_files.reserve(b);

    // Writers account into the same context as the dataset reads.
    IoContext& io = dataset.file().io_context();

    std::vector<std::unique_ptr<PagedWriter>> writers;
    writers.reserve(b);
    for (std::uint32_t k = 0; k < b; ++k) {
        auto path = scratch_dir / ("batch_" + std::to_string(k) + ".shfb");
        writers.push_back(std::make_unique<PagedWriter>(path, io, AccessClass::Random));
        split.batch_files.push_back(std::move(path));
    }

    SplitMix64 rng = stream_for(seed, RngStream::Split);
    RecordScanner scanner = scan_dataset(dataset, /*accounted=*/true);
    std::vector<std::byte> buf;
    std::uint32_t id = 0;
    while (auto rec = scanner.next()) {
        const auto k = static_cast<std::uint32_t>(rng.next_below(b));
        buf.clear();
        serialize_record(*rec, buf);
        writers[k]->append(buf);
        split.membership[k].push_back(id);
        ++id;
    }
    for (auto& w : writers)
        w->close();
    return split;
}

std::vector<std::uint32_t> bmf_epoch_order(std::uint32_t b, std::uint32_t epoch,
                                           std::uint64_t seed) {
    SplitMix64 rng = stream_for(seed, RngStream::Plan, epoch);
    return fisher_yates(b, rng);
}

EpochPlan plan_bmf(const BmfSplit& split, std::uint32_t epoch, std::uint64_t seed) {
    if (split.membership.empty())
        throw std::invalid_argument("missing initial assignment: run bmf_initial_split first");
    const auto b = static_cast<std::uint32_t>(split.membership.size());
    EpochPlan plan{epoch, Strategy::BlockMinimization, seed, {}};
    plan.batches.reserve(b);
    for (std::uint32_t k : bmf_epoch_order(b, epoch, seed))
        plan.batches.push_back(split.membership[k]);
    return plan;
}

std::vector<std::uint32_t> queue_shuffle_order(std::uint32_t n, std::uint32_t q,
                                               SplitMix64& rng) {
    if (q < 1)
        throw std::invalid_argument("queue size must be at least 1");
    std::vector<std::uint32_t> out;
    out.reserve(n);
    std::vector<std::uint32_t> buffer;
    buffer.reserve(std::min(n, q));
    std::uint32_t next = 0;
    while (next < n && buffer.size() < q)
        buffer.push_back(next++);
    while (!buffer.empty()) {
        const auto j = static_cast<std::size_t>(rng.next_below(buffer.size()));
        out.push_back(buffer[j]);
        buffer[j] = buffer.back();
        buffer.pop_back();
        if (next < n)
            buffer.push_back(next++);
    }
    return out;
}

EpochPlan plan_bounded_queue(std::uint32_t n, std::uint32_t b, std::uint32_t q,
                             std::uint32_t epoch, std::uint64_t seed) {
    SplitMix64 rng = stream_for(seed, RngStream::Queue, epoch);
    EpochPlan plan{epoch, Strategy::BoundedQueue, seed,
                   slice_into_batches(queue_shuffle_order(n, q, rng), b)};
    return plan;
}

std::string dump_plan(const EpochPlan& plan) {
    std::string out;
    for (std::size_t k = 0; k < plan.batches.size(); ++k)
        for (std::uint32_t id : plan.batches[k])
            out += std::to_string(plan.epoch) + "," + std::to_string(k) + "," +
                   std::to_string(id) + "\n";
    return out;
}

std::uint64_t assignment_table_bytes(std::uint64_t n, std::uint32_t id_bytes) {
    return n * id_bytes;
}

std::uint64_t offset_table_bytes(std::uint64_t n, DataFormat format, std::uint32_t entry_bytes) {
    return format == DataFormat::Sparse ? n * entry_bytes : 0;
}

} // namespace shufflebench
