#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <vector>

#include "shufflebench/dataset.hpp"
#include "shufflebench/rng.hpp"

namespace shufflebench {

enum class Strategy { NoShuffle, BoundedQueue, BlockMinimization, LirsInstance, LirsPage };

std::string_view strategy_name(Strategy s);
Strategy parse_strategy(std::string_view name); // none|queue|bmf|lirs-instance|lirs-page

struct StrategyConfig {
    Strategy strategy = Strategy::LirsInstance;
    std::uint32_t batch_count = 1;
    std::uint32_t queue_size = 1;                // BoundedQueue only
    std::uint64_t page_size = kDefaultPageSize;  // LirsPage only
    std::uint64_t seed = 0;

    void validate() const;
};

/// Minimum shuffling unit: a single instance, or all instances whose record
/// starts within one page.
struct ShuffleUnit {
    enum class Kind { Instance, Page };
    Kind kind;
    std::uint64_t page_id;              // Instance units: the instance id
    std::vector<std::uint32_t> members; // ascending, nonempty
};

/// The per-epoch assignment of instances to batches. Concatenating all
/// batches yields each instance id exactly once.
struct EpochPlan {
    std::uint32_t epoch = 0;
    Strategy strategy = Strategy::NoShuffle;
    std::uint64_t seed = 0;
    std::vector<std::vector<std::uint32_t>> batches;

    std::uint64_t total_instances() const;
};

/// Splits an ordering into b contiguous batches; when b does not divide the
/// count, the first (count mod b) batches carry one extra element.
std::vector<std::vector<std::uint32_t>> slice_into_batches(
    const std::vector<std::uint32_t>& order, std::uint32_t b);

/// Identity order: batches are consecutive slices of 0..n-1, same every epoch.
EpochPlan plan_no_shuffle(std::uint32_t n, std::uint32_t b, std::uint32_t epoch);

/// Fresh uniform permutation per epoch, split into b contiguous slices.
EpochPlan plan_lirs_instance(std::uint32_t n, std::uint32_t b, std::uint32_t epoch,
                             std::uint64_t seed);

/// Groups instances by the page (relative to grid_offset) holding the first
/// byte of their record. Units come out in ascending page order.
std::vector<ShuffleUnit> page_units(const OffsetTable& table, std::uint64_t page_size,
                                    std::uint64_t grid_offset);

/// Permutes shuffle units and deals them round-robin into b batches; a unit's
/// members stay adjacent inside their batch. Falls back to instance units
/// when the average record length is at least page_size.
EpochPlan plan_lirs_page(const OffsetTable& table, std::uint64_t page_size,
                         std::uint64_t grid_offset, std::uint32_t b, std::uint32_t epoch,
                         std::uint64_t seed);

/// Product of the one-time split: batch files on disk plus the fixed
/// instance membership of every batch (stored order = file order).
struct BmfSplit {
    std::vector<std::filesystem::path> batch_files;
    std::vector<std::vector<std::uint32_t>> membership;
    std::uint64_t num_instances = 0;
};

/// Sequentially reads the dataset and appends every record to a uniformly
/// chosen batch file. Reads count as sequential pages, writes as random
/// pages, through the dataset's I/O context.
BmfSplit bmf_initial_split(Dataset& dataset, std::uint32_t b, std::uint64_t seed,
                           const std::filesystem::path& scratch_dir);

/// Per-epoch order in which the fixed batches are visited.
std::vector<std::uint32_t> bmf_epoch_order(std::uint32_t b, std::uint32_t epoch,
                                           std::uint64_t seed);

/// Batch membership is frozen at split time; only the batch order changes
/// across epochs.
EpochPlan plan_bmf(const BmfSplit& split, std::uint32_t epoch, std::uint64_t seed);

/// Streaming shuffle through a buffer of at most q elements: emit a uniform
/// draw from the buffer, then refill one element from the input. q=1 is a
/// pass-through. Every element lands at output position >= input position - (q-1).
std::vector<std::uint32_t> queue_shuffle_order(std::uint32_t n, std::uint32_t q,
                                               SplitMix64& rng);

EpochPlan plan_bounded_queue(std::uint32_t n, std::uint32_t b, std::uint32_t q,
                             std::uint32_t epoch, std::uint64_t seed);

/// Line-oriented dump: one "epoch,batch_index,instance_id" triple per line.
std::string dump_plan(const EpochPlan& plan);

/// In-memory footprint of the per-epoch assignment table: one id per instance.
std::uint64_t assignment_table_bytes(std::uint64_t n, std::uint32_t id_bytes = 8);

/// Offset-table footprint; fixed-length datasets need no table at all.
std::uint64_t offset_table_bytes(std::uint64_t n, DataFormat format,
                                 std::uint32_t entry_bytes = 8);

} // namespace shufflebench
